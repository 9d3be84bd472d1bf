//! File formats shared by the subcommands.
//!
//! CSV files start with a `# config_hash=<hex> seed=<n> run=<n>` comment
//! line, JSON files carry the same keys at top level and PGM rasters hold
//! them as a header comment.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use csv::StringRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Reproducibility stamp written into every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<usize>,
}

impl Meta {
    fn comment(&self) -> String {
        match self.run {
            Some(r) => format!(
                "config_hash={} seed={} run={r}",
                self.config_hash, self.seed
            ),
            None => format!("config_hash={} seed={}", self.config_hash, self.seed),
        }
    }

    fn parse_comment(line: &str) -> Option<Meta> {
        let mut hash = None;
        let mut seed = None;
        let mut run = None;
        for kv in line.split_whitespace() {
            match kv.split_once('=')? {
                ("config_hash", v) => hash = Some(v.to_string()),
                ("seed", v) => seed = v.parse().ok(),
                ("run", v) => run = v.parse().ok(),
                _ => {}
            }
        }
        Some(Meta {
            config_hash: hash?,
            seed: seed?,
            run,
        })
    }
}

/// SHA-256 of the compact JSON form of `value`, hex encoded.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("configuration serializes to JSON");
    format!("{:x}", Sha256::digest(json.as_bytes()))
}

/// Hash of a stage applied on top of an upstream hash.
pub fn chain_hash<T: Serialize>(upstream: &str, stage: &T) -> String {
    config_hash(&(upstream, stage))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    #[serde(flatten)]
    meta: &'a Meta,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Deserialize)]
struct StampedOwned<T> {
    #[serde(flatten)]
    meta: Meta,
    #[serde(flatten)]
    body: T,
}

pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, body: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &Stamped { meta, body })
        .map_err(|e| CliError::io(path, e.into()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<(Meta, T)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let s: StampedOwned<T> = serde_json::from_str(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    Ok((s.meta, s.body))
}

/// Plain JSON without a stamp, for configuration files.
pub fn read_plain_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

/// A stamped CSV file being written.
pub struct CsvOut {
    path: std::path::PathBuf,
    w: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, meta: &Meta, header: &[&str]) -> CliResult<Self> {
        let mut f = create(path)?;
        writeln!(f, "# {}", meta.comment()).map_err(|e| CliError::io(path, e))?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(header)
            .map_err(|e| CliError::io(path, e.into()))?;
        Ok(CsvOut {
            path: path.to_path_buf(),
            w,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w
            .write_record(fields)
            .map_err(|e| CliError::io(&self.path, e.into()))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.w.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

/// A CSV file read into memory, with its stamp if it has one.
pub struct Table {
    pub path: String,
    pub meta: Option<Meta>,
    headers: Vec<String>,
    rows: Vec<(u64, StringRecord)>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Table> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let name = path.display().to_string();
        let meta = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .find_map(|l| Meta::parse_comment(l.trim_start_matches('#')));
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| CliError::Parse(format!("{name}: {}", csv_message(&e))))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Parse(format!("{name}: {}", csv_message(&e))))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table {
            path: name,
            meta,
            headers,
            rows,
        })
    }

    pub fn has(&self, column: &str) -> bool {
        self.headers.iter().any(|h| h == column)
    }

    fn index(&self, column: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| CliError::Parse(format!("{}: missing column `{column}`", self.path)))
    }

    /// Parses every cell of a column, naming the line of the first bad one.
    pub fn column<T: std::str::FromStr>(&self, column: &str) -> CliResult<Vec<T>> {
        let i = self.index(column)?;
        self.rows
            .iter()
            .map(|(line, rec)| {
                let cell = rec.get(i).unwrap_or("");
                cell.parse().map_err(|_| {
                    CliError::Parse(format!(
                        "{}: line {line}, column `{column}`: cannot parse {cell:?}",
                        self.path
                    ))
                })
            })
            .collect()
    }

    pub fn optional_column<T: std::str::FromStr>(&self, column: &str) -> CliResult<Option<Vec<T>>> {
        if self.has(column) {
            self.column(column).map(Some)
        } else {
            Ok(None)
        }
    }
}

fn csv_message(e: &csv::Error) -> String {
    match e.position() {
        Some(p) => format!("line {}: {e}", p.line()),
        None => e.to_string(),
    }
}

/// 8-bit binary PGM, row `y = 0` first.
pub fn write_pgm(
    path: &Path,
    meta: &Meta,
    width: usize,
    height: usize,
    pixels: &[u8],
) -> CliResult<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    write!(w, "P5\n# {}\n{width} {height}\n255\n", meta.comment()).map_err(io)?;
    w.write_all(pixels).map_err(io)?;
    w.flush().map_err(io)
}

/// Shortest representation that parses back to the same value, in
/// scientific notation for very small or large magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
