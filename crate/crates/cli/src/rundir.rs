//! Layout of a simulated run directory and conversions to library types.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spatial_lfdr::fieldsim::{Field, PValueSet};
use spatial_lfdr::grid::{SensorLayout, SpatialGrid};
use spatial_lfdr::harness::SimulatedRun;

use crate::error::{CliError, CliResult};
use crate::files::{num, read_json, CsvOut, Meta, Table};

pub const PVALUES: &str = "pvalues.csv";
pub const TRUTH: &str = "truth.json";
pub const LAYOUT: &str = "layout.json";

pub const PVALUE_HEADER: [&str; 5] = ["sensor_index", "x", "y", "T", "p"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub width: usize,
    pub height: usize,
    pub pi0: f64,
    #[serde(flatten)]
    pub field: Field,
}

pub fn run_dir_name(run: usize) -> String {
    format!("run-{run:03}")
}

pub fn write_pvalues(path: &Path, meta: &Meta, pv: &PValueSet) -> CliResult<()> {
    let mut out = CsvOut::create(path, meta, &PVALUE_HEADER)?;
    for i in 0..pv.len() {
        out.row([
            pv.sensor_indices[i].to_string(),
            num(pv.coords[i][0]),
            num(pv.coords[i][1]),
            pv.samples[i].to_string(),
            num(pv.pvals[i]),
        ])?;
    }
    out.finish()
}

/// P-values with full provenance; every column of [`PVALUE_HEADER`] is required.
pub fn pvalues_from_table(t: &Table) -> CliResult<PValueSet> {
    let sensor_indices = t.column::<usize>("sensor_index")?;
    let x = t.column::<f64>("x")?;
    let y = t.column::<f64>("y")?;
    let samples = t.column::<usize>("T")?;
    let pvals = t.column::<f64>("p")?;
    let pv = PValueSet {
        sensor_indices,
        coords: x.into_iter().zip(y).map(|(a, b)| [a, b]).collect(),
        samples,
        pvals,
        z: None,
    };
    pv.validate()?;
    Ok(pv)
}

/// A simulated run read back from disk.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub meta: Meta,
    pub sim: SimulatedRun,
}

pub fn load_run(dir: &Path) -> CliResult<LoadedRun> {
    let (meta, truth): (Meta, TruthFile) = read_json(&dir.join(TRUTH))?;
    let (layout_meta, layout): (Meta, SensorLayout) = read_json(&dir.join(LAYOUT))?;
    let table = Table::read(&dir.join(PVALUES))?;
    let pvalues = pvalues_from_table(&table)?;
    let inconsistent = |what: &str| {
        CliError::Invalid(format!(
            "{}: {what} disagree within the run directory",
            dir.display()
        ))
    };
    if layout_meta.config_hash != meta.config_hash
        || table
            .meta
            .as_ref()
            .is_some_and(|m| m.config_hash != meta.config_hash)
    {
        return Err(inconsistent("config hashes"));
    }
    let grid = SpatialGrid::new(truth.width, truth.height)?;
    if layout.width != grid.width
        || layout.height != grid.height
        || truth.field.truth.len() != grid.len()
    {
        return Err(inconsistent("grid dimensions"));
    }
    if pvalues.sensor_indices != layout.sensor_indices {
        return Err(inconsistent("sensor lists of pvalues.csv and layout.json"));
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        meta,
        sim: SimulatedRun {
            grid,
            field: truth.field,
            layout,
            pvalues,
        },
    })
}

/// Run directories named on the command line: either run directories
/// themselves or parents holding `run-*` subdirectories.
pub fn expand_run_dirs(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(TRUTH).is_file() {
            out.push(p.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| CliError::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|s| s.join(TRUTH).is_file())
            .collect();
        if subs.is_empty() {
            return Err(CliError::Invalid(format!(
                "{}: no run directories found",
                p.display()
            )));
        }
        subs.sort();
        out.extend(subs);
    }
    Ok(out)
}
