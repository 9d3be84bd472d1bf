use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use spatial_lfdr::decide::{bfdr_select, bh_procedure, score};
use spatial_lfdr::fieldsim::Scenario;
use spatial_lfdr::grid::{SensorLayout, SpatialGrid};
use spatial_lfdr::harness::{
    evaluate_simulated, monte_carlo_harness, simulate_run, summarize, Evaluation, FieldModel,
    HarnessConfig, Method, NetworkConfig, RunSeeds,
};
use spatial_lfdr::interp::{interpolate_lfdr_field, tps_eval, tps_fit};
use spatial_lfdr::lfdr::{lfdr_bum, lfdr_smom, lfdr_smom_spatial, FitConfig};
use spatial_lfdr::oracle::oracle_lfdrs;
use spatial_lfdr::smom::PartitionMode;
use spatial_lfdr::stats::{beta_moments, BetaMixtureModel, DistanceKind};

use crate::error::{CliError, CliResult};
use crate::files::{
    chain_hash, config_hash, create_dir, num, read_json, read_plain_json, write_json, write_pgm,
    CsvOut, Meta, Table,
};
use crate::rundir::{
    expand_run_dirs, load_run, pvalues_from_table, run_dir_name, write_pvalues, LoadedRun,
    TruthFile, LAYOUT, PVALUES, TRUTH,
};
use crate::{
    DecideArgs, DecideMethod, FitArgs, FitMethod, InterpolateArgs, ReportArgs, SimulateArgs,
};

const CUSTOM: &str = "custom";

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

/// Upstream hash of an input file, or a fixed tag for unstamped external data.
fn upstream_hash(meta: &Option<Meta>) -> String {
    meta.as_ref()
        .map_or_else(|| "external".to_string(), |m| m.config_hash.clone())
}

fn simulate_config(a: &SimulateArgs) -> CliResult<HarnessConfig> {
    let from_file = a.config_file.is_some();
    let mut cfg = match &a.config_file {
        Some(p) => read_plain_json::<HarnessConfig>(p)?,
        None => HarnessConfig::new(Scenario::B, NetworkConfig::Uniform),
    };
    match a.scenario.as_deref() {
        Some(CUSTOM) if !from_file => return Err(invalid("--scenario custom needs --config-file")),
        Some(CUSTOM) if !matches!(cfg.field, FieldModel::Custom(_)) => {
            return Err(invalid(
                "--scenario custom, but the config file names a preset scenario",
            ))
        }
        Some(CUSTOM) | None => {}
        Some(s) => {
            let sc = Scenario::parse(s).ok_or_else(|| {
                invalid(format!(
                    "unknown scenario {s:?}; expected A, B, C or custom"
                ))
            })?;
            cfg.field = FieldModel::Preset(sc);
        }
    }
    match a.config.as_deref() {
        Some(CUSTOM) if !from_file => return Err(invalid("--config custom needs --config-file")),
        Some(CUSTOM) if !matches!(cfg.network, NetworkConfig::Custom(_)) => {
            return Err(invalid(
                "--config custom, but the config file names a preset network",
            ))
        }
        Some(CUSTOM) | None => {}
        Some(s) => {
            cfg.network = NetworkConfig::parse(s).ok_or_else(|| {
                invalid(format!(
                    "unknown network config {s:?}; expected 1, 2, 3 or custom"
                ))
            })?;
        }
    }
    cfg.width = a.width.unwrap_or(cfg.width);
    cfg.height = a.height.unwrap_or(cfg.height);
    cfg.n_runs = a.n_runs.unwrap_or(cfg.n_runs);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    Ok(cfg)
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let cfg = simulate_config(a)?;
    // runs of one configuration share a hash; the seed is stamped separately
    let hash = config_hash(&(&cfg.field, &cfg.network, cfg.width, cfg.height));
    create_dir(&a.out)?;
    write_json(
        &a.out.join("config.json"),
        &Meta {
            config_hash: hash.clone(),
            seed: cfg.seed,
            run: None,
        },
        &cfg,
    )?;
    (0..cfg.n_runs)
        .into_par_iter()
        .try_for_each(|run| -> CliResult<()> {
            let sim = simulate_run(&cfg, run)?;
            let dir = a.out.join(run_dir_name(run));
            create_dir(&dir)?;
            let meta = Meta {
                config_hash: hash.clone(),
                seed: cfg.seed,
                run: Some(run),
            };
            write_pvalues(&dir.join(PVALUES), &meta, &sim.pvalues)?;
            let truth = TruthFile {
                width: cfg.width,
                height: cfg.height,
                pi0: sim.field.truth.pi0(),
                field: sim.field,
            };
            write_json(&dir.join(TRUTH), &meta, &truth)?;
            write_json(&dir.join(LAYOUT), &meta, &sim.layout)
        })?;
    println!(
        "simulated {} run(s) into {} (config hash {hash})",
        cfg.n_runs,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
enum ModelFile {
    Smom {
        pi0_hat: f64,
        model: BetaMixtureModel,
        chosen_d: usize,
        chosen_k: usize,
        distance: DistanceKind,
        fit_distance: f64,
        warnings: Vec<String>,
    },
    Bum {
        pi0_hat: f64,
        model: BumParams,
        log_likelihood: f64,
        converged: bool,
        warnings: Vec<String>,
    },
    Oracle {
        pi0_sensors: f64,
    },
}

#[derive(Serialize)]
struct BumParams {
    w: f64,
    a: f64,
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let t = Table::read(&a.input)?;
    let p: Vec<f64> = t.column("p")?;
    let n = p.len();
    let sensor_index: Vec<usize> = t
        .optional_column("sensor_index")?
        .unwrap_or_else(|| (0..n).collect());
    let coords: Option<Vec<[f64; 2]>> = match (
        t.optional_column::<f64>("x")?,
        t.optional_column::<f64>("y")?,
    ) {
        (Some(x), Some(y)) => Some(x.into_iter().zip(y).map(|(a, b)| [a, b]).collect()),
        _ => None,
    };
    let seed = a.seed.unwrap_or_else(|| {
        t.meta
            .as_ref()
            .map_or(0, |m| RunSeeds::new(m.seed, m.run.unwrap_or(0)).fit)
    });

    let (lfdrs, body, log, stage_hash) = match a.method {
        FitMethod::Smom => {
            let cfg = match &a.fit_config {
                Some(path) => read_plain_json::<FitConfig>(path)?,
                None if coords.is_some() => FitConfig::spatial(),
                None => FitConfig::default(),
            }
            .with_seed(seed);
            let r = match &coords {
                Some(c) if cfg.partition == PartitionMode::Proximity => {
                    lfdr_smom_spatial(&p, c, &cfg)?
                }
                _ => lfdr_smom(&p, &cfg)?,
            };
            let log = format!(
                "method=smom d={} K={} distance={:?} value={} pi0_hat={} seed={seed}",
                r.chosen_d, r.chosen_k, cfg.distance, r.fit_distance, r.pi0_hat
            );
            let hash = chain_hash(&upstream_hash(&t.meta), &("smom", &cfg));
            let body = ModelFile::Smom {
                pi0_hat: r.pi0_hat,
                model: r.model,
                chosen_d: r.chosen_d,
                chosen_k: r.chosen_k,
                distance: cfg.distance,
                fit_distance: r.fit_distance,
                warnings: r.warnings,
            };
            (r.lfdrs, body, log, hash)
        }
        FitMethod::Bum => {
            let (f, r) = lfdr_bum(&p)?;
            let log = format!(
                "method=bum w={} a={} pi0_hat={} converged={}",
                f.w, f.a, r.pi0_hat, f.converged
            );
            let body = ModelFile::Bum {
                pi0_hat: r.pi0_hat,
                model: BumParams { w: f.w, a: f.a },
                log_likelihood: f.log_likelihood,
                converged: f.converged,
                warnings: r.warnings,
            };
            (
                r.lfdrs,
                body,
                log,
                chain_hash(&upstream_hash(&t.meta), &"bum"),
            )
        }
        FitMethod::Oracle => {
            let path = a
                .truth
                .as_ref()
                .ok_or_else(|| invalid("--method oracle needs --truth"))?;
            let (_, truth): (Meta, TruthFile) = read_json(path)?;
            let pv = pvalues_from_table(&t)?;
            if pv
                .sensor_indices
                .iter()
                .any(|&i| i >= truth.field.truth.len())
            {
                return Err(invalid("sensor indices exceed the grid of the truth file"));
            }
            let lfdrs = oracle_lfdrs(&pv, &truth.field.levels(), truth.field.noise_power)?;
            let pi0 = truth.field.truth.restrict(&pv.sensor_indices).pi0();
            let log = format!("method=oracle pi0_sensors={pi0}");
            (
                lfdrs,
                ModelFile::Oracle { pi0_sensors: pi0 },
                log,
                chain_hash(&upstream_hash(&t.meta), &"oracle"),
            )
        }
    };

    create_dir(&a.out)?;
    let meta = Meta {
        config_hash: stage_hash,
        seed,
        run: t.meta.as_ref().and_then(|m| m.run),
    };
    let mut out = CsvOut::create(
        &a.out.join("lfdr.csv"),
        &meta,
        &["sensor_index", "x", "y", "p", "lfdr"],
    )?;
    for i in 0..n {
        let (x, y) = coords.as_ref().map_or((String::new(), String::new()), |c| {
            (num(c[i][0]), num(c[i][1]))
        });
        out.row([sensor_index[i].to_string(), x, y, num(p[i]), num(lfdrs[i])])?;
    }
    out.finish()?;
    write_json(&a.out.join("model.json"), &meta, &body)?;
    let log_path = a.out.join("fit.log");
    std::fs::write(&log_path, format!("{log}\n")).map_err(|e| CliError::io(&log_path, e))?;
    println!("{log}");
    Ok(())
}

pub fn decide(a: &DecideArgs) -> CliResult<()> {
    let t = Table::read(&a.input)?;
    let values: Vec<f64> = match a.method {
        DecideMethod::Bfdr => t.column("lfdr")?,
        DecideMethod::Bh => t.column("p")?,
    };
    let index: Vec<usize> = if t.has("grid_index") {
        t.column("grid_index")?
    } else {
        t.optional_column("sensor_index")?
            .unwrap_or_else(|| (0..values.len()).collect())
    };
    let truth = match &a.truth {
        Some(path) => {
            let (_, tf): (Meta, TruthFile) = read_json(path)?;
            if let Some(&i) = index.iter().find(|&&i| i >= tf.field.truth.len()) {
                return Err(invalid(format!(
                    "index {i} outside the grid of {}",
                    path.display()
                )));
            }
            Some(tf.field.truth.restrict(&index))
        }
        None => None,
    };

    let name = match a.method {
        DecideMethod::Bfdr => "bfdr",
        DecideMethod::Bh => "bh",
    };
    let hash = chain_hash(&upstream_hash(&t.meta), &(name, &a.alpha, a.rule));
    let meta = Meta {
        config_hash: hash,
        seed: t.meta.as_ref().map_or(0, |m| m.seed),
        run: t.meta.as_ref().and_then(|m| m.run),
    };
    create_dir(&a.out)?;
    let mut dec = CsvOut::create(
        &a.out.join("decisions.csv"),
        &meta,
        &["alpha", "index", "value"],
    )?;
    let mut scores = match truth {
        Some(_) => Some(CsvOut::create(
            &a.out.join("scores.csv"),
            &meta,
            &["alpha", "discoveries", "fdp", "power"],
        )?),
        None => None,
    };
    for &alpha in &a.alpha {
        let d = match a.method {
            DecideMethod::Bfdr => bfdr_select(&values, alpha, a.rule)?,
            DecideMethod::Bh => bh_procedure(&values, alpha)?,
        };
        for &i in &d {
            dec.row([num(alpha), index[i].to_string(), num(values[i])])?;
        }
        let mut line = format!("alpha={alpha} discoveries={}", d.len());
        if let (Some(out), Some(truth)) = (scores.as_mut(), truth.as_ref()) {
            let s = score(&d, truth)?;
            out.row([num(alpha), d.len().to_string(), num(s.fdp), num(s.power)])?;
            line += &format!(" fdp={} power={}", s.fdp, s.power);
        }
        println!("{line}");
    }
    dec.finish()?;
    scores.map_or(Ok(()), CsvOut::finish)
}

pub fn interpolate(a: &InterpolateArgs) -> CliResult<()> {
    let t = Table::read(&a.input)?;
    let idx: Vec<usize> = t.column("sensor_index")?;
    let l: Vec<f64> = t.column("lfdr")?;
    let (layout_meta, layout): (Meta, SensorLayout) = read_json(&a.layout)?;
    let by_sensor: HashMap<usize, f64> = idx.into_iter().zip(l).collect();
    let ordered = layout
        .sensor_indices
        .iter()
        .map(|i| {
            by_sensor
                .get(i)
                .copied()
                .ok_or_else(|| invalid(format!("sensor {i} of the layout has no lfdr")))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    let grid = SpatialGrid::new(layout.width, layout.height)?;
    let f = interpolate_lfdr_field(&layout, &ordered, &grid)?;

    let upstream = t.meta.clone().unwrap_or(layout_meta);
    let meta = Meta {
        config_hash: chain_hash(&upstream.config_hash, &"tps"),
        seed: upstream.seed,
        run: upstream.run,
    };
    create_dir(&a.out)?;
    let mut out = CsvOut::create(
        &a.out.join("field.csv"),
        &meta,
        &["grid_index", "x", "y", "lfdr"],
    )?;
    for (n, v) in f.lfdr.iter().enumerate() {
        let (x, y) = grid.coords(n);
        out.row([n.to_string(), x.to_string(), y.to_string(), num(*v)])?;
    }
    out.finish()?;
    let pixels: Vec<u8> = f.lfdr.iter().map(|v| (v * 255.0).round() as u8).collect();
    write_pgm(
        &a.out.join("field.pgm"),
        &meta,
        grid.width,
        grid.height,
        &pixels,
    )?;
    if f.clamped > 0 {
        eprintln!(
            "warning: {} interpolated lfdr's clamped to [0, 1]",
            f.clamped
        );
    }
    println!(
        "interpolated {} sensors to {} grid points",
        layout.len(),
        grid.len()
    );
    Ok(())
}

fn check_compatible(runs: &[LoadedRun], force: bool) -> CliResult<Vec<String>> {
    let first = &runs[0];
    let mut warnings = Vec::new();
    for r in &runs[1..] {
        if (r.sim.grid.width, r.sim.grid.height) != (first.sim.grid.width, first.sim.grid.height) {
            return Err(invalid(format!(
                "{} has a {}x{} grid but {} has {}x{}",
                r.dir.display(),
                r.sim.grid.width,
                r.sim.grid.height,
                first.dir.display(),
                first.sim.grid.width,
                first.sim.grid.height
            )));
        }
        if r.meta.config_hash != first.meta.config_hash {
            if !force {
                return Err(invalid(format!(
                    "{} and {} come from different configurations; pass --force to aggregate anyway",
                    first.dir.display(),
                    r.dir.display()
                )));
            }
            warnings.push(format!(
                "aggregated across config hashes ({})",
                r.dir.display()
            ));
        }
    }
    Ok(warnings)
}

fn method_warnings(
    runs: &[LoadedRun],
    evals: &[Evaluation],
    method: Method,
    global: &[String],
) -> String {
    let prefix = format!("{}: ", method.name());
    let mut seen = BTreeSet::new();
    for (r, e) in runs.iter().zip(evals) {
        for w in &e.outcome.warnings {
            if let Some(rest) = w.strip_prefix(&prefix) {
                seen.insert(format!("{}: {rest}", r.dir.display()));
            }
        }
    }
    global
        .iter()
        .cloned()
        .chain(seen)
        .collect::<Vec<_>>()
        .join("; ")
}

fn raster_name(dir: &Path, suffix: &str) -> String {
    let base = dir
        .file_name()
        .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());
    format!("{base}_{suffix}.pgm")
}

pub fn report(a: &ReportArgs) -> CliResult<()> {
    let dirs = expand_run_dirs(&a.runs)?;
    let runs = dirs
        .iter()
        .map(|d| load_run(d))
        .collect::<CliResult<Vec<_>>>()?;
    let global = check_compatible(&runs, a.force)?;
    let fit = match &a.fit_config {
        Some(path) => read_plain_json::<FitConfig>(path)?,
        None => FitConfig::spatial(),
    };
    fit.validate()?;

    let evals: Vec<Evaluation> = runs
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let run = r.meta.run.unwrap_or(i);
            let fit = fit.clone().with_seed(RunSeeds::new(r.meta.seed, run).fit);
            evaluate_simulated(&r.sim, &a.method, &a.alpha, &fit, a.rule, run)
        })
        .collect::<spatial_lfdr::Result<_>>()?;
    let outcomes: Vec<_> = evals.iter().map(|e| e.outcome.clone()).collect();
    let rows = summarize(&outcomes, &a.method, &a.alpha);

    let first = &runs[0].meta;
    let meta = Meta {
        config_hash: chain_hash(&first.config_hash, &(&a.method, &a.alpha, a.rule, &fit)),
        seed: first.seed,
        run: None,
    };
    create_dir(&a.out)?;
    let header = [
        "method",
        "alpha",
        "mean_fdr",
        "se_fdr",
        "mean_power",
        "se_power",
        "n_runs",
        "warnings",
    ];
    let mut out = CsvOut::create(&a.out.join("results.csv"), &meta, &header)?;
    println!(
        "{:<7} {:>6} {:>9} {:>9} {:>10} {:>9} {:>6}",
        "method", "alpha", "FDR", "SE", "power", "SE", "runs"
    );
    let se = |x: Option<f64>| x.map_or(String::new(), num);
    for r in &rows {
        out.row([
            r.method.name().to_string(),
            num(r.alpha),
            num(r.mean_fdr),
            se(r.se_fdr),
            num(r.mean_power),
            se(r.se_power),
            r.n_runs.to_string(),
            method_warnings(&runs, &evals, r.method, &global),
        ])?;
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<7} {:>6} {:>9.4} {:>9} {:>10.4} {:>9} {:>6}",
            r.method.name(),
            r.alpha,
            r.mean_fdr,
            fmt(r.se_fdr),
            r.mean_power,
            fmt(r.se_power),
            r.n_runs
        );
    }
    out.finish()?;

    let mut per_run = CsvOut::create(
        &a.out.join("runs.csv"),
        &meta,
        &[
            "run_dir", "method", "alpha", "fdp", "power", "pi0_true", "pi0_hat",
        ],
    )?;
    for (r, e) in runs.iter().zip(&evals) {
        for s in &e.outcome.scores {
            let pi0_hat = e
                .outcome
                .pi0_hat
                .iter()
                .find(|(m, _)| *m == s.method)
                .map_or(String::new(), |p| num(p.1));
            per_run.row([
                r.dir.display().to_string(),
                s.method.name().to_string(),
                num(s.alpha),
                num(s.score.fdp),
                num(s.score.power),
                num(e.outcome.pi0_true),
                pi0_hat,
            ])?;
        }
    }
    per_run.finish()?;

    if !a.no_rasters {
        let dir = a.out.join("rasters");
        create_dir(&dir)?;
        for (r, e) in runs.iter().zip(&evals) {
            let (w, h) = (r.sim.grid.width, r.sim.grid.height);
            let run_meta = Meta {
                run: r.meta.run,
                ..meta.clone()
            };
            let truth: Vec<u8> = (0..r.sim.grid.len())
                .map(|n| {
                    if r.sim.field.truth.is_alternative(n) {
                        255
                    } else {
                        0
                    }
                })
                .collect();
            write_pgm(
                &dir.join(raster_name(&r.dir, "truth")),
                &run_meta,
                w,
                h,
                &truth,
            )?;
            for d in &e.discoveries {
                let mut px = vec![0u8; r.sim.grid.len()];
                for &i in &d.grid_indices {
                    px[i] = 255;
                }
                let suffix = format!("{}_a{}", d.method.name(), d.alpha);
                write_pgm(
                    &dir.join(raster_name(&r.dir, &suffix)),
                    &run_meta,
                    w,
                    h,
                    &px,
                )?;
            }
        }
    }
    Ok(())
}

fn check(name: &str, ok: bool, detail: String) -> CliResult<()> {
    println!(
        "selftest {name}: {} ({detail})",
        if ok { "ok" } else { "FAILED" }
    );
    if ok {
        Ok(())
    } else {
        Err(CliError::Lib(spatial_lfdr::Error::Numerical(format!(
            "selftest {name} failed"
        ))))
    }
}

pub fn selftest() -> CliResult<()> {
    let m = beta_moments(2.0);
    check(
        "moments",
        (m.third_cumulant + 0.2 / 27.0).abs() < 1e-12,
        format!("kappa3(2) = {}", m.third_cumulant),
    )?;

    let d = bh_procedure(&[0.01, 0.04, 0.9], 0.05)?;
    check("bh", d == vec![0], format!("rejected {d:?}"))?;

    let pts = [[0.0, 0.0], [4.0, 0.0], [0.0, 3.0], [5.0, 5.0], [2.0, 1.0]];
    let vals: Vec<f64> = pts.iter().map(|p| 0.1 * p[0] - 0.3 * p[1] + 0.2).collect();
    let tps = tps_fit(&pts, &vals)?;
    let err = (tps_eval(&tps, [7.0, -2.0]) - (0.7 + 0.6 + 0.2)).abs();
    check("tps", err < 1e-9, format!("affine error {err:.1e}"))?;

    let mut cfg = HarnessConfig::new(Scenario::A, NetworkConfig::Uniform);
    cfg.width = 40;
    cfg.height = 40;
    cfg.n_runs = 2;
    cfg.seed = 1;
    cfg.alphas = vec![0.1];
    let rep = monte_carlo_harness(&cfg)?;
    let finite = rep
        .rows
        .iter()
        .all(|r| r.mean_fdr.is_finite() && (0.0..=1.0).contains(&r.mean_power));
    let smom = rep
        .row(Method::Smom, 0.1)
        .map_or(f64::NAN, |r| r.mean_power);
    check(
        "pipeline",
        finite && smom > 0.0,
        format!("{} rows, smom power {smom:.3}", rep.rows.len()),
    )?;
    println!("selftest passed");
    Ok(())
}
