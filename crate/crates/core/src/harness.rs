//! Seeded Monte Carlo evaluation of empirical FDR and detection power.
//!
//! Every run draws a fresh field (sources re-placed), a sensor layout and
//! measurements, computes lfdr's or p-values with each method and scores
//! the decisions against the ground truth. Runs are independent and are
//! executed in parallel; aggregation is ordered by run index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decide::{bfdr_select, bh_procedure, score, BfdrRule, Score};
use crate::error::{Error, Result};
use crate::fieldsim::{simulate_pvalues, Field, PValueSet, Scenario, ScenarioSpec};
use crate::grid::{place_sensors, LayoutSpec, SensorLayout, SpatialGrid};
use crate::interp::interpolate_lfdr_field;
use crate::lfdr::{lfdr_bum, lfdr_smom, lfdr_smom_spatial, FitConfig};
use crate::oracle::oracle_lfdrs;
use crate::rng;
use crate::smom::PartitionMode;

/// Sensor network configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NetworkConfig {
    /// A sensor at every grid point, 256 samples each.
    AllPoints,
    /// 300 sensors placed uniformly, 256 samples each.
    Uniform,
    /// 170/80/50 sensors with 256/512/1024 samples.
    Heterogeneous,
    Custom(LayoutSpec),
}

impl NetworkConfig {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "1" => Some(NetworkConfig::AllPoints),
            "2" => Some(NetworkConfig::Uniform),
            "3" => Some(NetworkConfig::Heterogeneous),
            _ => None,
        }
    }

    pub fn layout_spec(&self, seed: u64) -> LayoutSpec {
        match self {
            NetworkConfig::AllPoints => LayoutSpec::AllPoints { samples: 256 },
            NetworkConfig::Uniform => LayoutSpec::Uniform {
                count: 300,
                samples: 256,
                stratified: false,
                seed,
            },
            NetworkConfig::Heterogeneous => LayoutSpec::Heterogeneous {
                groups: vec![(170, 256), (80, 512), (50, 1024)],
                stratified: false,
                seed,
            },
            NetworkConfig::Custom(spec) => match spec.clone() {
                LayoutSpec::Uniform {
                    count,
                    samples,
                    stratified,
                    ..
                } => LayoutSpec::Uniform {
                    count,
                    samples,
                    stratified,
                    seed,
                },
                LayoutSpec::Heterogeneous {
                    groups, stratified, ..
                } => LayoutSpec::Heterogeneous {
                    groups,
                    stratified,
                    seed,
                },
                s => s,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Smom,
    Bum,
    Bh,
    Oracle,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smom" => Some(Method::Smom),
            "bum" => Some(Method::Bum),
            "bh" => Some(Method::Bh),
            "oracle" => Some(Method::Oracle),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Smom => "smom",
            Method::Bum => "bum",
            Method::Bh => "bh",
            Method::Oracle => "oracle",
        }
    }
}

/// Field model: a named preset or explicit parameters (their seed is replaced per run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldModel {
    Preset(Scenario),
    Custom(ScenarioSpec),
}

impl FieldModel {
    pub fn spec(&self, grid: &SpatialGrid, seed: u64) -> ScenarioSpec {
        match self {
            FieldModel::Preset(s) => s.spec(grid, seed),
            FieldModel::Custom(spec) => ScenarioSpec {
                seed,
                ..spec.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub field: FieldModel,
    pub network: NetworkConfig,
    pub width: usize,
    pub height: usize,
    pub alphas: Vec<f64>,
    pub methods: Vec<Method>,
    pub n_runs: usize,
    pub seed: u64,
    pub fit: FitConfig,
    pub rule: BfdrRule,
}

impl HarnessConfig {
    pub fn new(scenario: Scenario, network: NetworkConfig) -> Self {
        HarnessConfig {
            field: FieldModel::Preset(scenario),
            network,
            width: 100,
            height: 100,
            alphas: vec![0.01, 0.05, 0.1, 0.2],
            methods: vec![Method::Smom, Method::Bum, Method::Bh, Method::Oracle],
            n_runs: 1,
            seed: 0,
            fit: FitConfig::spatial(),
            rule: BfdrRule::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::invalid("n_runs must be at least 1"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::invalid(format!("alpha {a} outside (0, 1)")));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods selected"));
        }
        SpatialGrid::new(self.width, self.height)?;
        self.fit.validate()
    }
}

/// Seeds of one run, derived from the harness seed and the run index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub field: u64,
    pub layout: u64,
    pub fit: u64,
}

impl RunSeeds {
    pub fn new(seed: u64, run: usize) -> Self {
        let base = rng::derive_seed(seed, run as u64);
        RunSeeds {
            field: rng::derive_seed(base, 1),
            layout: rng::derive_seed(base, 2),
            fit: rng::derive_seed(base, 3),
        }
    }
}

/// One simulated data set.
#[derive(Debug, Clone)]
pub struct SimulatedRun {
    pub grid: SpatialGrid,
    pub field: Field,
    pub layout: SensorLayout,
    pub pvalues: PValueSet,
}

pub fn simulate_run(cfg: &HarnessConfig, run: usize) -> Result<SimulatedRun> {
    let seeds = RunSeeds::new(cfg.seed, run);
    let grid = SpatialGrid::new(cfg.width, cfg.height)?;
    let layout = place_sensors(&grid, &cfg.network.layout_spec(seeds.layout))?;
    let spec = cfg.field.spec(&grid, seeds.field);
    let (field, pvalues) = simulate_pvalues(&grid, &spec, &layout)?;
    Ok(SimulatedRun {
        grid,
        field,
        layout,
        pvalues,
    })
}

/// Scores of one method at one level in one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub method: Method,
    pub alpha: f64,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    pub scores: Vec<RunScore>,
    pub pi0_true: f64,
    /// Estimated null proportion per lfdr method.
    pub pi0_hat: Vec<(Method, f64)>,
    pub warnings: Vec<String>,
}

/// Sensor lfdr's of one method, spread to the whole grid when sensors do not cover it.
fn grid_lfdrs(
    sim: &SimulatedRun,
    method: Method,
    lfdrs: &[f64],
    warnings: &mut Vec<String>,
) -> Result<Vec<f64>> {
    if sim.layout.covers_grid() {
        // p-values follow layout order, which for full coverage is grid order
        let mut out = vec![1.0; sim.grid.len()];
        for (&i, &l) in sim.pvalues.sensor_indices.iter().zip(lfdrs) {
            out[i] = l;
        }
        return Ok(out);
    }
    let f = interpolate_lfdr_field(&sim.layout, lfdrs, &sim.grid)?;
    if f.clamped > 0 {
        warnings.push(format!(
            "{}: {} interpolated lfdr's clamped to [0, 1]",
            method.name(),
            f.clamped
        ));
    }
    Ok(f.lfdr)
}

/// Discoveries of one method at one level, as grid indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discoveries {
    pub method: Method,
    pub alpha: f64,
    pub grid_indices: Vec<usize>,
}

/// Scores plus the discovery sets behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub outcome: RunOutcome,
    pub discoveries: Vec<Discoveries>,
}

/// Runs every method on one data set. `fit` must already carry the run's seed.
pub fn evaluate_simulated(
    sim: &SimulatedRun,
    methods: &[Method],
    alphas: &[f64],
    fit: &FitConfig,
    rule: BfdrRule,
    run: usize,
) -> Result<Evaluation> {
    let truth = &sim.field.truth;
    if truth.len() != sim.grid.len() {
        return Err(Error::invalid("ground truth and grid sizes differ"));
    }
    let p = &sim.pvalues.pvals;
    let mut scores = Vec::new();
    let mut discoveries = Vec::new();
    let mut warnings = Vec::new();
    let mut pi0_hat = Vec::new();

    for &method in methods {
        if method == Method::Bh {
            // BH only decides at sensors; scored against the sensors' own truth
            let sensor_truth = truth.restrict(&sim.pvalues.sensor_indices);
            for &alpha in alphas {
                let d = bh_procedure(p, alpha)?;
                scores.push(RunScore {
                    method,
                    alpha,
                    score: score(&d, &sensor_truth)?,
                });
                let grid_indices = d.iter().map(|&i| sim.pvalues.sensor_indices[i]).collect();
                discoveries.push(Discoveries {
                    method,
                    alpha,
                    grid_indices,
                });
            }
            continue;
        }
        let lfdrs = match method {
            Method::Smom => {
                let r = if fit.partition == PartitionMode::Proximity {
                    lfdr_smom_spatial(p, &sim.pvalues.coords, fit)?
                } else {
                    lfdr_smom(p, fit)?
                };
                pi0_hat.push((method, r.pi0_hat));
                warnings.extend(r.warnings.iter().map(|w| format!("smom: {w}")));
                r.lfdrs
            }
            Method::Bum => {
                let (_, r) = lfdr_bum(p)?;
                pi0_hat.push((method, r.pi0_hat));
                warnings.extend(r.warnings.iter().map(|w| format!("bum: {w}")));
                r.lfdrs
            }
            Method::Oracle => {
                oracle_lfdrs(&sim.pvalues, &sim.field.levels(), sim.field.noise_power)?
            }
            Method::Bh => unreachable!(),
        };
        let field = grid_lfdrs(sim, method, &lfdrs, &mut warnings)?;
        for &alpha in alphas {
            let d = bfdr_select(&field, alpha, rule)?;
            scores.push(RunScore {
                method,
                alpha,
                score: score(&d, truth)?,
            });
            discoveries.push(Discoveries {
                method,
                alpha,
                grid_indices: d,
            });
        }
    }
    let outcome = RunOutcome {
        run,
        scores,
        pi0_true: truth.pi0(),
        pi0_hat,
        warnings,
    };
    Ok(Evaluation {
        outcome,
        discoveries,
    })
}

/// Simulates run `run` of the configuration and evaluates every method on it.
pub fn evaluate_run(cfg: &HarnessConfig, run: usize) -> Result<RunOutcome> {
    let sim = simulate_run(cfg, run)?;
    let fit = cfg.fit.clone().with_seed(RunSeeds::new(cfg.seed, run).fit);
    Ok(evaluate_simulated(&sim, &cfg.methods, &cfg.alphas, &fit, cfg.rule, run)?.outcome)
}

/// Mean and standard error of FDR and power for one (method, alpha).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub alpha: f64,
    pub mean_fdr: f64,
    /// `None` for a single run.
    pub se_fdr: Option<f64>,
    pub mean_power: f64,
    pub se_power: Option<f64>,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub rows: Vec<SummaryRow>,
    pub runs: Vec<RunOutcome>,
}

impl HarnessReport {
    pub fn row(&self, method: Method, alpha: f64) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.alpha - alpha).abs() < 1e-12)
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(x: &[f64]) -> (f64, Option<f64>) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, None);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

pub fn summarize(runs: &[RunOutcome], methods: &[Method], alphas: &[f64]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &method in methods {
        for &alpha in alphas {
            let picked: Vec<&Score> = runs
                .iter()
                .flat_map(|r| &r.scores)
                .filter(|s| s.method == method && s.alpha == alpha)
                .map(|s| &s.score)
                .collect();
            if picked.is_empty() {
                continue;
            }
            let fdp: Vec<f64> = picked.iter().map(|s| s.fdp).collect();
            let pow: Vec<f64> = picked.iter().map(|s| s.power).collect();
            let (mean_fdr, se_fdr) = mean_se(&fdp);
            let (mean_power, se_power) = mean_se(&pow);
            rows.push(SummaryRow {
                method,
                alpha,
                mean_fdr,
                se_fdr,
                mean_power,
                se_power,
                n_runs: picked.len(),
            });
        }
    }
    rows
}

pub fn monte_carlo_harness(cfg: &HarnessConfig) -> Result<HarnessReport> {
    cfg.validate()?;
    let runs: Vec<RunOutcome> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| evaluate_run(cfg, run))
        .collect::<Result<_>>()?;
    let rows = summarize(&runs, &cfg.methods, &cfg.alphas);
    Ok(HarnessReport { rows, runs })
}
