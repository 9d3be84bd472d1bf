//! Model search over vector dimension and mixture order, the two-groups
//! split, lfdr computation, and the beta-uniform-mixture (BUM) baseline.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::proximity_order;
use crate::rng;
use crate::smom::{estimate_mixture_params, partition_pvalues, PartitionMode};
use crate::stats::{default_bins, mixture_pdf, BetaMixtureModel, DistanceKind, EdfData};

/// Fitting refuses fewer p-values than this.
pub const MIN_PVALUES: usize = 50;
/// Grid size used to locate the minimum of the fitted density.
pub const PI0_GRID: usize = 10_000;
/// Improvement threshold of the mixture-order loop.
pub const IMPROVEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub d_schedule: Vec<usize>,
    /// Coordinate permutations tried per vector dimension.
    pub permutations: usize,
    /// Random projections per (d, K).
    pub draws: usize,
    pub distance: DistanceKind,
    pub max_d: usize,
    /// Histogram bins for the histogram distance; `None` picks a size from the sample count.
    pub bins: Option<usize>,
    pub partition: PartitionMode,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            d_schedule: (2..=10).collect(),
            permutations: 5,
            draws: 10,
            distance: DistanceKind::W1,
            max_d: 10,
            bins: None,
            partition: PartitionMode::Random,
            seed: 0,
        }
    }
}

impl FitConfig {
    /// Settings for p-values from a sensor field: vectors are formed from
    /// spatial neighbours and the search budget is raised, since single
    /// candidates on such data are noisy.
    pub fn spatial() -> Self {
        FitConfig {
            permutations: 50,
            draws: 50,
            partition: PartitionMode::Proximity,
            ..FitConfig::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.permutations == 0 || self.draws == 0 {
            return Err(Error::invalid("permutations and draws must be at least 1"));
        }
        if self.max_d < 2 {
            return Err(Error::invalid("max_d must be at least 2"));
        }
        if self.d_schedule.is_empty() || self.d_schedule[0] < 2 {
            return Err(Error::invalid(
                "d_schedule must be non-empty with entries >= 2",
            ));
        }
        if self.d_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("d_schedule must be strictly increasing"));
        }
        Ok(())
    }
}

/// How the search ended up with its model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub chosen_d: usize,
    pub chosen_k: usize,
    pub distance: f64,
    pub candidates_evaluated: usize,
    pub candidates_valid: usize,
    pub warnings: Vec<String>,
}

/// One improving step of the order loop for a single permutation.
struct Step {
    k: usize,
    distance: f64,
    model: BetaMixtureModel,
}

struct PermutationOutcome {
    steps: Vec<Step>,
    evaluated: usize,
    valid: usize,
}

fn search_permutation(
    pvals: &[f64],
    edf: &EdfData,
    d: usize,
    perm: usize,
    cfg: &FitConfig,
) -> Result<PermutationOutcome> {
    let d_seed = rng::derive_seed(cfg.seed, d as u64);
    let vs = partition_pvalues(pvals, d, cfg.partition, d_seed)?;
    let vs = vs.shuffled_within(rng::derive_seed(d_seed, perm as u64 + 1));
    let mut out = PermutationOutcome {
        steps: Vec::new(),
        evaluated: 0,
        valid: 0,
    };
    let mut ell_d = f64::INFINITY;
    for k in 1..d {
        if vs.len() < 2 * (k + 1) {
            break;
        }
        let seed = rng::derive_seed(d_seed ^ 0x5eed, (perm * 64 + k) as u64);
        let cands = estimate_mixture_params(&vs, k, cfg.draws, seed)?;
        out.evaluated += cands.len();
        let mut best: Option<(f64, BetaMixtureModel)> = None;
        for m in cands.iter().filter_map(|c| c.to_model()) {
            out.valid += 1;
            let dist = edf.distance(&m, cfg.distance);
            if best.as_ref().is_none_or(|(b, _)| dist < *b) {
                best = Some((dist, m));
            }
        }
        match best {
            Some((dist, model)) if dist < ell_d - IMPROVEMENT_TOL => {
                ell_d = dist;
                out.steps.push(Step {
                    k,
                    distance: dist,
                    model,
                });
            }
            // no valid candidate at K = 1 is not an improvement over +inf either,
            // but higher orders may still produce one
            None if ell_d.is_infinite() => continue,
            _ => break,
        }
    }
    Ok(out)
}

/// Searches vector dimension and mixture order for the best-fitting marginal density.
pub fn fit_pvalue_density(pvals: &[f64], cfg: &FitConfig) -> Result<(BetaMixtureModel, FitInfo)> {
    cfg.validate()?;
    if pvals.len() < MIN_PVALUES {
        return Err(Error::insufficient(format!(
            "{} p-values given, at least {MIN_PVALUES} are needed",
            pvals.len()
        )));
    }
    let bins = cfg.bins.unwrap_or_else(|| default_bins(pvals.len()));
    let edf = EdfData::new(pvals, bins)?;

    let mut best: Option<(f64, usize, usize, BetaMixtureModel)> = None;
    let mut evaluated = 0;
    let mut valid = 0;
    let mut warnings = Vec::new();
    for &d in cfg.d_schedule.iter().take_while(|&&d| d <= cfg.max_d) {
        if pvals.len() / d < 4 {
            break;
        }
        let outcomes: Vec<PermutationOutcome> = (0..cfg.permutations)
            .into_par_iter()
            .map(|q| search_permutation(pvals, &edf, d, q, cfg))
            .collect::<Result<_>>()?;
        for o in outcomes {
            evaluated += o.evaluated;
            valid += o.valid;
            for s in o.steps {
                if best.as_ref().is_none_or(|b| s.distance <= b.0) {
                    best = Some((s.distance, d, s.k, s.model));
                }
            }
        }
        match &best {
            Some(b) if b.1 != d => break,
            _ => {}
        }
    }

    let (distance, chosen_d, chosen_k, model) = match best {
        Some(b) => b,
        None => {
            warnings.push("no valid candidate; falling back to the uniform density".to_string());
            let m = BetaMixtureModel::uniform();
            (edf.distance(&m, cfg.distance), 0, 0, m)
        }
    };
    Ok((
        model,
        FitInfo {
            chosen_d,
            chosen_k,
            distance,
            candidates_evaluated: evaluated,
            candidates_valid: valid,
            warnings,
        },
    ))
}

/// Null proportion and non-null density of a fitted mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoGroups {
    pub pi0: f64,
    pub model: BetaMixtureModel,
}

impl TwoGroups {
    /// `f1(p) = (f(p) - pi0) / (1 - pi0)`; `None` when the fit is null only.
    pub fn f1(&self, p: f64) -> Option<f64> {
        (self.pi0 < 1.0).then(|| (mixture_pdf(&self.model, p) - self.pi0) / (1.0 - self.pi0))
    }

    pub fn f1_defined(&self) -> bool {
        self.pi0 < 1.0
    }
}

/// Density limit at `p = 1`: the average of `w_k a_{k,i}` over marginals.
fn density_at_one(m: &BetaMixtureModel) -> f64 {
    m.flat_components().iter().map(|(w, a)| w * a).sum()
}

/// `pi0 = min_p f(p)`, searched on a uniform grid over `[1e-6, 1]` plus the `p = 1` limit.
pub fn two_groups_split(model: &BetaMixtureModel) -> Result<TwoGroups> {
    model.validate()?;
    let lo = 1e-6;
    let step = (1.0 - lo) / (PI0_GRID - 1) as f64;
    let grid_min = (0..PI0_GRID)
        .map(|i| mixture_pdf(model, lo + step * i as f64))
        .fold(f64::INFINITY, f64::min);
    let pi0 = grid_min.min(density_at_one(model)).clamp(0.0, 1.0);
    Ok(TwoGroups {
        pi0,
        model: model.clone(),
    })
}

/// `lfdr_n = min(1, pi0 / f(p_n))`; also returns how many points had zero density (set to 1).
pub fn compute_lfdrs(
    pvals: &[f64],
    pi0: f64,
    model: &BetaMixtureModel,
) -> Result<(Vec<f64>, usize)> {
    if !(0.0..=1.0).contains(&pi0) {
        return Err(Error::invalid(format!("pi0 = {pi0} outside [0, 1]")));
    }
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let mut flagged = 0;
    let lfdrs = pvals
        .iter()
        .map(|&p| {
            let f = mixture_pdf(model, p);
            if f > 0.0 {
                (pi0 / f).min(1.0)
            } else {
                flagged += 1;
                1.0
            }
        })
        .collect();
    Ok((lfdrs, flagged))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfdrResult {
    pub pi0_hat: f64,
    pub model: BetaMixtureModel,
    pub lfdrs: Vec<f64>,
    pub fit_distance: f64,
    pub chosen_d: usize,
    pub chosen_k: usize,
    pub warnings: Vec<String>,
}

fn finish(pvals: &[f64], model: BetaMixtureModel, info: FitInfo) -> Result<LfdrResult> {
    let split = two_groups_split(&model)?;
    let (lfdrs, flagged) = compute_lfdrs(pvals, split.pi0, &model)?;
    let mut warnings = info.warnings;
    if flagged > 0 {
        warnings.push(format!(
            "{flagged} p-values had zero fitted density; lfdr set to 1"
        ));
    }
    Ok(LfdrResult {
        pi0_hat: split.pi0,
        model,
        lfdrs,
        fit_distance: info.distance,
        chosen_d: info.chosen_d,
        chosen_k: info.chosen_k,
        warnings,
    })
}

/// Fits the density by spectral method of moments and returns lfdr's for every p-value.
pub fn lfdr_smom(pvals: &[f64], cfg: &FitConfig) -> Result<LfdrResult> {
    let (model, info) = fit_pvalue_density(pvals, cfg)?;
    finish(pvals, model, info)
}

/// Like [`lfdr_smom`], but groups spatially neighbouring sensors into vectors.
///
/// P-values are sorted along a Hilbert curve through `coords` and the search
/// uses [`PartitionMode::Proximity`]; lfdr's are returned in input order.
pub fn lfdr_smom_spatial(
    pvals: &[f64],
    coords: &[[f64; 2]],
    cfg: &FitConfig,
) -> Result<LfdrResult> {
    if coords.len() != pvals.len() {
        return Err(Error::invalid("coordinate and p-value counts differ"));
    }
    let order = proximity_order(coords);
    let sorted: Vec<f64> = order.iter().map(|&i| pvals[i]).collect();
    let cfg = FitConfig {
        partition: PartitionMode::Proximity,
        ..cfg.clone()
    };
    let mut r = lfdr_smom(&sorted, &cfg)?;
    let mut lfdrs = vec![0.0; pvals.len()];
    for (&i, &l) in order.iter().zip(&r.lfdrs) {
        lfdrs[i] = l;
    }
    r.lfdrs = lfdrs;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumFit {
    pub w: f64,
    pub a: f64,
    pub log_likelihood: f64,
    pub converged: bool,
}

impl BumFit {
    pub fn pi0(&self) -> f64 {
        self.w + (1.0 - self.w) * self.a
    }

    pub fn model(&self) -> BetaMixtureModel {
        BetaMixtureModel::bum(self.w, self.a).expect("fitted BUM parameters are valid")
    }
}

/// Log-likelihood gap under which two BUM fits count as tied.
pub const BUM_TIE_TOL: f64 = 1e-3;

const A_MIN: f64 = 1e-6;
const A_MAX: f64 = 1.0 - 1e-6;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn bum_params(x: &[f64]) -> (f64, f64) {
    let w = logistic(x[0]);
    let a = A_MIN + (A_MAX - A_MIN) * logistic(x[1]);
    (w, a)
}

struct BumNegLogLik<'a> {
    ln_p: &'a [f64],
}

impl BumNegLogLik<'_> {
    fn log_lik(&self, w: f64, a: f64) -> f64 {
        self.ln_p
            .iter()
            .map(|&lp| (w + (1.0 - w) * a * ((a - 1.0) * lp).exp()).ln())
            .sum()
    }
}

impl CostFunction for BumNegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let (w, a) = bum_params(x);
        Ok(-self.log_lik(w, a))
    }
}

/// Maximum-likelihood fit of `w + (1 - w) a p^(a - 1)` from 16 fixed starting points.
pub fn fit_bum_mle(pvals: &[f64]) -> Result<BumFit> {
    if pvals.len() < MIN_PVALUES {
        return Err(Error::insufficient(format!(
            "{} p-values given, at least {MIN_PVALUES} are needed",
            pvals.len()
        )));
    }
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let ln_p: Vec<f64> = pvals.iter().map(|p| p.max(1e-300).ln()).collect();
    let starts: Vec<(f64, f64)> = [0.2, 0.4, 0.6, 0.8]
        .iter()
        .flat_map(|&w| [0.1, 0.3, 0.5, 0.7].map(move |a| (w, a)))
        .collect();

    let fits: Vec<(f64, f64, f64, bool)> = starts
        .par_iter()
        .map(|&(w0, a0)| {
            let x0 = vec![logit(w0), logit((a0 - A_MIN) / (A_MAX - A_MIN))];
            let simplex = vec![
                x0.clone(),
                vec![x0[0] + 0.5, x0[1]],
                vec![x0[0], x0[1] + 0.5],
            ];
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(1e-10)
                .expect("positive tolerance");
            let cost = BumNegLogLik { ln_p: &ln_p };
            match Executor::new(cost, solver)
                .configure(|s| s.max_iters(2000))
                .run()
            {
                Ok(res) => {
                    let st = res.state();
                    let x = st.get_best_param().cloned().unwrap_or(x0);
                    let (w, a) = bum_params(&x);
                    let converged = st.get_iter() < st.get_max_iters();
                    (w, a, -st.get_best_cost(), converged)
                }
                Err(_) => {
                    let (w, a) = bum_params(&x0);
                    (w, a, f64::NEG_INFINITY, false)
                }
            }
        })
        .collect();

    // The likelihood cannot tell w -> 1 from a -> 1 on null-like data, so the
    // null-only fit joins the pool and near-ties go to the larger pi0.
    let mut pool: Vec<(f64, f64, f64, bool)> =
        fits.into_iter().filter(|f| f.2.is_finite()).collect();
    pool.push((1.0, 0.5, 0.0, true));
    let top = pool.iter().map(|f| f.2).fold(f64::NEG_INFINITY, f64::max);
    let pi0 = |f: &(f64, f64, f64, bool)| f.0 + (1.0 - f.0) * f.1;
    let best = pool
        .iter()
        .filter(|f| f.2 >= top - BUM_TIE_TOL)
        .copied()
        .fold(None::<(f64, f64, f64, bool)>, |acc, f| match acc {
            Some(b) if pi0(&b) >= pi0(&f) => Some(b),
            _ => Some(f),
        })
        .ok_or_else(|| Error::Numerical("BUM likelihood is not finite at any start".into()))?;
    Ok(BumFit {
        w: best.0,
        a: best.1,
        log_likelihood: best.2,
        converged: best.3,
    })
}

/// lfdr's under the fitted BUM model.
pub fn lfdr_bum(pvals: &[f64]) -> Result<(BumFit, LfdrResult)> {
    let fit = fit_bum_mle(pvals)?;
    let model = fit.model();
    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push("BUM optimizer hit its iteration limit".to_string());
    }
    let info = FitInfo {
        chosen_d: 1,
        chosen_k: 2,
        distance: f64::NAN,
        candidates_evaluated: 0,
        candidates_valid: 0,
        warnings,
    };
    Ok((fit, finish(pvals, model, info)?))
}
