//! Single-parameter beta mixtures on `[0, 1]`.
//!
//! A component `beta(a)` has density `a p^(a-1)` and CDF `p^a`. The
//! multivariate model carries one shape per component and marginal; its
//! univariate density is the average over marginals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper cap for densities that diverge at `p = 0`.
pub const DENSITY_CAP: f64 = 1e12;

/// Number of grid points used by the Wasserstein-1 distance.
pub const W1_GRID: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaMixtureModel {
    pub weights: Vec<f64>,
    /// `shapes[k][i]`: shape of component `k` in marginal `i`.
    pub shapes: Vec<Vec<f64>>,
    pub d: usize,
}

impl BetaMixtureModel {
    pub fn new(weights: Vec<f64>, shapes: Vec<Vec<f64>>) -> Result<Self> {
        let d = shapes.first().map_or(0, Vec::len);
        let m = BetaMixtureModel { weights, shapes, d };
        m.validate()?;
        Ok(m)
    }

    /// Univariate mixture `sum_k w_k beta(a_k)`.
    pub fn univariate(weights: Vec<f64>, shapes: Vec<f64>) -> Result<Self> {
        Self::new(weights, shapes.into_iter().map(|a| vec![a]).collect())
    }

    /// The uniform density as a one-component model.
    pub fn uniform() -> Self {
        BetaMixtureModel {
            weights: vec![1.0],
            shapes: vec![vec![1.0]],
            d: 1,
        }
    }

    /// Beta-uniform mixture `w + (1 - w) beta(a)`.
    pub fn bum(w: f64, a: f64) -> Result<Self> {
        Self::univariate(vec![w, 1.0 - w], vec![1.0, a])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.d == 0 {
            return Err(Error::invalid(
                "mixture needs at least one component and marginal",
            ));
        }
        if self.shapes.len() != k || self.shapes.iter().any(|r| r.len() != self.d) {
            return Err(Error::invalid("shape matrix must be K x d"));
        }
        if self.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("weights must lie in [0, 1]"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {sum}, not 1")));
        }
        if self
            .shapes
            .iter()
            .flatten()
            .any(|&a| !(a > 0.0 && a.is_finite()))
        {
            return Err(Error::invalid("shapes must be positive and finite"));
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// `(weight, shape)` pairs of the marginal-averaged univariate mixture.
    pub fn flat_components(&self) -> Vec<(f64, f64)> {
        let scale = 1.0 / self.d as f64;
        self.weights
            .iter()
            .zip(&self.shapes)
            .flat_map(|(&w, row)| row.iter().map(move |&a| (w * scale, a)))
            .filter(|&(w, _)| w > 0.0)
            .collect()
    }

    /// Draws one `d`-dimensional vector: a component, then independent marginals.
    pub fn sample_vector<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = pick(&self.weights, rng);
        self.shapes[k]
            .iter()
            .map(|&a| sample_beta(a, rng))
            .collect()
    }

    /// Draws `n` values from the marginal-averaged univariate density.
    pub fn sample_marginal<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let flat = self.flat_components();
        let w: Vec<f64> = flat.iter().map(|c| c.0).collect();
        (0..n)
            .map(|_| sample_beta(flat[pick(&w, rng)].1, rng))
            .collect()
    }
}

fn pick<R: rand::Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Inverse-CDF draw from `beta(a)`.
pub fn sample_beta<R: rand::Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    u.powf(1.0 / a)
}

/// Density `a p^(a-1)`; the divergent value at `p = 0` (for `a < 1`) is replaced by [`DENSITY_CAP`].
pub fn beta_pdf(p: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::invalid(format!(
            "beta shape must be positive, got {a}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p = {p} outside [0, 1]")));
    }
    Ok(beta_pdf_unchecked(p, a))
}

#[inline]
fn beta_pdf_unchecked(p: f64, a: f64) -> f64 {
    if a == 1.0 {
        return 1.0;
    }
    if p == 0.0 && a < 1.0 {
        return DENSITY_CAP;
    }
    a * p.powf(a - 1.0)
}

/// Mean, variance and third cumulant of one `beta(a)` marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentMoments {
    pub mean: f64,
    pub variance: f64,
    pub third_cumulant: f64,
}

pub fn beta_moments(a: f64) -> ComponentMoments {
    let m1 = a / (a + 1.0);
    let m2 = a / (a + 2.0);
    let m3 = a / (a + 3.0);
    ComponentMoments {
        mean: m1,
        variance: m2 - m1 * m1,
        third_cumulant: m3 - 3.0 * m2 * m1 + 2.0 * m1 * m1 * m1,
    }
}

/// Third cumulant of `beta(a)`.
pub fn third_cumulant(a: f64) -> f64 {
    beta_moments(a).third_cumulant
}

/// Marginal-averaged density of the model at `p`.
pub fn mixture_pdf(m: &BetaMixtureModel, p: f64) -> f64 {
    let scale = 1.0 / m.d as f64;
    m.weights
        .iter()
        .zip(&m.shapes)
        .map(|(&w, row)| w * row.iter().map(|&a| beta_pdf_unchecked(p, a)).sum::<f64>())
        .sum::<f64>()
        * scale
}

/// Marginal-averaged CDF of the model at `p`.
pub fn mixture_cdf(m: &BetaMixtureModel, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let scale = 1.0 / m.d as f64;
    m.weights
        .iter()
        .zip(&m.shapes)
        .map(|(&w, row)| w * row.iter().map(|&a| p.powf(a)).sum::<f64>())
        .sum::<f64>()
        * scale
}

/// Distances between a sample and a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DistanceKind {
    /// Kolmogorov–Smirnov: largest gap between EDF and model CDF.
    Ks,
    /// Wasserstein-1: integrated absolute gap on a fixed grid.
    #[default]
    W1,
    /// L1 distance between the histogram and bin-averaged model density.
    Histogram,
}

/// Precomputed view of a sorted sample for repeated distance evaluations.
#[derive(Debug, Clone)]
pub struct EdfData {
    sorted: Vec<f64>,
    ln_sorted: Vec<f64>,
    grid_ln: Vec<f64>,
    grid_edf: Vec<f64>,
    hist: Histogram,
    hist_edges_ln: Vec<f64>,
}

impl EdfData {
    pub fn new(pvals: &[f64], n_bins: usize) -> Result<Self> {
        if pvals.is_empty() {
            return Err(Error::invalid("empty sample"));
        }
        if pvals.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("sample values must lie in [0, 1]"));
        }
        let mut sorted = pvals.to_vec();
        sorted.sort_by(f64::total_cmp);
        let ln_sorted = sorted.iter().map(|p| p.ln()).collect();
        let n = sorted.len() as f64;
        let mut grid_edf = Vec::with_capacity(W1_GRID);
        let mut grid_ln = Vec::with_capacity(W1_GRID);
        let mut j = 0;
        for g in 0..W1_GRID {
            let x = g as f64 / (W1_GRID - 1) as f64;
            while j < sorted.len() && sorted[j] <= x {
                j += 1;
            }
            grid_edf.push(j as f64 / n);
            grid_ln.push(x.ln());
        }
        let hist = build_histogram(pvals, n_bins)?;
        let hist_edges_ln = hist.edges.iter().map(|e| e.ln()).collect();
        Ok(EdfData {
            sorted,
            ln_sorted,
            grid_ln,
            grid_edf,
            hist,
            hist_edges_ln,
        })
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn histogram(&self) -> &Histogram {
        &self.hist
    }

    pub fn distance(&self, m: &BetaMixtureModel, kind: DistanceKind) -> f64 {
        let flat = m.flat_components();
        let cdf = |ln_p: f64| -> f64 {
            if ln_p == f64::NEG_INFINITY {
                return 0.0;
            }
            flat.iter()
                .map(|&(w, a)| w * (a * ln_p).exp())
                .sum::<f64>()
                .min(1.0)
        };
        match kind {
            DistanceKind::Ks => {
                let n = self.sorted.len() as f64;
                let mut sup = 0.0f64;
                let mut i = 0;
                while i < self.sorted.len() {
                    // handle ties: EDF jumps once per distinct value
                    let mut j = i;
                    while j + 1 < self.sorted.len() && self.sorted[j + 1] == self.sorted[i] {
                        j += 1;
                    }
                    let f = cdf(self.ln_sorted[i]);
                    sup = sup
                        .max((f - i as f64 / n).abs())
                        .max(((j + 1) as f64 / n - f).abs());
                    i = j + 1;
                }
                sup
            }
            DistanceKind::W1 => {
                let h = 1.0 / (W1_GRID - 1) as f64;
                let gaps: Vec<f64> = self
                    .grid_ln
                    .iter()
                    .zip(&self.grid_edf)
                    .map(|(&l, &e)| (e - cdf(l)).abs())
                    .collect();
                trapezoid(&gaps, h)
            }
            DistanceKind::Histogram => {
                let cdfs: Vec<f64> = self.hist_edges_ln.iter().map(|&l| cdf(l)).collect();
                self.hist
                    .heights
                    .iter()
                    .enumerate()
                    .map(|(b, &h)| {
                        let width = self.hist.edges[b + 1] - self.hist.edges[b];
                        let model = (cdfs[b + 1] - cdfs[b]) / width;
                        (h - model).abs() * width
                    })
                    .sum()
            }
        }
    }
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1]))
}

/// Distance between the EDF of `pvals` and the model CDF.
pub fn edf_distance(pvals: &[f64], m: &BetaMixtureModel, kind: DistanceKind) -> Result<f64> {
    let data = EdfData::new(pvals, default_bins(pvals.len()))?;
    Ok(data.distance(m, kind))
}

/// Equal-width density histogram on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub heights: Vec<f64>,
}

pub fn build_histogram(pvals: &[f64], n_bins: usize) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if pvals.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    let mut counts = vec![0usize; n_bins];
    for &p in pvals {
        let b = ((p * n_bins as f64).floor() as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    let width = 1.0 / n_bins as f64;
    let norm = 1.0 / (pvals.len() as f64 * width);
    Ok(Histogram {
        edges: (0..=n_bins).map(|b| b as f64 * width).collect(),
        heights: counts.into_iter().map(|c| c as f64 * norm).collect(),
    })
}

/// `ceil(sqrt(n))` clamped to `[10, 200]`.
pub fn default_bins(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).clamp(10, 200)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn beta_pdf_values() {
        assert_eq!(beta_pdf(0.5, 1.0).unwrap(), 1.0);
        assert!((beta_pdf(0.25, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((beta_pdf(0.25, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(beta_pdf(0.0, 0.5).unwrap(), DENSITY_CAP);
        assert!(matches!(beta_pdf(0.5, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            beta_pdf(0.5, -1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn moments_by_substitution() {
        let m = beta_moments(1.0);
        assert_eq!(m.mean, 0.5);
        assert!((m.variance - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(m.third_cumulant, 0.0);

        let m = beta_moments(2.0);
        assert!((m.mean - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.variance - 1.0 / 18.0).abs() < 1e-15);
        assert!((m.third_cumulant + 0.0074074).abs() < 1e-7);

        let m = beta_moments(0.5);
        assert!((m.mean - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.variance - 0.0888889).abs() < 1e-7);
        assert!((m.third_cumulant - 0.0169312).abs() < 1e-7);
    }

    #[test]
    fn moment_shape_properties() {
        let mut prev = 0.0;
        for i in 0..=600 {
            let a = 10f64.powf(-3.0 + i as f64 * 0.01);
            let m = beta_moments(a);
            assert!(m.mean > prev);
            prev = m.mean;
            assert!(m.variance > 0.0);
            assert!(
                m.third_cumulant > -0.0075 && m.third_cumulant < 0.2222,
                "a = {a}"
            );
        }
    }

    #[test]
    fn mixture_examples() {
        let u = BetaMixtureModel::uniform();
        assert_eq!(mixture_pdf(&u, 0.73), 1.0);
        assert!((mixture_cdf(&u, 0.3) - 0.3).abs() < 1e-15);

        let m = BetaMixtureModel::univariate(vec![0.5, 0.5], vec![1.0, 0.5]).unwrap();
        assert!((mixture_pdf(&m, 0.25) - 1.0).abs() < 1e-15);
        assert!((mixture_cdf(&m, 0.25) - 0.375).abs() < 1e-15);
        assert_eq!(mixture_cdf(&m, 0.0), 0.0);
        assert_eq!(mixture_cdf(&m, 1.0), 1.0);
    }

    #[test]
    fn model_validation() {
        assert!(BetaMixtureModel::univariate(vec![0.5, 0.6], vec![1.0, 1.0]).is_err());
        assert!(BetaMixtureModel::univariate(vec![0.5, 0.5], vec![1.0, 0.0]).is_err());
        assert!(BetaMixtureModel::new(vec![1.0], vec![vec![1.0, 2.0], vec![1.0]]).is_err());
        let m =
            BetaMixtureModel::new(vec![0.4, 0.6], vec![vec![1.0, 2.0], vec![0.3, 0.2]]).unwrap();
        assert_eq!(m.d, 2);
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["d"], 2);
        assert_eq!(json["shapes"][1][0], 0.3);
    }

    #[test]
    fn ks_at_plotting_positions() {
        let m = BetaMixtureModel::univariate(vec![0.5, 0.5], vec![1.0, 0.5]).unwrap();
        let n = 200;
        // invert the CDF by bisection
        let sample: Vec<f64> = (0..n)
            .map(|i| {
                let target = (i as f64 + 0.5) / n as f64;
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mixture_cdf(&m, mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect();
        let ks = edf_distance(&sample, &m, DistanceKind::Ks).unwrap();
        assert!(ks <= 0.5 / n as f64 + 1e-12, "{ks}");
    }

    #[test]
    fn ks_single_point() {
        let ks = edf_distance(&[0.5], &BetaMixtureModel::uniform(), DistanceKind::Ks).unwrap();
        assert!((ks - 0.5).abs() < 1e-15);
        assert!(matches!(
            edf_distance(&[], &BetaMixtureModel::uniform(), DistanceKind::Ks),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn w1_on_uniform_draws() {
        let mut r = rng::rng(5);
        let sample: Vec<f64> = (0..100_000).map(|_| r.random::<f64>()).collect();
        let w1 = edf_distance(&sample, &BetaMixtureModel::uniform(), DistanceKind::W1).unwrap();
        assert!(w1 < 0.005, "{w1}");
    }

    #[test]
    fn histogram_examples() {
        let h = build_histogram(&[0.1, 0.9], 2).unwrap();
        assert_eq!(h.heights, vec![1.0, 1.0]);
        let h = build_histogram(&[0.31, 0.32, 0.33], 10).unwrap();
        assert!((h.heights[3] - 10.0).abs() < 1e-12);
        assert!(build_histogram(&[0.5], 0).is_err());

        let mut r = rng::rng(9);
        let sample: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        let h = build_histogram(&sample, 100).unwrap();
        let mass: f64 = h.heights.iter().map(|x| x * 0.01).sum();
        assert!((mass - 1.0).abs() < 1e-9);
        assert!(h.heights.iter().all(|x| (x - 1.0).abs() < 0.35));
    }

    #[test]
    fn default_bin_rule() {
        assert_eq!(default_bins(4), 10);
        assert_eq!(default_bins(3600), 60);
        assert_eq!(default_bins(1_000_000), 200);
    }

    #[test]
    fn sampler_matches_cdf() {
        let m = BetaMixtureModel::univariate(vec![0.7, 0.3], vec![1.0, 0.2]).unwrap();
        let mut r = rng::rng(1);
        let s = m.sample_marginal(50_000, &mut r);
        let ks = edf_distance(&s, &m, DistanceKind::Ks).unwrap();
        // 1% critical value ~ 1.63 / sqrt(n)
        assert!(ks < 1.63 / (50_000f64).sqrt(), "{ks}");
    }
}
