//! Spectral method-of-moments estimation of beta-mixture parameters.
//!
//! Scalar p-values are grouped into `d`-dimensional vectors, which are
//! modeled as draws from a `K`-component mixture whose components have
//! independent `beta(a_{k,i})` marginals. Under the spherical-variance
//! assumption (per-component marginal variances equal across coordinates)
//! the first three moments of the vectors determine the component means:
//!
//! - `sigma2`, the smallest eigenvalue of the covariance, is the average
//!   component variance and `v` its eigenvector;
//! - `M2 = E[p p^T] - sigma2 I = sum_k w_k mu_k mu_k^T`;
//! - `m1 = E[p (v^T (p - m))^2]` and
//!   `M3 = E[p (x) p (x) p] - sum_i (m1 (x) e_i (x) e_i + e_i (x) m1 (x) e_i + e_i (x) e_i (x) m1)`
//!   approximates `sum_k w_k mu_k (x) mu_k (x) mu_k` up to the third-cumulant
//!   error returned by [`m3_error_terms`].
//!
//! Whitening with `W = U (U^T M2 U)^(+1/2)` and contracting `M3` with a
//! random unit vector `eta` gives a `K x K` matrix whose eigenpairs
//! `(lambda_k, v_k)` yield `mu_k = lambda_k / (eta^T B v_k) * B v_k`, with
//! `B = U (U^T M2 U)^(1/2)`. Weights follow from `[mu_1 .. mu_K]^+ m` and
//! shapes from `a = mu / (1 - mu)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{beta_moments, BetaMixtureModel};

/// Component means are clamped into `(MEAN_CLAMP, 1 - MEAN_CLAMP)` before mapping to shapes.
pub const MEAN_CLAMP: f64 = 1e-6;
/// Weights below this invalidate a candidate.
pub const WEIGHT_FLOOR: f64 = -0.05;
/// Minimal gap between eigenvalues of the whitened third-moment matrix.
pub const EIGEN_GAP: f64 = 1e-8;

/// `L` p-value vectors of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PVectorSet {
    pub d: usize,
    data: Vec<f64>,
}

impl PVectorSet {
    pub fn from_rows(d: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("all vectors must have dimension d >= 1"));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        if data.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("vector entries must lie in [0, 1]"));
        }
        Ok(PVectorSet { d, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, l: usize) -> &[f64] {
        &self.data[l * self.d..(l + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// Randomly reorders the entries inside every vector.
    pub fn shuffled_within(&self, seed: u64) -> Self {
        let mut rng = rng::rng(seed);
        let mut data = self.data.clone();
        for v in data.chunks_exact_mut(self.d) {
            v.shuffle(&mut rng);
        }
        PVectorSet { d: self.d, data }
    }

    /// Applies the same coordinate permutation to every vector: entry `i` moves from `perm[i]`.
    pub fn permute_coordinates(&self, perm: &[usize]) -> Self {
        let data = self
            .data
            .chunks_exact(self.d)
            .flat_map(|v| perm.iter().map(move |&j| v[j]))
            .collect();
        PVectorSet { d: self.d, data }
    }
}

/// How scalar p-values are grouped into vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PartitionMode {
    /// Seeded random grouping.
    #[default]
    Random,
    /// `sqrt(d) x sqrt(d)` tiles of a fully sensed row-major grid.
    SpatialTiles { width: usize, height: usize },
    /// Consecutive runs of the input order, which the caller arranges so that
    /// neighbours in the list are neighbours in space (see `lfdr::lfdr_smom_spatial`).
    Proximity,
}

pub fn partition_pvalues(
    pvals: &[f64],
    d: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<PVectorSet> {
    if d < 2 {
        return Err(Error::invalid(format!(
            "vector dimension must be >= 2, got {d}"
        )));
    }
    if pvals.len() < 2 * d {
        return Err(Error::insufficient(format!(
            "{} p-values cannot form two vectors of dimension {d}",
            pvals.len()
        )));
    }
    if pvals.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("p-values must lie in [0, 1]"));
    }
    let data = match mode {
        PartitionMode::Random => {
            let mut idx: Vec<usize> = (0..pvals.len()).collect();
            idx.shuffle(&mut rng::rng(seed));
            let l = pvals.len() / d;
            idx[..l * d].iter().map(|&i| pvals[i]).collect()
        }
        PartitionMode::Proximity => pvals[..pvals.len() / d * d].to_vec(),
        PartitionMode::SpatialTiles { width, height } => {
            let side = (d as f64).sqrt().round() as usize;
            if side * side != d {
                return Err(Error::invalid(format!(
                    "spatial tiles need a square d, got {d}"
                )));
            }
            if width * height != pvals.len() {
                return Err(Error::invalid(
                    "spatial tiles need one p-value per grid point",
                ));
            }
            let mut data = Vec::with_capacity(pvals.len());
            for ty in 0..height / side {
                for tx in 0..width / side {
                    for dy in 0..side {
                        for dx in 0..side {
                            data.push(pvals[(ty * side + dy) * width + tx * side + dx]);
                        }
                    }
                }
            }
            data
        }
    };
    Ok(PVectorSet { d, data })
}

/// Dense `d x d x d` tensor, index `(i, j, h)` at `(i * d + j) * d + h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    pub d: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d: usize) -> Self {
        Tensor3 {
            d,
            data: vec![0.0; d * d * d],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, h: usize) -> f64 {
        self.data[(i * self.d + j) * self.d + h]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, h: usize, v: f64) {
        self.data[(i * self.d + j) * self.d + h] = v;
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `[out]_{i,j} = sum_h [M3]_{i,j,h} eta_h`.
pub fn contract_m3(m3: &Tensor3, eta: &[f64]) -> Result<DMatrix<f64>> {
    if eta.len() != m3.d {
        return Err(Error::invalid(format!(
            "contraction vector has length {}, tensor dimension is {}",
            eta.len(),
            m3.d
        )));
    }
    let norm = eta.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "contraction vector must be unit norm, has {norm}"
        )));
    }
    let d = m3.d;
    Ok(DMatrix::from_fn(d, d, |i, j| {
        let row = &m3.data[(i * d + j) * d..(i * d + j + 1) * d];
        row.iter().zip(eta).map(|(m, e)| m * e).sum()
    }))
}

/// Normalized vector of i.i.d. standard normals.
pub fn sample_unit_sphere(d: usize, seed: u64) -> Vec<f64> {
    unit_sphere_from(d, &mut rng::rng(seed))
}

fn unit_sphere_from<R: rand::Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-300 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Difference between the observable and the model third-moment tensor.
///
/// With `psi_i = sum_k w_k kappa3(a_{k,i})` the entries are
/// `(1 - 3 v_i^2) psi_i` on the diagonal, `-v_i^2 psi_i` for `i != j = h`,
/// `-v_j^2 psi_j` for `i = h != j`, `-v_h^2 psi_h` for `i = j != h` and zero
/// when all three indices differ.
pub fn m3_error_terms(model: &BetaMixtureModel, v: &[f64]) -> Result<Tensor3> {
    model.validate()?;
    let d = model.d;
    if v.len() != d {
        return Err(Error::invalid(
            "eigenvector length must equal the model dimension",
        ));
    }
    let psi: Vec<f64> = (0..d)
        .map(|i| {
            model
                .weights
                .iter()
                .zip(&model.shapes)
                .map(|(w, row)| w * beta_moments(row[i]).third_cumulant)
                .sum()
        })
        .collect();
    let mut t = Tensor3::zeros(d);
    for i in 0..d {
        for j in 0..d {
            for h in 0..d {
                let val = if i == j && j == h {
                    (1.0 - 3.0 * v[i] * v[i]) * psi[i]
                } else if j == h {
                    -v[i] * v[i] * psi[i]
                } else if i == h {
                    -v[j] * v[j] * psi[j]
                } else if i == j {
                    -v[h] * v[h] * psi[h]
                } else {
                    0.0
                };
                t.set(i, j, h, val);
            }
        }
    }
    Ok(t)
}

/// Everything computed before the random projections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralIntermediates {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub sigma2: f64,
    pub noise_vector: DVector<f64>,
    pub m1: DVector<f64>,
    pub m2: DMatrix<f64>,
    pub m3: Tensor3,
    pub b: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

/// One set of mixture parameters recovered for a given `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateParams {
    pub weights: Vec<f64>,
    /// `means[k][i]`: mean of component `k` in marginal `i`.
    pub means: Vec<Vec<f64>>,
    pub shapes: Vec<Vec<f64>>,
    pub eta: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub valid: bool,
}

impl CandidateParams {
    fn invalid(k: usize, d: usize, eta: Vec<f64>, eigenvalues: Vec<f64>) -> Self {
        CandidateParams {
            weights: vec![f64::NAN; k],
            means: vec![vec![f64::NAN; d]; k],
            shapes: vec![vec![f64::NAN; d]; k],
            eta,
            eigenvalues,
            valid: false,
        }
    }

    /// The candidate as a mixture model, if it passed sanitization.
    pub fn to_model(&self) -> Option<BetaMixtureModel> {
        if !self.valid {
            return None;
        }
        BetaMixtureModel::new(self.weights.clone(), self.shapes.clone()).ok()
    }
}

/// Result of one estimation call: shared intermediates plus `U` candidates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmomRun {
    pub intermediates: SpectralIntermediates,
    pub candidates: Vec<CandidateParams>,
}

/// Estimates `U` candidate parameter sets for a `K`-component model.
pub fn estimate_mixture_params(
    vs: &PVectorSet,
    k: usize,
    u: usize,
    seed: u64,
) -> Result<Vec<CandidateParams>> {
    Ok(estimate_with_intermediates(vs, k, u, seed)?.candidates)
}

struct HalfMoments {
    mean: DVector<f64>,
    second: DMatrix<f64>,
    cov: DMatrix<f64>,
    sigma2: f64,
    v: DVector<f64>,
}

fn half_moments(vs: &PVectorSet, idx: &[usize]) -> HalfMoments {
    let d = vs.d;
    let n = idx.len() as f64;
    let mut mean = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for &l in idx {
        let p = vs.vector(l);
        for i in 0..d {
            mean[i] += p[i];
            for j in 0..=i {
                second[(i, j)] += p[i] * p[j];
            }
        }
    }
    mean /= n;
    for i in 0..d {
        for j in 0..=i {
            let v = second[(i, j)] / n;
            second[(i, j)] = v;
            second[(j, i)] = v;
        }
    }
    let cov = &second - &mean * mean.transpose();
    let eig = SymmetricEigen::new(cov.clone());
    let (imin, sigma2) =
        eig.eigenvalues
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, &e)| if e < acc.1 { (i, e) } else { acc },
            );
    let v = eig.eigenvectors.column(imin).normalize();
    HalfMoments {
        mean,
        second,
        cov,
        sigma2,
        v,
    }
}

/// Symmetric matrix function applied to the eigenvalues of `m`.
fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let q = &eig.eigenvectors;
    let vals = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&x| f(x)));
    q * DMatrix::from_diagonal(&vals) * q.transpose()
}

/// Full estimation returning the intermediates as well as the candidates.
pub fn estimate_with_intermediates(
    vs: &PVectorSet,
    k: usize,
    u: usize,
    seed: u64,
) -> Result<SmomRun> {
    let d = vs.d;
    if k == 0 || k >= d {
        return Err(Error::invalid(format!(
            "need 1 <= K < d, got K = {k}, d = {d}"
        )));
    }
    if vs.len() < 2 * (k + 1) {
        return Err(Error::insufficient(format!(
            "{} vectors are too few for K = {k}",
            vs.len()
        )));
    }

    // (1) random split into equal halves, odd leftover dropped
    let mut idx: Vec<usize> = (0..vs.len()).collect();
    idx.shuffle(&mut rng::substream(seed, 0));
    let half = vs.len() / 2;
    let (s1, s2) = (&idx[..half], &idx[half..2 * half]);

    // (2-4) means, biased covariances and smallest eigenpairs per half
    let h1 = half_moments(vs, s1);
    let h2 = half_moments(vs, s2);

    // (5) rank-K approximation of E[p p^T] - sigma2 I from the first half
    let m2_full = &h1.second - DMatrix::identity(d, d) * h1.sigma2;
    let eig = SymmetricEigen::new(m2_full);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
    });
    let u_hat = DMatrix::from_fn(d, k, |i, c| eig.eigenvectors[(i, order[c])]);
    let kept = DVector::from_fn(k, |c, _| eig.eigenvalues[order[c]]);
    let m2 = &u_hat * DMatrix::from_diagonal(&kept) * u_hat.transpose();

    // (6) m1 on the second half
    let mut m1 = DVector::zeros(d);
    for &l in s2 {
        let p = DVector::from_column_slice(vs.vector(l));
        let proj = h2.v.dot(&(&p - &h2.mean));
        m1 += p * (proj * proj);
    }
    m1 /= s2.len() as f64;

    // (7) third moment on the second half
    let m3 = third_moment(vs, s2, &m1);

    // (8-9) whitening and its inverse
    let core = u_hat.transpose() * &m2 * &u_hat;
    let scale = core.amax().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let w = &u_hat * sym_apply(&core, |x| if x > tol { 1.0 / x.sqrt() } else { 0.0 });
    let b = &u_hat * sym_apply(&core, |x| if x > tol { x.sqrt() } else { 0.0 });

    // (10-17) one candidate per random direction
    let mut candidates = Vec::with_capacity(u);
    for run in 0..u {
        let eta = unit_sphere_from(d, &mut rng::substream(seed, run as u64 + 1));
        let m3_eta = contract_m3(&m3, &eta)?;
        candidates.push(recover_candidate(&m3_eta, &w, &b, &eta, &h1.mean, k, d));
    }

    Ok(SmomRun {
        intermediates: SpectralIntermediates {
            mean: h1.mean,
            covariance: h1.cov,
            sigma2: h1.sigma2,
            noise_vector: h1.v,
            m1,
            m2,
            m3,
            b,
            w,
        },
        candidates,
    })
}

#[allow(clippy::needless_range_loop)]
fn third_moment(vs: &PVectorSet, idx: &[usize], m1: &DVector<f64>) -> Tensor3 {
    let d = vs.d;
    let mut t = Tensor3::zeros(d);
    // accumulate i >= j >= h only
    for &l in idx {
        let p = vs.vector(l);
        for i in 0..d {
            for j in 0..=i {
                let pij = p[i] * p[j];
                let base = (i * d + j) * d;
                for h in 0..=j {
                    t.data[base + h] += pij * p[h];
                }
            }
        }
    }
    let n = idx.len() as f64;
    for i in 0..d {
        for j in 0..=i {
            for h in 0..=j {
                let mut v = t.get(i, j, h) / n;
                // - sum_l (m1 e_l e_l + e_l m1 e_l + e_l e_l m1)
                if j == h {
                    v -= m1[i];
                }
                if i == h {
                    v -= m1[j];
                }
                if i == j {
                    v -= m1[h];
                }
                for (a, b2, c) in [
                    (i, j, h),
                    (i, h, j),
                    (j, i, h),
                    (j, h, i),
                    (h, i, j),
                    (h, j, i),
                ] {
                    t.set(a, b2, c, v);
                }
            }
        }
    }
    t
}

fn recover_candidate(
    m3_eta: &DMatrix<f64>,
    w: &DMatrix<f64>,
    b: &DMatrix<f64>,
    eta: &[f64],
    mean: &DVector<f64>,
    k: usize,
    d: usize,
) -> CandidateParams {
    let small = w.transpose() * m3_eta * w;
    let small = (&small + small.transpose()) * 0.5;
    let eig = SymmetricEigen::new(small);
    let mut lambdas: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let eta_v = DVector::from_column_slice(eta);

    let mut sorted = lambdas.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|p| p[1] - p[0] < EIGEN_GAP) || lambdas.iter().any(|x| !x.is_finite())
    {
        return CandidateParams::invalid(k, d, eta.to_vec(), lambdas);
    }

    let mut mu = DMatrix::zeros(d, k);
    for c in 0..k {
        let bv = b * eig.eigenvectors.column(c);
        let denom = eta_v.dot(&bv);
        if !(denom.abs() > 1e-12) {
            return CandidateParams::invalid(k, d, eta.to_vec(), lambdas);
        }
        mu.set_column(c, &(bv * (lambdas[c] / denom)));
    }
    if mu.iter().any(|x| !x.is_finite()) {
        return CandidateParams::invalid(k, d, eta.to_vec(), lambdas);
    }
    let raw_weights = match mu.clone().pseudo_inverse(1e-12) {
        Ok(pinv) => pinv * mean,
        Err(_) => return CandidateParams::invalid(k, d, eta.to_vec(), lambdas),
    };
    let mut weights: Vec<f64> = raw_weights.iter().copied().collect();
    if weights.iter().any(|&x| !x.is_finite() || x < WEIGHT_FLOOR) {
        return CandidateParams::invalid(k, d, eta.to_vec(), lambdas);
    }
    for x in weights.iter_mut() {
        *x = x.max(0.0);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return CandidateParams::invalid(k, d, eta.to_vec(), lambdas);
    }
    for x in weights.iter_mut() {
        *x /= total;
    }
    let means: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            (0..d)
                .map(|i| mu[(i, c)].clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP))
                .collect()
        })
        .collect();
    let shapes = means
        .iter()
        .map(|row| row.iter().map(|m| m / (1.0 - m)).collect())
        .collect();
    lambdas.truncate(k);
    CandidateParams {
        weights,
        means,
        shapes,
        eta: eta.to_vec(),
        eigenvalues: lambdas,
        valid: true,
    }
}
