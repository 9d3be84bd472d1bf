//! Oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use spatial_lfdr::stats::BetaMixtureModel;

/// Variance of beta(a) = a p^(a-1) on [0, 1].
pub fn beta_var(a: f64) -> f64 {
    a / ((a + 1.0).powi(2) * (a + 2.0))
}

/// Shape where the beta variance peaks, found by golden-section search.
pub fn peak_shape() -> f64 {
    let (mut lo, mut hi) = (0.01f64, 10.0f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if beta_var(x1) < beta_var(x2) {
            lo = x1;
        } else {
            hi = x2;
        }
    }
    0.5 * (lo + hi)
}

/// Shape with the given variance on the lower (`a` below the peak) or upper branch.
pub fn shape_with_variance(var: f64, lower: bool) -> f64 {
    let peak = peak_shape();
    let (mut lo, mut hi) = if lower { (1e-9, peak) } else { (peak, 1e6) };
    for _ in 0..300 {
        let mid = if lower {
            0.5 * (lo + hi)
        } else {
            (lo * hi).sqrt()
        };
        let increasing = lower;
        if (beta_var(mid) < var) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Random K-component, d-marginal model whose components have equal
/// variance across marginals (means differ because branches are mixed).
pub fn equal_variance_model<R: Rng>(k: usize, d: usize, rng: &mut R) -> BetaMixtureModel {
    let raw: Vec<f64> = (0..k).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let shapes = (0..k)
        .map(|_| {
            let var = 0.02 + 0.06 * rng.random::<f64>();
            (0..d)
                .map(|_| shape_with_variance(var, rng.random::<bool>()))
                .collect()
        })
        .collect();
    let mut m = BetaMixtureModel { weights, shapes, d };
    // exact renormalization so validation's 1e-12 tolerance holds
    let s: f64 = m.weights.iter().sum();
    m.weights.iter_mut().for_each(|w| *w /= s);
    m
}

pub fn mean(a: f64) -> f64 {
    a / (a + 1.0)
}

/// Per-component mean vectors.
pub fn component_means(m: &BetaMixtureModel) -> Vec<DVector<f64>> {
    m.shapes
        .iter()
        .map(|row| DVector::from_iterator(m.d, row.iter().map(|&a| mean(a))))
        .collect()
}

/// Closed-form `E[p p^T]` of a product-beta mixture.
pub fn population_second(m: &BetaMixtureModel) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(m.d, m.d);
    for (w, row) in m.weights.iter().zip(&m.shapes) {
        let mu = DVector::from_iterator(m.d, row.iter().map(|&a| mean(a)));
        let mut c = &mu * mu.transpose();
        for i in 0..m.d {
            c[(i, i)] += beta_var(row[i]);
        }
        s += c * *w;
    }
    s
}

/// Closed-form mean vector.
pub fn population_mean(m: &BetaMixtureModel) -> DVector<f64> {
    component_means(m)
        .iter()
        .zip(&m.weights)
        .fold(DVector::zeros(m.d), |acc, (mu, w)| acc + mu * *w)
}

/// Smallest eigenpair of a symmetric matrix.
pub fn smallest_eigen(s: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let e = SymmetricEigen::new(s.clone());
    let i = e.eigenvalues.imin();
    (e.eigenvalues[i], e.eigenvectors.column(i).into_owned())
}
