//! True lfdr's of energy-detector p-values, for benchmarking.
//!
//! With per-sensor noise variance `sigma^2`, level `s` and `T` samples the
//! statistic is noncentral chi-square with `T` degrees of freedom and
//! noncentrality `lambda = T s^2 / sigma^2`. A p-value `p` maps back to the
//! statistic `x = Q_T^-1(p)`, and its alternative density is the likelihood
//! ratio
//!
//! `f_nc(x) / f_c(x) = e^(-lambda/2) Gamma(T/2) sum_j (lambda x / 4)^j / (j! Gamma(j + T/2))`.
//!
//! The oracle mixes these densities over the actual sensor population, so
//! `lfdr(p) = pi0 / (pi0 + S^-1 sum_{s in H1} g_s(p))`.

use std::collections::BTreeMap;

use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::fieldsim::PValueSet;

/// Width of the log-noncentrality bins alternative sensors are pooled into.
const LN_LAMBDA_BIN: f64 = 0.02;

/// Statistic `x` with `P(chi2_T > x) = p`.
pub fn chi2_upper_quantile(p: f64, dof: usize) -> f64 {
    if p >= 1.0 {
        return 0.0;
    }
    if p <= 0.0 {
        return f64::INFINITY;
    }
    let k = dof as f64 / 2.0;
    let q = |x: f64| gamma_ur(k, x / 2.0);
    let mut hi = (dof as f64).max(1.0);
    while q(hi) > p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if q(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Natural log of the noncentral to central chi-square density ratio at `x`.
pub fn ln_density_ratio(x: f64, dof: usize, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let h = dof as f64 / 2.0;
    let z = lambda * x / 4.0;
    let base = -lambda / 2.0 + ln_gamma(h);
    if z <= 0.0 {
        return base - ln_gamma(h);
    }
    let ln_z = z.ln();
    // term ratio t_{j+1}/t_j = z / ((j+1)(j+h)); the mode solves (j+1)(j+h) = z
    let b = h + 1.0;
    let mode = ((-b + (b * b - 4.0 * (h - z)).sqrt()) / 2.0)
        .max(0.0)
        .floor();
    let ln_peak = mode * ln_z - ln_gamma(mode + 1.0) - ln_gamma(mode + h);
    let mut sum = 1.0;
    let mut t = 1.0;
    let mut j = mode;
    loop {
        t *= z / ((j + 1.0) * (j + h));
        j += 1.0;
        sum += t;
        if t < 1e-17 * sum {
            break;
        }
    }
    let mut t = 1.0;
    let mut j = mode;
    while j > 0.0 {
        t *= j * (j - 1.0 + h) / z;
        j -= 1.0;
        sum += t;
        if t < 1e-17 * sum {
            break;
        }
    }
    base + ln_peak + sum.ln()
}

/// Oracle lfdr's for every sensor of a p-value set.
///
/// `levels` holds the phenomenon level per grid point; sensors with level 0
/// are null. All sensors share `noise_power`.
pub fn oracle_lfdrs(pv: &PValueSet, levels: &[f64], noise_power: f64) -> Result<Vec<f64>> {
    pv.validate()?;
    if !(noise_power > 0.0) {
        return Err(Error::invalid("noise power must be positive"));
    }
    if let Some(&i) = pv.sensor_indices.iter().find(|&&i| i >= levels.len()) {
        return Err(Error::invalid(format!(
            "sensor index {i} outside the level grid"
        )));
    }
    let s = pv.len() as f64;
    // (dof, lambda bin) -> (count, sum of ln lambda)
    let mut groups: BTreeMap<(usize, i64), (usize, f64)> = BTreeMap::new();
    let mut n_null = 0usize;
    for (&idx, &t) in pv.sensor_indices.iter().zip(&pv.samples) {
        let lambda = t as f64 * levels[idx] * levels[idx] / noise_power;
        if lambda > 0.0 {
            let ln_l = lambda.ln();
            let e = groups
                .entry((t, (ln_l / LN_LAMBDA_BIN).floor() as i64))
                .or_insert((0, 0.0));
            e.0 += 1;
            e.1 += ln_l;
        } else {
            n_null += 1;
        }
    }
    let pi0 = n_null as f64 / s;
    if groups.is_empty() {
        return Ok(vec![1.0; pv.len()]);
    }
    let groups: Vec<(usize, f64, f64)> = groups
        .into_iter()
        .map(|((t, _), (c, sum_ln))| (t, (sum_ln / c as f64).exp(), c as f64 / s))
        .collect();
    let dofs: Vec<usize> = {
        let mut d: Vec<usize> = groups.iter().map(|g| g.0).collect();
        d.dedup();
        d
    };

    Ok(pv
        .pvals
        .iter()
        .map(|&p| {
            if pi0 == 0.0 {
                return 0.0;
            }
            let x: Vec<(usize, f64)> = dofs
                .iter()
                .map(|&t| (t, chi2_upper_quantile(p, t)))
                .collect();
            let alt: f64 = groups
                .iter()
                .map(|&(t, lambda, frac)| {
                    let xt = x.iter().find(|e| e.0 == t).map_or(0.0, |e| e.1);
                    frac * ln_density_ratio(xt, t, lambda).exp()
                })
                .sum();
            (pi0 / (pi0 + alt)).clamp(0.0, 1.0)
        })
        .collect())
}
