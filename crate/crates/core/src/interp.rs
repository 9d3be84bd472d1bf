//! Thin-plate-spline interpolation of sensor lfdr's onto the full grid.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SensorLayout, SpatialGrid};

/// Radius below which the kernel is taken as its limit 0.
const R_EPS: f64 = 1e-12;

/// `phi(r) = r^2 ln r`.
#[inline]
pub fn tps_kernel(r: f64) -> f64 {
    if r < R_EPS {
        0.0
    } else {
        r * r * r.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsModel {
    pub centers: Vec<[f64; 2]>,
    pub rbf_weights: Vec<f64>,
    /// `(a0, ax, ay)`
    pub affine: [f64; 3],
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Solves the affine-augmented system `[Phi P; P^T 0] [alpha; c] = [values; 0]`.
pub fn tps_fit(coords: &[[f64; 2]], values: &[f64]) -> Result<TpsModel> {
    let s = coords.len();
    if s != values.len() {
        return Err(Error::invalid("coordinate and value counts differ"));
    }
    if s < 3 {
        return Err(Error::invalid(format!("need at least 3 centers, got {s}")));
    }
    if coords
        .iter()
        .flatten()
        .chain(values)
        .any(|x| !x.is_finite())
    {
        return Err(Error::invalid("coordinates and values must be finite"));
    }
    let mut sorted: Vec<[f64; 2]> = coords.to_vec();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!(
            "duplicate center ({}, {})",
            w[0][0], w[0][1]
        )));
    }
    // collinearity: the centered scatter matrix has a (near) zero eigenvalue
    let (mx, my) = coords.iter().fold((0.0, 0.0), |acc, c| {
        (acc.0 + c[0] / s as f64, acc.1 + c[1] / s as f64)
    });
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for c in coords {
        let (dx, dy) = (c[0] - mx, c[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let det = sxx * syy - sxy * sxy;
    if det <= 1e-12 * (sxx + syy).powi(2) {
        return Err(Error::DegenerateGeometry(
            "all centers are collinear".into(),
        ));
    }

    let n = s + 3;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..s {
        for j in 0..i {
            let v = tps_kernel(dist(coords[i], coords[j]));
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
        let row = [1.0, coords[i][0], coords[i][1]];
        for (k, &v) in row.iter().enumerate() {
            a[(i, s + k)] = v;
            a[(s + k, i)] = v;
        }
    }
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, s).copy_from_slice(values);
    let sol = a
        .lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::DegenerateGeometry("interpolation system is singular".into()))?;
    Ok(TpsModel {
        centers: coords.to_vec(),
        rbf_weights: sol.rows(0, s).iter().copied().collect(),
        affine: [sol[s], sol[s + 1], sol[s + 2]],
    })
}

pub fn tps_eval(model: &TpsModel, point: [f64; 2]) -> f64 {
    let rbf: f64 = model
        .centers
        .iter()
        .zip(&model.rbf_weights)
        .map(|(&c, &w)| w * tps_kernel(dist(c, point)))
        .sum();
    rbf + model.affine[0] + model.affine[1] * point[0] + model.affine[2] * point[1]
}

/// lfdr values at every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfdrField {
    pub width: usize,
    pub height: usize,
    pub lfdr: Vec<f64>,
    /// Grid points whose interpolant left `[0, 1]` and was clamped.
    pub clamped: usize,
}

/// Interpolates sensor lfdr's to all grid points, clamps to `[0, 1]` and
/// keeps the original values at sensor locations.
pub fn interpolate_lfdr_field(
    layout: &SensorLayout,
    lfdrs: &[f64],
    grid: &SpatialGrid,
) -> Result<LfdrField> {
    layout.validate()?;
    if layout.width != grid.width || layout.height != grid.height {
        return Err(Error::invalid("layout and grid dimensions differ"));
    }
    if lfdrs.len() != layout.len() {
        return Err(Error::invalid(format!(
            "{} lfdr's for {} sensors",
            lfdrs.len(),
            layout.len()
        )));
    }
    if let Some(x) = lfdrs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!("lfdr {x} outside [0, 1]")));
    }

    let mut field = vec![f64::NAN; grid.len()];
    for (&idx, &l) in layout.sensor_indices.iter().zip(lfdrs) {
        field[idx] = l;
    }
    if layout.covers_grid() {
        return Ok(LfdrField {
            width: grid.width,
            height: grid.height,
            lfdr: field,
            clamped: 0,
        });
    }

    let model = tps_fit(&layout.coords(), lfdrs)?;
    let clamped: usize = field
        .par_iter_mut()
        .enumerate()
        .filter(|(_, v)| v.is_nan())
        .map(|(n, v)| {
            let raw = tps_eval(&model, grid.coords_f64(n));
            *v = raw.clamp(0.0, 1.0);
            usize::from(*v != raw)
        })
        .sum();
    Ok(LfdrField {
        width: grid.width,
        height: grid.height,
        lfdr: field,
        clamped,
    })
}
