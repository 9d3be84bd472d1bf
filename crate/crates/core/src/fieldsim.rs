//! Synthetic propagating radio fields and energy-detector p-values.
//!
//! Received power at grid point `n` is
//! `sum_sources P_tx * max(d, d0)^(-gamma) * 10^(S_n / 10)`, where `S_n` is
//! a zero-mean Gaussian shadowing field (in dB) with exponential spatial
//! correlation `exp(-d / corr_length)`, drawn by circulant embedding.
//! A point belongs to the alternative where the received power exceeds the
//! noise floor; the phenomenon level seen by a sensor there is the amplitude
//! of the excess power, `sqrt(P_n - noise_power)`, and zero elsewhere.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::grid::{GroundTruth, Hypothesis, SensorLayout, SpatialGrid};
use crate::rng;

/// Reference distance below which path loss is flat, in grid units.
pub const REFERENCE_DISTANCE: f64 = 1.0;

/// Magnitude used for z-values whose p-value is exactly 0 or 1.
pub const Z_MAX: f64 = 8.0;

/// Seed tag separating measurement noise from the field's own streams.
const MEASUREMENT_STREAM: u64 = 0x6d65_6173;

/// Width of the grid the scenario presets are expressed on.
const PRESET_WIDTH: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_sources: usize,
    /// Linear transmit power per source.
    pub tx_power: f64,
    pub pathloss_exponent: f64,
    pub shadowing_sigma_db: f64,
    /// Correlation length of the shadowing field, in grid units.
    pub shadowing_corr_length: f64,
    /// Noise floor; also the per-sample noise variance of every sensor.
    pub noise_power: f64,
    pub seed: u64,
}

/// The three simulated environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Five sources, about 55% of the area in the alternative.
    A,
    /// Eight sources, about 34%.
    B,
    /// Two sources, about 10%.
    C,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Some(Scenario::A),
            "B" => Some(Scenario::B),
            "C" => Some(Scenario::C),
            _ => None,
        }
    }

    /// Target alternative fraction `1 - pi0` the preset is calibrated to.
    pub fn target_coverage(self) -> f64 {
        match self {
            Scenario::A => 0.55,
            Scenario::B => 0.34,
            Scenario::C => 0.10,
        }
    }

    /// Suburban preset, scaled so that coverage does not depend on the grid size.
    pub fn spec(self, grid: &SpatialGrid, seed: u64) -> ScenarioSpec {
        let (n_sources, tx_power) = match self {
            Scenario::A => (5, 8.95e3),
            Scenario::B => (8, 1.49e3),
            Scenario::C => (2, 1.82e3),
        };
        let gamma = 3.0;
        let scale = grid.width.max(grid.height) as f64 / PRESET_WIDTH;
        ScenarioSpec {
            n_sources,
            tx_power: tx_power * scale.powf(gamma),
            pathloss_exponent: gamma,
            shadowing_sigma_db: 4.0,
            shadowing_corr_length: 30.0 * scale,
            noise_power: 1.0,
            seed,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pathloss_exponent > 0.0) {
            return Err(Error::invalid("path-loss exponent must be positive"));
        }
        if !(self.noise_power > 0.0) {
            return Err(Error::invalid("noise power must be positive"));
        }
        if !(self.tx_power >= 0.0) || !(self.shadowing_sigma_db >= 0.0) {
            return Err(Error::invalid(
                "transmit power and shadowing sigma must be non-negative",
            ));
        }
        if !(self.shadowing_corr_length >= 0.0) {
            return Err(Error::invalid("correlation length must be non-negative"));
        }
        Ok(())
    }
}

/// A synthesized field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    /// Received power per grid point.
    pub power: Vec<f64>,
    pub truth: GroundTruth,
    pub sources: Vec<[f64; 2]>,
    pub noise_power: f64,
}

impl Field {
    /// Phenomenon level per grid point: excess-power amplitude, zero under the null.
    pub fn levels(&self) -> Vec<f64> {
        self.power
            .iter()
            .map(|&p| (p - self.noise_power).max(0.0).sqrt())
            .collect()
    }
}

pub fn synthesize_field(grid: &SpatialGrid, spec: &ScenarioSpec) -> Result<Field> {
    spec.validate()?;
    let mut rng = rng::substream(spec.seed, 0);
    let sources: Vec<[f64; 2]> = (0..spec.n_sources)
        .map(|_| {
            [
                rng.random::<f64>() * (grid.width as f64 - 1.0).max(0.0),
                rng.random::<f64>() * (grid.height as f64 - 1.0).max(0.0),
            ]
        })
        .collect();
    let shadow = if spec.n_sources > 0 && spec.shadowing_sigma_db > 0.0 {
        shadowing_field(grid, spec.shadowing_corr_length, spec.seed)
    } else {
        vec![0.0; grid.len()]
    };
    let power: Vec<f64> = (0..grid.len())
        .map(|n| {
            let [x, y] = grid.coords_f64(n);
            let path: f64 = sources
                .iter()
                .map(|s| {
                    let d = ((x - s[0]).powi(2) + (y - s[1]).powi(2)).sqrt();
                    spec.tx_power * d.max(REFERENCE_DISTANCE).powf(-spec.pathloss_exponent)
                })
                .sum();
            path * 10f64.powf(spec.shadowing_sigma_db * shadow[n] / 10.0)
        })
        .collect();
    let truth = GroundTruth {
        hyp: power
            .iter()
            .map(|&p| {
                if p > spec.noise_power {
                    Hypothesis::H1
                } else {
                    Hypothesis::H0
                }
            })
            .collect(),
    };
    Ok(Field {
        power,
        truth,
        sources,
        noise_power: spec.noise_power,
    })
}

/// Unit-variance Gaussian field with covariance `exp(-d / corr_length)`.
///
/// Circulant embedding on a torus of twice the grid size; the few negative
/// eigenvalues of the embedding are clipped to zero.
pub fn shadowing_field(grid: &SpatialGrid, corr_length: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng::substream(seed, 1);
    if corr_length <= 0.0 {
        return (0..grid.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
    }
    let nx = 2 * grid.width;
    let ny = 2 * grid.height;
    let m = nx * ny;
    let mut planner = FftPlanner::<f64>::new();
    let row_fwd = planner.plan_fft_forward(nx);
    let col_fwd = planner.plan_fft_forward(ny);
    let row_inv = planner.plan_fft_inverse(nx);
    let col_inv = planner.plan_fft_inverse(ny);

    let mut cov: Vec<Complex<f64>> = (0..m)
        .map(|k| {
            let (i, j) = (k % nx, k / nx);
            let dx = i.min(nx - i) as f64;
            let dy = j.min(ny - j) as f64;
            Complex::new((-(dx * dx + dy * dy).sqrt() / corr_length).exp(), 0.0)
        })
        .collect();
    fft2(&mut cov, nx, ny, &*row_fwd, &*col_fwd);

    let mut z: Vec<Complex<f64>> = cov
        .iter()
        .map(|lambda| {
            let s = lambda.re.max(0.0).sqrt();
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex::new(re, im) * s
        })
        .collect();
    fft2(&mut z, nx, ny, &*row_inv, &*col_inv);
    let norm = 1.0 / (m as f64).sqrt();
    (0..grid.len())
        .map(|n| {
            let (x, y) = grid.coords(n);
            z[y * nx + x].re * norm
        })
        .collect()
}

fn fft2(
    data: &mut [Complex<f64>],
    nx: usize,
    ny: usize,
    rows: &dyn rustfft::Fft<f64>,
    cols: &dyn rustfft::Fft<f64>,
) {
    for row in data.chunks_exact_mut(nx) {
        rows.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = data[j * nx + i];
        }
        cols.process(&mut col);
        for j in 0..ny {
            data[j * nx + i] = col[j];
        }
    }
}

/// Raw sensor samples `y_s(t) = s_s + w_s(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub sensor_indices: Vec<usize>,
    pub samples: Vec<Vec<f64>>,
    pub noise_power: Vec<f64>,
}

/// Draws `T_s` samples per sensor with i.i.d. Gaussian noise of variance `noise_power`.
///
/// `levels` holds the phenomenon level of every grid point. Each sensor uses
/// its own substream `(seed, grid index)`.
pub fn sample_measurements(
    levels: &[f64],
    layout: &SensorLayout,
    noise_power: f64,
    seed: u64,
) -> Result<Measurements> {
    layout.validate()?;
    if levels.len() != layout.width * layout.height {
        return Err(Error::invalid(
            "level vector does not match the layout grid",
        ));
    }
    if !(noise_power > 0.0) {
        return Err(Error::invalid("noise power must be positive"));
    }
    let sd = noise_power.sqrt();
    let samples = layout
        .sensor_indices
        .iter()
        .zip(&layout.samples_per_sensor)
        .map(|(&idx, &t)| {
            let mut r = rng::substream(seed, idx as u64 + 1);
            (0..t)
                .map(|_| levels[idx] + sd * Distribution::<f64>::sample(&StandardNormal, &mut r))
                .collect()
        })
        .collect();
    Ok(Measurements {
        sensor_indices: layout.sensor_indices.clone(),
        samples,
        noise_power: vec![noise_power; layout.len()],
    })
}

/// Per-sensor p-values with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueSet {
    pub sensor_indices: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    /// Sample count behind each p-value.
    pub samples: Vec<usize>,
    pub pvals: Vec<f64>,
    /// Optional `Phi^-1(p)` values.
    pub z: Option<Vec<f64>>,
}

impl PValueSet {
    pub fn len(&self) -> usize {
        self.pvals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pvals.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pvals.len();
        if self.sensor_indices.len() != n || self.coords.len() != n || self.samples.len() != n {
            return Err(Error::invalid("p-value set columns differ in length"));
        }
        if let Some(p) = self.pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
        }
        Ok(())
    }

    /// Fills in z-values and returns how many were clamped to `±Z_MAX`.
    pub fn with_z(mut self) -> (Self, usize) {
        let mut clamped = 0;
        let z = self
            .pvals
            .iter()
            .map(|&p| {
                let z = p_to_z(p);
                if z.abs() == Z_MAX {
                    clamped += 1;
                }
                z
            })
            .collect();
        self.z = Some(z);
        (self, clamped)
    }

    /// Sorts all columns by sensor index.
    pub fn sorted_by_sensor(mut self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.sensor_indices[i]);
        self.sensor_indices = order.iter().map(|&i| self.sensor_indices[i]).collect();
        self.coords = order.iter().map(|&i| self.coords[i]).collect();
        self.samples = order.iter().map(|&i| self.samples[i]).collect();
        self.pvals = order.iter().map(|&i| self.pvals[i]).collect();
        if let Some(z) = self.z.take() {
            self.z = Some(order.iter().map(|&i| z[i]).collect());
        }
        self
    }
}

/// Right-tail p-value of a normalized energy statistic with `dof` degrees of freedom.
pub fn energy_pvalue(statistic: f64, dof: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, statistic / 2.0).clamp(0.0, 1.0)
}

/// Energy detector: `tau_s = sum_t y_s(t)^2 / noise_power`, chi-square with `T_s` dof under the null.
pub fn energy_pvalues(m: &Measurements, grid: &SpatialGrid) -> Result<PValueSet> {
    if let Some(s) = m.noise_power.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::invalid(format!(
            "noise power must be positive, got {s}"
        )));
    }
    let pvals = m
        .samples
        .iter()
        .zip(&m.noise_power)
        .map(|(y, &s)| energy_pvalue(y.iter().map(|v| v * v).sum::<f64>() / s, y.len()))
        .collect();
    Ok(PValueSet {
        sensor_indices: m.sensor_indices.clone(),
        coords: m
            .sensor_indices
            .iter()
            .map(|&i| grid.coords_f64(i))
            .collect(),
        samples: m.samples.iter().map(Vec::len).collect(),
        pvals,
        z: None,
    })
}

/// `Phi^-1(p)`, clamped to `±Z_MAX` at the endpoints.
pub fn p_to_z(p: f64) -> f64 {
    if p <= 0.0 {
        return -Z_MAX;
    }
    if p >= 1.0 {
        return Z_MAX;
    }
    let z = Normal::standard().inverse_cdf(p);
    z.clamp(-Z_MAX, Z_MAX)
}

/// Simulates one full run: field, sensor samples and p-values.
pub fn simulate_pvalues(
    grid: &SpatialGrid,
    spec: &ScenarioSpec,
    layout: &SensorLayout,
) -> Result<(Field, PValueSet)> {
    let field = synthesize_field(grid, spec)?;
    let seed = rng::derive_seed(spec.seed, MEASUREMENT_STREAM);
    let m = sample_measurements(&field.levels(), layout, spec.noise_power, seed)?;
    let pv = energy_pvalues(&m, grid)?;
    Ok((field, pv))
}
