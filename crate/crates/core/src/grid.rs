//! Observation grid, sensor placement and the ground-truth hypothesis map.
//!
//! Grid points are indexed row-major: index `n` sits at column `n % width`
//! and row `n / width`, with unit spacing between neighbours.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub width: usize,
    pub height: usize,
}

impl SpatialGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(SpatialGrid { width, height })
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Integer coordinates `(x, y)` of grid point `n`.
    pub fn coords(&self, n: usize) -> (usize, usize) {
        debug_assert!(n < self.len());
        (n % self.width, n / self.width)
    }

    pub fn coords_f64(&self, n: usize) -> [f64; 2] {
        let (x, y) = self.coords(n);
        [x as f64, y as f64]
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }
}

/// Equivalent to [`SpatialGrid::new`].
pub fn make_grid(width: usize, height: usize) -> Result<SpatialGrid> {
    SpatialGrid::new(width, height)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

/// Null/alternative label per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub hyp: Vec<Hypothesis>,
}

impl GroundTruth {
    pub fn all_null(n: usize) -> Self {
        GroundTruth {
            hyp: vec![Hypothesis::H0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.hyp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyp.is_empty()
    }

    pub fn is_alternative(&self, n: usize) -> bool {
        self.hyp[n] == Hypothesis::H1
    }

    /// Indices of the null region.
    pub fn null_region(&self) -> Vec<usize> {
        self.region(Hypothesis::H0)
    }

    /// Indices of the alternative region.
    pub fn alternative_region(&self) -> Vec<usize> {
        self.region(Hypothesis::H1)
    }

    fn region(&self, h: Hypothesis) -> Vec<usize> {
        self.hyp
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == h)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_alternative(&self) -> usize {
        self.hyp.iter().filter(|&&h| h == Hypothesis::H1).count()
    }

    /// Fraction of null points.
    pub fn pi0(&self) -> f64 {
        if self.hyp.is_empty() {
            return 1.0;
        }
        1.0 - self.n_alternative() as f64 / self.hyp.len() as f64
    }

    /// Restriction of the labels to a subset of grid points.
    pub fn restrict(&self, indices: &[usize]) -> GroundTruth {
        GroundTruth {
            hyp: indices.iter().map(|&i| self.hyp[i]).collect(),
        }
    }
}

/// Where sensors sit and how many samples each one collects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub width: usize,
    pub height: usize,
    pub sensor_indices: Vec<usize>,
    pub samples_per_sensor: Vec<usize>,
}

impl SensorLayout {
    pub fn new(
        grid: &SpatialGrid,
        sensor_indices: Vec<usize>,
        samples_per_sensor: Vec<usize>,
    ) -> Result<Self> {
        let layout = SensorLayout {
            width: grid.width,
            height: grid.height,
            sensor_indices,
            samples_per_sensor,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = SpatialGrid::new(self.width, self.height)?;
        if self.sensor_indices.len() != self.samples_per_sensor.len() {
            return Err(Error::invalid(
                "sensor_indices and samples_per_sensor differ in length",
            ));
        }
        if self.sensor_indices.len() > grid.len() {
            return Err(Error::invalid("more sensors than grid points"));
        }
        let mut seen = vec![false; grid.len()];
        for &i in &self.sensor_indices {
            if i >= grid.len() {
                return Err(Error::invalid(format!("sensor index {i} outside the grid")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("duplicate sensor index {i}")));
            }
        }
        if self.samples_per_sensor.contains(&0) {
            return Err(Error::invalid("every sensor needs at least one sample"));
        }
        Ok(())
    }

    pub fn grid(&self) -> SpatialGrid {
        SpatialGrid {
            width: self.width,
            height: self.height,
        }
    }

    pub fn len(&self) -> usize {
        self.sensor_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensor_indices.is_empty()
    }

    /// True when every grid point carries a sensor.
    pub fn covers_grid(&self) -> bool {
        self.len() == self.width * self.height
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        let grid = self.grid();
        self.sensor_indices
            .iter()
            .map(|&i| grid.coords_f64(i))
            .collect()
    }
}

/// Order of points along a Hilbert curve, so that consecutive points are spatial neighbours.
pub fn proximity_order(coords: &[[f64; 2]]) -> Vec<usize> {
    let max = coords.iter().flatten().fold(1.0f64, |m, &c| m.max(c.abs()));
    let order = (max.ceil() as u64 + 1)
        .next_power_of_two()
        .trailing_zeros()
        .max(1) as u8;
    let key = |c: &[f64; 2]| {
        fast_hilbert::xy2h::<u32>(c[0].round().abs() as u32, c[1].round().abs() as u32, order)
    };
    let mut idx: Vec<usize> = (0..coords.len()).collect();
    idx.sort_by_key(|&i| (key(&coords[i]), i));
    idx
}

/// How sensors are placed on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayoutSpec {
    /// One sensor per grid point, all with the same sample count.
    AllPoints { samples: usize },
    /// `count` sensors drawn uniformly without replacement.
    Uniform {
        count: usize,
        samples: usize,
        stratified: bool,
        seed: u64,
    },
    /// Several sensor groups `(count, samples)`, all placed uniformly.
    Heterogeneous {
        groups: Vec<(usize, usize)>,
        stratified: bool,
        seed: u64,
    },
}

pub fn place_sensors(grid: &SpatialGrid, spec: &LayoutSpec) -> Result<SensorLayout> {
    match spec {
        LayoutSpec::AllPoints { samples } => {
            SensorLayout::new(grid, (0..grid.len()).collect(), vec![*samples; grid.len()])
        }
        LayoutSpec::Uniform {
            count,
            samples,
            stratified,
            seed,
        } => {
            let idx = draw_positions(grid, *count, *stratified, *seed)?;
            let n = idx.len();
            SensorLayout::new(grid, idx, vec![*samples; n])
        }
        LayoutSpec::Heterogeneous {
            groups,
            stratified,
            seed,
        } => {
            let total: usize = groups.iter().map(|g| g.0).sum();
            let idx = draw_positions(grid, total, *stratified, *seed)?;
            // positions are already in random order, so consecutive blocks are
            // themselves uniform samples
            let samples = groups
                .iter()
                .flat_map(|&(c, t)| std::iter::repeat_n(t, c))
                .collect();
            SensorLayout::new(grid, idx, samples)
        }
    }
}

fn draw_positions(
    grid: &SpatialGrid,
    count: usize,
    stratified: bool,
    seed: u64,
) -> Result<Vec<usize>> {
    if count > grid.len() {
        return Err(Error::invalid(format!(
            "requested {count} sensors on a grid of {} points",
            grid.len()
        )));
    }
    let mut rng = rng::rng(seed);
    if !stratified {
        let mut all: Vec<usize> = (0..grid.len()).collect();
        let (chosen, _) = all.partial_shuffle(&mut rng, count);
        return Ok(chosen.to_vec());
    }
    // jittered strata: one candidate per block, blocks visited in random order
    let per_side = (count as f64).sqrt().ceil().max(1.0) as usize;
    let bw = grid.width.div_ceil(per_side).max(1);
    let bh = grid.height.div_ceil(per_side).max(1);
    let mut blocks: Vec<(usize, usize)> = (0..grid.height.div_ceil(bh))
        .flat_map(|by| (0..grid.width.div_ceil(bw)).map(move |bx| (bx, by)))
        .collect();
    blocks.shuffle(&mut rng);
    let mut taken = vec![false; grid.len()];
    let mut out = Vec::with_capacity(count);
    for &(bx, by) in &blocks {
        if out.len() == count {
            break;
        }
        let x0 = bx * bw;
        let y0 = by * bh;
        let x = x0 + rng.random_range(0..bw.min(grid.width - x0));
        let y = y0 + rng.random_range(0..bh.min(grid.height - y0));
        let i = grid.index(x, y);
        if !taken[i] {
            taken[i] = true;
            out.push(i);
        }
    }
    // top up when blocks ran out
    let mut rest: Vec<usize> = (0..grid.len()).filter(|&i| !taken[i]).collect();
    rest.shuffle(&mut rng);
    out.extend(rest.into_iter().take(count - out.len()));
    Ok(out)
}
