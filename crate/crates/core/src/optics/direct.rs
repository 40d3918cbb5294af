use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{OpticsError, OpticsParams, OutcomeSpace, ProbabilityVector};
use crate::dataset::SourceObject;

pub const DEFAULT_HALF_EXTENT: u32 = 40;
pub const MIN_HALF_EXTENT: u32 = 14;
/// Largest fraction of the blurred mass allowed to fall outside the grid.
pub const MAX_LEAKAGE: f64 = 1e-6;

// Tail of the lattice sum beyond this many widths is below exp(-72).
const FULL_SUM_WIDTHS: f64 = 12.0;

/// Square detector grid with unit pixel spacing spanning
/// `-half_extent..=half_extent` on both axes, centered on the source centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiGrid {
    pub half_extent: u32,
}

impl Default for DiGrid {
    fn default() -> Self {
        DiGrid {
            half_extent: DEFAULT_HALF_EXTENT,
        }
    }
}

impl DiGrid {
    pub fn new(half_extent: u32) -> Result<Self, OpticsError> {
        if half_extent < MIN_HALF_EXTENT {
            return Err(OpticsError::GridTooSmall(half_extent));
        }
        Ok(DiGrid { half_extent })
    }

    /// Smallest grid, never below the default, that keeps leakage under
    /// [`MAX_LEAKAGE`] for sources within `radius` of the centroid.
    pub fn covering(radius: f64, sigma_eff: f64) -> Self {
        let needed = (radius + 5.5 * sigma_eff).ceil() as u32;
        DiGrid {
            half_extent: needed.max(DEFAULT_HALF_EXTENT),
        }
    }

    pub fn side(&self) -> usize {
        2 * self.half_extent as usize + 1
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(x', y')` of flat index `k`.
    pub fn coords(&self, k: usize) -> (i64, i64) {
        let h = self.half_extent as i64;
        let side = self.side();
        ((k % side) as i64 - h, (k / side) as i64 - h)
    }

    pub fn index(&self, x: i64, y: i64) -> Option<usize> {
        let h = self.half_extent as i64;
        if x.abs() > h || y.abs() > h {
            return None;
        }
        Some((y + h) as usize * self.side() + (x + h) as usize)
    }

    fn axis(&self) -> impl Iterator<Item = f64> {
        let h = self.half_extent as i64;
        (-h..=h).map(|v| v as f64)
    }
}

/// Source weights binned on the distinct x and y coordinates they occupy.
/// Pixel sources use at most one distinct value per column and per row,
/// which is what makes the separable evaluation below cheap.
struct Binned {
    xs: Vec<f64>,
    ys: Vec<f64>,
    weights: Array2<f64>,
}

fn bin_samples(src: &SourceObject) -> Binned {
    fn slot(values: &mut Vec<f64>, v: f64) -> usize {
        match values.iter().position(|&u| u.to_bits() == v.to_bits()) {
            Some(i) => i,
            None => {
                values.push(v);
                values.len() - 1
            }
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let cells: Vec<(usize, usize, f64)> = src
        .samples
        .iter()
        .map(|s| (slot(&mut ys, s.y), slot(&mut xs, s.x), s.w))
        .collect();
    let mut weights = Array2::zeros((ys.len(), xs.len()));
    for (j, k, w) in cells {
        weights[[j, k]] += w;
    }
    Binned { xs, ys, weights }
}

fn kernel(centers: &[f64], grid: &DiGrid, sigma: f64) -> Array2<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let axis: Vec<f64> = grid.axis().collect();
    Array2::from_shape_fn((centers.len(), axis.len()), |(i, j)| {
        let d = axis[j] - centers[i];
        (-d * d * inv).exp()
    })
}

fn lattice_sum(center: f64, sigma: f64) -> f64 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let reach = (FULL_SUM_WIDTHS * sigma).ceil() + 1.0;
    let lo = (center - reach).floor() as i64;
    let hi = (center + reach).ceil() as i64;
    (lo..=hi)
        .map(|v| {
            let d = v as f64 - center;
            (-d * d * inv).exp()
        })
        .sum()
}

fn leakage_of(binned: &Binned, gx: &Array2<f64>, gy: &Array2<f64>, sigma: f64) -> f64 {
    let inside_x = gx.sum_axis(ndarray::Axis(1));
    let inside_y = gy.sum_axis(ndarray::Axis(1));
    let full_x: Vec<f64> = binned.xs.iter().map(|&c| lattice_sum(c, sigma)).collect();
    let full_y: Vec<f64> = binned.ys.iter().map(|&c| lattice_sum(c, sigma)).collect();
    let mut inside = 0.0;
    let mut full = 0.0;
    for ((j, k), &w) in binned.weights.indexed_iter() {
        inside += w * inside_y[j] * inside_x[k];
        full += w * full_y[j] * full_x[k];
    }
    (1.0 - inside / full).max(0.0)
}

/// Fraction of the blurred intensity that falls outside `grid`.
pub fn di_leakage(src: &SourceObject, params: &OpticsParams, grid: &DiGrid) -> f64 {
    let sigma = params.sigma_eff();
    let binned = bin_samples(src);
    let gx = kernel(&binned.xs, grid, sigma);
    let gy = kernel(&binned.ys, grid, sigma);
    leakage_of(&binned, &gx, &gy, sigma)
}

/// Direct-imaging pixel probabilities: the source convolved with the
/// squared Gaussian PSF `exp(-r^2 / 2 sigma_eff^2)`, sampled on `grid` and
/// normalized over it. Fails when more than [`MAX_LEAKAGE`] of the blurred
/// mass falls outside the grid.
pub fn di_distribution(
    src: &SourceObject,
    params: &OpticsParams,
    grid: &DiGrid,
) -> Result<ProbabilityVector, OpticsError> {
    let grid = DiGrid::new(grid.half_extent)?;
    let sigma = params.sigma_eff();
    let binned = bin_samples(src);
    let gx = kernel(&binned.xs, &grid, sigma);
    let gy = kernel(&binned.ys, &grid, sigma);

    let leakage = leakage_of(&binned, &gx, &gy, sigma);
    if leakage > MAX_LEAKAGE {
        return Err(OpticsError::Leakage {
            leakage,
            half_extent: grid.half_extent,
            sigma_eff: sigma,
        });
    }

    // rows: y', cols: x'
    let image = gy.t().dot(&binned.weights.dot(&gx));
    let total = image.sum();
    let p = image.iter().map(|v| v / total).collect();
    Ok(ProbabilityVector {
        outcomes: OutcomeSpace::Grid(grid),
        p,
    })
}
