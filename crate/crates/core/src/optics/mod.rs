//! Exact photon-detection distributions for a Gaussian point-spread function.
//!
//! Two measurements are modelled. Direct imaging (DI) counts photons on a unit
//! pixel grid in the image plane; the outcome distribution is the source
//! intensity convolved with the squared PSF. Spatial-mode demultiplexing
//! (SPADE) sorts the field into Hermite-Gaussian (HG) modes matched to the PSF
//! width and counts photons per mode.
//!
//! All distributions are conditioned on a photon being detected, so no
//! vacuum term or overall normalization constant appears anywhere.

mod direct;
mod hermite;
mod modes;
mod spade;

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use direct::{di_distribution, di_leakage, DiGrid, DEFAULT_HALF_EXTENT, MAX_LEAKAGE, MIN_HALF_EXTENT};
pub use hermite::{amplitude_table, hg_amplitude_1d, hg_coefficient, ln_factorial};
pub use modes::{
    build_mode_set, rotation_angle, DetectionMode, ModeSet, ModeSetKind, ModeTerm, RESIDUAL_LABEL,
};
pub use spade::spade_distribution;

/// Default PSF width in pixels.
pub const DEFAULT_SIGMA: f64 = 9.5;

#[derive(Debug, Error)]
pub enum OpticsError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("mode {mode} has squared norm {norm_sq}, expected 1")]
    NotUnitNorm { mode: String, norm_sq: f64 },
    #[error("mode {mode} repeats HG index ({m},{n})")]
    DuplicateTerm { mode: String, m: u32, n: u32 },
    #[error("modes {a} and {b} overlap ({dot})")]
    NotOrthogonal { a: String, b: String, dot: f64 },
    #[error("residual probability {0} is negative; the mode set is not orthonormal")]
    NegativeResidual(f64),
    #[error("mode set without residual bucket leaves probability {0} unassigned")]
    UnspannedMass(f64),
    #[error("DI grid half-extent {0} is below the minimum of {MIN_HALF_EXTENT}")]
    GridTooSmall(u32),
    #[error("DI grid half-extent {half_extent} leaks {leakage:.3e} of the blurred mass at sigma_eff={sigma_eff}")]
    Leakage {
        leakage: f64,
        half_extent: u32,
        sigma_eff: f64,
    },
}

/// PSF width and object scale factor. Only their ratio, the effective
/// blurring `sigma / scale_factor`, enters the distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsParams {
    pub sigma: f64,
    pub scale_factor: f64,
}

impl Default for OpticsParams {
    fn default() -> Self {
        OpticsParams {
            sigma: DEFAULT_SIGMA,
            scale_factor: 1.0,
        }
    }
}

impl OpticsParams {
    pub fn new(sigma: f64, scale_factor: f64) -> Result<Self, OpticsError> {
        positive("sigma", sigma)?;
        positive("scale_factor", scale_factor)?;
        Ok(OpticsParams {
            sigma,
            scale_factor,
        })
    }

    pub fn with_sigma_eff(sigma_eff: f64) -> Result<Self, OpticsError> {
        Self::new(sigma_eff, 1.0)
    }

    pub fn sigma_eff(&self) -> f64 {
        self.sigma / self.scale_factor
    }
}

pub(crate) fn positive(name: &'static str, value: f64) -> Result<f64, OpticsError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(OpticsError::NonPositive { name, value })
    }
}

/// The outcomes a distribution ranges over.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeSpace {
    /// Named outcomes, e.g. detection modes plus the residual bucket.
    Labels(Arc<[String]>),
    /// DI pixels, row-major with rows ordered by ascending y'.
    Grid(DiGrid),
}

impl OutcomeSpace {
    pub fn len(&self) -> usize {
        match self {
            OutcomeSpace::Labels(l) => l.len(),
            OutcomeSpace::Grid(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> String {
        match self {
            OutcomeSpace::Labels(l) => l[i].clone(),
            OutcomeSpace::Grid(g) => {
                let (x, y) = g.coords(i);
                format!("({x},{y})")
            }
        }
    }
}

/// Exact outcome probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    pub outcomes: OutcomeSpace,
    pub p: Vec<f64>,
}

impl ProbabilityVector {
    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Probability of the outcome with this label, if present.
    pub fn get(&self, label: &str) -> Option<f64> {
        match &self.outcomes {
            OutcomeSpace::Labels(l) => l.iter().position(|s| s == label).map(|i| self.p[i]),
            OutcomeSpace::Grid(_) => None,
        }
    }

    /// CSV with columns `outcome_label,probability`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["outcome_label", "probability"])?;
        for (i, p) in self.p.iter().enumerate() {
            w.write_record([self.outcomes.label(i), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV with columns `x,y,probability`; only meaningful for DI grids.
    pub fn write_grid_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let OutcomeSpace::Grid(grid) = &self.outcomes else {
            return self.write_csv(out);
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "probability"])?;
        for (i, p) in self.p.iter().enumerate() {
            let (x, y) = grid.coords(i);
            w.write_record([x.to_string(), y.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
