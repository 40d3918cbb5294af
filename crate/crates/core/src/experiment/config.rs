use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::ml::{FcnnSpec, ModelSpec, OutputHead, RandomForestSpec};
use crate::optics::DEFAULT_SIGMA;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measurement {
    /// Raw pixel frequencies of direct imaging.
    Di,
    SpadeDiagonal,
    SpadeCartesian,
    /// Half the photons in the Cartesian set, half in the diagonal set.
    SpadeHalfHalf,
    SpadeExtended,
    /// Diagonal-basis second moments estimated from direct imaging.
    DiMoments,
}

impl Measurement {
    pub fn min_photons(self) -> u64 {
        match self {
            Measurement::SpadeHalfHalf => 2,
            _ => 1,
        }
    }

    pub fn uses_di(self) -> bool {
        matches!(self, Measurement::Di | Measurement::DiMoments)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rf,
    Fcnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub images: PathBuf,
    pub labels: PathBuf,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

/// `sigma / k` for `k = 1..=10`, which puts the effective width at 1..10 pixels
/// for the default `sigma`.
fn default_scale_factors() -> Vec<f64> {
    (1..=10).map(|k| DEFAULT_SIGMA / k as f64).collect()
}

fn default_folds() -> usize {
    10
}

fn default_train_fraction() -> f64 {
    0.7
}

fn default_scatter() -> usize {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetPaths,
    pub classes: Vec<u8>,
    #[serde(default)]
    pub cap_per_class: Option<usize>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_scale_factors")]
    pub scale_factors: Vec<f64>,
    pub photon_counts: Vec<u64>,
    pub measurement: Measurement,
    pub model: ModelKind,
    #[serde(default)]
    pub rf: RandomForestSpec,
    #[serde(default)]
    pub fcnn: FcnnSpec,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Fixed DI grid half-width. When absent each scale factor gets the
    /// smallest grid that keeps leakage in bounds for every selected image.
    #[serde(default)]
    pub di_half_extent: Option<u32>,
    #[serde(default = "default_scatter")]
    pub scatter_sample_size: usize,
}

impl ExperimentConfig {
    /// Reads a JSON config. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!(
            "cannot read {}: {e}",
            path.display()
        )))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.dataset.images,
            &mut self.dataset.labels,
            &mut self.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Schema-level checks that need no data.
    pub fn check(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.classes.is_empty() {
            return bad("classes must not be empty".into());
        }
        if let Some(c) = self.classes.iter().find(|&&c| c > 9) {
            return bad(format!("class {c} is not a digit"));
        }
        let mut distinct = self.classes.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return bad("at least two distinct classes are needed".into());
        }
        if self.cap_per_class == Some(0) {
            return bad("cap_per_class must be positive".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.scale_factors.is_empty() || self.photon_counts.is_empty() {
            return bad("scale_factors and photon_counts must not be empty".into());
        }
        if let Some(f) = self.scale_factors.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return bad(format!("scale factor {f} is not positive"));
        }
        let min = self.measurement.min_photons();
        if let Some(n) = self.photon_counts.iter().find(|&&n| n < min) {
            return bad(format!("photon count {n} is below {min} for this measurement"));
        }
        if self.folds < 2 {
            return bad("folds must be at least 2".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)".into());
        }
        if self.model == ModelKind::Fcnn && self.fcnn.output == OutputHead::Logistic && distinct.len() != 2 {
            return bad("the logistic FCNN head needs exactly two classes; use output \"softmax\"".into());
        }
        if self.model == ModelKind::Rf && self.rf.n_trees == 0 {
            return bad("rf.n_trees must be at least 1".into());
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model {
            ModelKind::Rf => ModelSpec::RandomForest(self.rf.clone()),
            ModelKind::Fcnn => ModelSpec::Fcnn(self.fcnn.clone()),
        }
    }

    pub fn sigma_eff(&self, scale_factor: f64) -> f64 {
        self.sigma / scale_factor
    }
}
