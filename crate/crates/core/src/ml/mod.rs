//! Classifiers and their evaluation.

pub mod evaluate;
pub mod fcnn;
pub mod forest;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::{derive_seed, SeedPart};

pub use evaluate::{evaluate, EvaluationReport};
pub use fcnn::{train_fcnn, Fcnn, FcnnSpec, OutputHead};
pub use forest::{train_random_forest, FeaturesPerSplit, RandomForest, RandomForestSpec};

#[derive(Debug, Error)]
pub enum MlError {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("{rows} feature rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("no training rows")]
    Empty,
    #[error("only class {0} is present")]
    SingleClass(u8),
    #[error("model expects {expected} features, got {got}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("feature matrix contains non-finite values")]
    NonFinite,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("class {class} has {count} test rows, fewer than {folds} folds")]
    TooFewForFolds { class: u8, count: usize, folds: usize },
    #[error("model file: {0}")]
    Persist(String),
}

/// Sorted distinct classes and each row's index into them.
pub(crate) fn class_index(labels: &[u8], rows: usize) -> Result<(Vec<u8>, Vec<usize>), MlError> {
    if labels.len() != rows {
        return Err(MlError::LabelCount {
            rows,
            labels: labels.len(),
        });
    }
    if rows == 0 {
        return Err(MlError::Empty);
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut lookup = [0usize; 256];
    for (i, &c) in classes.iter().enumerate() {
        lookup[c as usize] = i;
    }
    Ok((classes, labels.iter().map(|&l| lookup[l as usize]).collect()))
}

/// Row indices of each class, in ascending order.
pub fn rows_by_class(labels: &[u8]) -> BTreeMap<u8, Vec<usize>> {
    let mut by: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by.entry(l).or_default().push(i);
    }
    by
}

/// Splits each class separately, `round(fraction * count)` rows to the first
/// side. Both sides come back sorted.
pub fn stratified_split(labels: &[u8], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (class, mut rows) in rows_by_class(labels) {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SeedPart::Int(class as u64)]));
        rows.shuffle(&mut rng);
        let k = ((fraction * rows.len() as f64).round() as usize).min(rows.len());
        first.extend_from_slice(&rows[..k]);
        second.extend_from_slice(&rows[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    #[serde(rename = "rf")]
    RandomForest(RandomForestSpec),
    Fcnn(FcnnSpec),
}

impl ModelSpec {
    pub fn with_seed(&self, seed: u64) -> ModelSpec {
        match self {
            ModelSpec::RandomForest(s) => ModelSpec::RandomForest(RandomForestSpec { seed, ..s.clone() }),
            ModelSpec::Fcnn(s) => ModelSpec::Fcnn(FcnnSpec { seed, ..s.clone() }),
        }
    }

    pub fn train(&self, x: ArrayView2<'_, f64>, labels: &[u8]) -> Result<Model, MlError> {
        Ok(match self {
            ModelSpec::RandomForest(s) => Model::RandomForest(train_random_forest(x, labels, s)?),
            ModelSpec::Fcnn(s) => Model::Fcnn(train_fcnn(x, labels, s)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    #[serde(rename = "rf")]
    RandomForest(RandomForest),
    Fcnn(Fcnn),
}

const MODEL_FORMAT: &str = "spademl-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: Model,
}

impl Model {
    pub fn classes(&self) -> &[u8] {
        match self {
            Model::RandomForest(m) => &m.classes,
            Model::Fcnn(m) => &m.classes,
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<u8>, MlError> {
        match self {
            Model::RandomForest(m) => m.predict(x),
            Model::Fcnn(m) => m.predict(x),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), MlError> {
        let file = std::fs::File::create(path).map_err(|e| MlError::Persist(e.to_string()))?;
        let doc = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(std::io::BufWriter::new(file), &doc)
            .map_err(|e| MlError::Persist(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Model, MlError> {
        let file = std::fs::File::open(path).map_err(|e| MlError::Persist(e.to_string()))?;
        let doc: ModelFile = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| MlError::Persist(e.to_string()))?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(MlError::Persist(format!(
                "unsupported model file {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc.model)
    }
}
