//! Held-out evaluation with stratified folds of the test set.

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::{FeaturesPerSplit, RandomForestSpec};
use super::{class_index, rows_by_class, stratified_split, MlError, ModelSpec};
use crate::sampler::{derive_seed, SeedPart};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub classes: Vec<u8>,
    pub fold_accuracies: Vec<f64>,
    pub accuracy_mean: f64,
    /// Population standard deviation of the fold accuracies.
    pub accuracy_std: f64,
    /// Correct over total on the whole test set.
    pub accuracy: f64,
    /// `confusion[truth][predicted]`, indexed like `classes`.
    pub confusion: Vec<Vec<u64>>,
    pub train_size: usize,
    pub test_size: usize,
    /// The model spec actually fitted, after any grid search.
    pub fitted_spec: ModelSpec,
    /// Inner validation accuracy per grid point, when a grid search ran.
    pub grid: Vec<GridPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub max_depth: Option<usize>,
    pub features_per_split: FeaturesPerSplit,
    pub validation_accuracy: f64,
}

/// Deals each class's test rows round-robin into `folds` parts after a
/// seeded shuffle, so per-class fold sizes differ by at most one.
pub fn stratified_folds(
    labels: &[u8],
    rows: &[usize],
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, MlError> {
    let sub: Vec<u8> = rows.iter().map(|&r| labels[r]).collect();
    let mut out = vec![Vec::new(); folds];
    for (class, mut members) in rows_by_class(&sub) {
        if members.len() < folds {
            return Err(MlError::TooFewForFolds {
                class,
                count: members.len(),
                folds,
            });
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SeedPart::Int(class as u64)]));
        members.shuffle(&mut rng);
        for (i, m) in members.into_iter().enumerate() {
            out[i % folds].push(rows[m]);
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

pub fn accuracy(predicted: &[u8], truth: &[u8]) -> f64 {
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    correct as f64 / truth.len() as f64
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn grid_search(
    base: &RandomForestSpec,
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    rows: &[usize],
    seed: u64,
) -> Result<(RandomForestSpec, Vec<GridPoint>), MlError> {
    let sub: Vec<u8> = rows.iter().map(|&r| labels[r]).collect();
    let (fit, val) = stratified_split(&sub, 0.8, derive_seed(seed, &[SeedPart::Tag("grid")]));
    let pick = |idx: &[usize]| -> (ndarray::Array2<f64>, Vec<u8>) {
        let r: Vec<usize> = idx.iter().map(|&i| rows[i]).collect();
        (x.select(Axis(0), &r), r.iter().map(|&i| labels[i]).collect())
    };
    let (x_fit, y_fit) = pick(&fit);
    let (x_val, y_val) = pick(&val);
    let mut points = Vec::new();
    let mut best: Option<(f64, RandomForestSpec)> = None;
    for max_depth in [None, Some(16)] {
        for features_per_split in [FeaturesPerSplit::Sqrt, FeaturesPerSplit::All] {
            let spec = RandomForestSpec {
                max_depth,
                features_per_split,
                grid_search: false,
                ..base.clone()
            };
            let model = super::train_random_forest(x_fit.view(), &y_fit, &spec)?;
            let acc = accuracy(&model.predict(x_val.view())?, &y_val);
            points.push(GridPoint {
                max_depth,
                features_per_split,
                validation_accuracy: acc,
            });
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, spec));
            }
        }
    }
    Ok((best.unwrap().1, points))
}

/// Trains on a stratified `train_fraction` of the rows and scores the rest in
/// `folds` stratified parts. The split, folds and model are all seeded from
/// `seed`.
pub fn evaluate(
    spec: &ModelSpec,
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    folds: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<EvaluationReport, MlError> {
    if folds < 2 {
        return Err(MlError::InvalidSpec("at least two folds are needed".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(MlError::InvalidSpec("train fraction must lie in (0, 1)".into()));
    }
    let (classes, y) = class_index(labels, x.nrows())?;
    let (train, test) = stratified_split(labels, train_fraction, derive_seed(seed, &[SeedPart::Tag("split")]));
    let fold_rows = stratified_folds(labels, &test, folds, derive_seed(seed, &[SeedPart::Tag("folds")]))?;

    let model_seed = derive_seed(seed, &[SeedPart::Tag("model")]);
    let mut fitted = spec.with_seed(model_seed);
    let mut grid = Vec::new();
    if let ModelSpec::RandomForest(rf) = &fitted {
        if rf.grid_search {
            let (chosen, points) = grid_search(rf, x, labels, &train, model_seed)?;
            log::info!(
                "grid search chose max_depth={:?} features_per_split={:?}",
                chosen.max_depth,
                chosen.features_per_split
            );
            fitted = ModelSpec::RandomForest(chosen);
            grid = points;
        }
    }

    let x_train = x.select(Axis(0), &train);
    let y_train: Vec<u8> = train.iter().map(|&r| labels[r]).collect();
    let model = fitted.train(x_train.view(), &y_train)?;

    let k = classes.len();
    let mut confusion = vec![vec![0u64; k]; k];
    let mut fold_accuracies = Vec::with_capacity(folds);
    for rows in &fold_rows {
        let predicted = model.predict(x.select(Axis(0), rows).view())?;
        let truth: Vec<u8> = rows.iter().map(|&r| labels[r]).collect();
        fold_accuracies.push(accuracy(&predicted, &truth));
        for (&r, &p) in rows.iter().zip(&predicted) {
            let col = classes.binary_search(&p).expect("prediction outside training classes");
            confusion[y[r]][col] += 1;
        }
    }
    let (accuracy_mean, accuracy_std) = mean_std(&fold_accuracies);
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();

    Ok(EvaluationReport {
        classes,
        fold_accuracies,
        accuracy_mean,
        accuracy_std,
        accuracy: correct as f64 / test.len() as f64,
        confusion,
        train_size: train.len(),
        test_size: test.len(),
        fitted_spec: fitted,
        grid,
    })
}
