//! Config-driven experiment sweeps over scale factor and photon count.

mod config;
mod scatter;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use config::{DatasetPaths, ExperimentConfig, Measurement, ModelKind, SCHEMA_VERSION};
pub use scatter::{emit_scatter, scatter_rows, write_scatter_csv, ScatterRow};

use crate::dataset::{load_idx, select_classes, to_source_object, DatasetError, LabelSet, RawImageSet, SourceObject};
use crate::features::{assemble_features, moments_from_di, FeatureError, FeatureInput, FeatureSchema};
use crate::ml::{evaluate, EvaluationReport, MlError};
use crate::optics::{
    build_mode_set, di_distribution, di_leakage, spade_distribution, DetectionMode, DiGrid, ModeSet, ModeSetKind,
    OpticsError, OpticsParams, MAX_LEAKAGE,
};
use crate::sampler::{derive_seed, sample_frequencies, sample_split_bases, SamplerError, SeedPart};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "SPADEML_WORKERS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Ml(#[from] MlError),
}

impl ExperimentError {
    /// 1 for configuration problems, 2 for unreadable or unusable data,
    /// 3 when a numerical guard trips.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Ml(MlError::TooFewForFolds { .. } | MlError::InvalidSpec(_) | MlError::SingleClass(_)) => 1,
            ExperimentError::Dataset(_) | ExperimentError::Io { .. } => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Thread pool sized by [`WORKERS_ENV`], or rayon's default when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool, ExperimentError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ExperimentError::Config(format!("{WORKERS_ENV}={v} is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| ExperimentError::Config(format!("cannot start worker pool: {e}")))
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<(RawImageSet, LabelSet), ExperimentError> {
    Ok(load_idx(&cfg.dataset.images, &cfg.dataset.labels)?)
}

/// The selected images as source objects, ordered by dataset index.
pub fn prepare_sources(
    cfg: &ExperimentConfig,
    images: &RawImageSet,
    labels: &LabelSet,
) -> Result<Vec<SourceObject>, ExperimentError> {
    let subset = select_classes(
        labels,
        &cfg.classes,
        cfg.cap_per_class,
        derive_seed(cfg.seed, &[SeedPart::Tag("select")]),
    )?;
    subset
        .indices
        .iter()
        .map(|&i| to_source_object(images, labels, i).map_err(ExperimentError::from))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassCount {
    pub class: u8,
    pub count: usize,
}

fn class_counts(sources: &[SourceObject]) -> Vec<ClassCount> {
    let mut counts = [0usize; 256];
    for s in sources {
        counts[s.label as usize] += 1;
    }
    (0..=255u8)
        .filter(|&c| counts[c as usize] > 0)
        .map(|c| ClassCount {
            class: c,
            count: counts[c as usize],
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeSetRecord {
    pub kind: ModeSetKind,
    pub modes: Vec<DetectionMode>,
    pub residual: bool,
}

impl ModeSetRecord {
    fn new(kind: ModeSetKind, set: &ModeSet) -> Self {
        ModeSetRecord {
            kind,
            modes: set.modes().to_vec(),
            residual: set.has_residual(),
        }
    }
}

/// One `(scale factor, photon count)` cell of the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub scale_factor: f64,
    pub sigma_eff: f64,
    pub photons: u64,
    pub feature_schema: String,
    pub feature_len: usize,
    pub di_half_extent: Option<u32>,
    pub mode_sets: Vec<ModeSetRecord>,
    /// Image `i` draws its photons with `derive_seed(sample_seed, [i])`.
    pub sample_seed: u64,
    pub evaluation_seed: u64,
    #[serde(skip)]
    pub image_seeds: Vec<(usize, u8, u64)>,
    pub report: EvaluationReport,
}

impl CellResult {
    pub fn id(&self) -> String {
        format!("sigma{:.4}_N{}", self.sigma_eff, self.photons)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub realized_counts: Vec<ClassCount>,
    pub cells: Vec<CellResult>,
    pub wall_clock_seconds: f64,
    pub notes: Vec<String>,
}

enum Optics {
    Di(DiGrid),
    Spade(ModeSetKind, ModeSet),
    HalfHalf(ModeSet, ModeSet),
}

impl Optics {
    fn records(&self) -> Vec<ModeSetRecord> {
        match self {
            Optics::Di(_) => vec![],
            Optics::Spade(kind, set) => vec![ModeSetRecord::new(*kind, set)],
            Optics::HalfHalf(c, d) => vec![
                ModeSetRecord::new(ModeSetKind::CartesianLowest, c),
                ModeSetRecord::new(ModeSetKind::DiagonalLowest, d),
            ],
        }
    }
}

fn cell_optics(cfg: &ExperimentConfig, sigma_eff: f64, radius: f64) -> Result<Optics, ExperimentError> {
    let spade = |kind| Optics::Spade(kind, build_mode_set(kind, sigma_eff));
    Ok(match cfg.measurement {
        Measurement::Di | Measurement::DiMoments => Optics::Di(match cfg.di_half_extent {
            Some(h) => DiGrid::new(h)?,
            None => DiGrid::covering(radius, sigma_eff),
        }),
        Measurement::SpadeDiagonal => spade(ModeSetKind::DiagonalLowest),
        Measurement::SpadeCartesian => spade(ModeSetKind::CartesianLowest),
        Measurement::SpadeExtended => spade(ModeSetKind::ExtendedThirdOrder),
        Measurement::SpadeHalfHalf => Optics::HalfHalf(
            build_mode_set(ModeSetKind::CartesianLowest, sigma_eff),
            build_mode_set(ModeSetKind::DiagonalLowest, sigma_eff),
        ),
    })
}

fn schema(measurement: Measurement, optics: &Optics) -> FeatureSchema {
    match (measurement, optics) {
        (Measurement::DiMoments, _) => FeatureSchema::DiagonalMoments,
        (_, Optics::Di(grid)) => FeatureSchema::DiRaw { grid: *grid },
        (_, Optics::Spade(kind, _)) => FeatureSchema::Spade { modes: *kind },
        (_, Optics::HalfHalf(..)) => FeatureSchema::SpadeHalfHalf,
    }
}

fn image_features(
    src: &SourceObject,
    params: &OpticsParams,
    optics: &Optics,
    schema: FeatureSchema,
    n: u64,
    seed: u64,
) -> Result<Vec<f64>, ExperimentError> {
    let fv = match optics {
        Optics::Di(grid) => {
            let freq = sample_frequencies(&di_distribution(src, params, grid)?, n, seed)?;
            if schema == FeatureSchema::DiagonalMoments {
                let m = moments_from_di(&freq)?;
                assemble_features(FeatureInput::Moments(&m), schema)?
            } else {
                assemble_features(FeatureInput::Frequencies(&freq), schema)?
            }
        }
        Optics::Spade(_, set) => {
            let freq = sample_frequencies(&spade_distribution(src, params, set)?, n, seed)?;
            assemble_features(FeatureInput::Frequencies(&freq), schema)?
        }
        Optics::HalfHalf(c, d) => {
            let split = sample_split_bases(
                &spade_distribution(src, params, c)?,
                &spade_distribution(src, params, d)?,
                n,
                seed,
            )?;
            assemble_features(FeatureInput::Split(&split), schema)?
        }
    };
    Ok(fv.values)
}

// Images are featurized in parallel blocks so that at most one block of
// distributions is alive at a time.
const BLOCK: usize = 256;

fn feature_matrix(
    sources: &[SourceObject],
    params: &OpticsParams,
    optics: &Optics,
    schema: FeatureSchema,
    n: u64,
    seeds: &[u64],
) -> Result<Array2<f64>, ExperimentError> {
    let mut x = Array2::zeros((sources.len(), schema.len()));
    for (b, block) in sources.chunks(BLOCK).enumerate() {
        let rows: Vec<Vec<f64>> = block
            .par_iter()
            .enumerate()
            .map(|(i, src)| image_features(src, params, optics, schema, n, seeds[b * BLOCK + i]))
            .collect::<Result<_, _>>()?;
        for (i, row) in rows.into_iter().enumerate() {
            x.row_mut(b * BLOCK + i).assign(&ndarray::ArrayView1::from(&row[..]));
        }
    }
    Ok(x)
}

/// Runs every cell of the sweep on already-loaded data; writes nothing.
pub fn run_cells(
    cfg: &ExperimentConfig,
    images: &RawImageSet,
    labels: &LabelSet,
) -> Result<ExperimentReport, ExperimentError> {
    cfg.check()?;
    let started = Instant::now();
    let sources = prepare_sources(cfg, images, labels)?;
    let y: Vec<u8> = sources.iter().map(|s| s.label).collect();
    let radius = sources.iter().map(SourceObject::radius).fold(0.0, f64::max);
    let spec = cfg.model_spec();

    let mut cells = Vec::new();
    for &f in &cfg.scale_factors {
        let params = OpticsParams::new(cfg.sigma, f)?;
        let sigma_eff = params.sigma_eff();
        let optics = cell_optics(cfg, sigma_eff, radius)?;
        let schema = schema(cfg.measurement, &optics);
        for &n in &cfg.photon_counts {
            let cell = [SeedPart::Real(f), SeedPart::Int(n)];
            let sample_seed = derive_seed(cfg.seed, &[&[SeedPart::Tag("sample")], &cell[..]].concat());
            let evaluation_seed = derive_seed(cfg.seed, &[&[SeedPart::Tag("evaluate")], &cell[..]].concat());
            let seeds: Vec<u64> = sources
                .iter()
                .map(|s| derive_seed(sample_seed, &[SeedPart::Int(s.index as u64)]))
                .collect();

            log::info!("cell sigma_eff={sigma_eff:.4} N={n}: {} images, {} features", sources.len(), schema.len());
            let x = feature_matrix(&sources, &params, &optics, schema, n, &seeds)?;
            let report = evaluate(&spec, x.view(), &y, cfg.folds, cfg.train_fraction, evaluation_seed)?;
            log::info!("  accuracy {:.4} +- {:.4}", report.accuracy_mean, report.accuracy_std);

            cells.push(CellResult {
                scale_factor: f,
                sigma_eff,
                photons: n,
                feature_schema: schema.tag(),
                feature_len: schema.len(),
                di_half_extent: match optics {
                    Optics::Di(g) => Some(g.half_extent),
                    _ => None,
                },
                mode_sets: optics.records(),
                sample_seed,
                evaluation_seed,
                image_seeds: sources.iter().zip(&seeds).map(|(s, &k)| (s.index, s.label, k)).collect(),
                report,
            });
        }
    }

    let mut notes = vec![
        "accuracy_std is the population standard deviation over test folds".to_string(),
        "rows of each confusion matrix are ground truth, columns are predictions".to_string(),
        "one photon sample per image per cell, drawn once before training".to_string(),
    ];
    if cfg.model == ModelKind::Fcnn {
        notes.push("fcnn loss is the mean negated binary cross entropy (minimized)".to_string());
    }
    if cfg.measurement.uses_di() && cfg.di_half_extent.is_none() {
        notes.push(format!(
            "DI grid sized per scale factor from max source radius {radius:.3} plus 5.5 sigma_eff"
        ));
    }

    Ok(ExperimentReport {
        config: cfg.clone(),
        realized_counts: class_counts(&sources),
        cells,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        notes,
    })
}

/// CSV with columns `sigma_eff,N,accuracy_mean,accuracy_std`, one row per cell
/// in sweep order.
pub fn write_accuracy_csv<W: Write>(cells: &[CellResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sigma_eff", "N", "accuracy_mean", "accuracy_std"])?;
    for c in cells {
        w.write_record([
            format!("{:.6}", c.sigma_eff),
            c.photons.to_string(),
            c.report.accuracy_mean.to_string(),
            c.report.accuracy_std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Confusion counts with a `truth` column and one column per predicted class.
pub fn write_confusion_csv<W: Write>(report: &EvaluationReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["truth".to_string()];
    header.extend(report.classes.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for (c, row) in report.classes.iter().zip(&report.confusion) {
        let mut rec = vec![c.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_seeds_csv<W: Write>(cell: &CellResult, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["image_index", "label", "seed"])?;
    for (i, l, s) in &cell.image_seeds {
        w.write_record([i.to_string(), l.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, ExperimentError> {
    Ok(std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

/// Writes `accuracy.csv`, per-cell `confusion_*.csv`, `report_*.json` and
/// `seeds_*.csv`, and `manifest.json` into `dir`.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("accuracy.csv");
    write_accuracy_csv(&report.cells, create(&path)?).map_err(csv_err(&path))?;
    for cell in &report.cells {
        let id = cell.id();
        let path = dir.join(format!("confusion_{id}.csv"));
        write_confusion_csv(&cell.report, create(&path)?).map_err(csv_err(&path))?;
        let path = dir.join(format!("seeds_{id}.csv"));
        write_seeds_csv(cell, create(&path)?).map_err(csv_err(&path))?;
        let path = dir.join(format!("report_{id}.json"));
        serde_json::to_writer_pretty(create(&path)?, &cell.report)
            .map_err(|e| ExperimentError::Io { path: path.clone(), source: e.into() })?;
    }
    let path = dir.join("manifest.json");
    serde_json::to_writer_pretty(create(&path)?, report)
        .map_err(|e| ExperimentError::Io { path: path.clone(), source: e.into() })?;
    Ok(())
}

/// Loads the data, runs the sweep on the worker pool and writes all outputs
/// to the configured directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    cfg.check()?;
    let (images, labels) = load_data(cfg)?;
    let report = worker_pool()?.install(|| run_cells(cfg, &images, &labels))?;
    write_outputs(&report, &cfg.output_dir)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationSummary {
    pub realized_counts: Vec<ClassCount>,
    pub cells: usize,
    pub sigma_eff: Vec<f64>,
    /// DI grid half-width per scale factor, for DI measurements.
    pub di_half_extent: Vec<u32>,
    pub feature_len: Vec<usize>,
}

/// Dry run: schema checks, dataset readability, fold feasibility and the DI
/// leakage guard, without sampling or training.
pub fn validate(cfg: &ExperimentConfig) -> Result<ValidationSummary, ExperimentError> {
    cfg.check()?;
    let (images, labels) = load_data(cfg)?;
    validate_on(cfg, &images, &labels)
}

pub fn validate_on(
    cfg: &ExperimentConfig,
    images: &RawImageSet,
    labels: &LabelSet,
) -> Result<ValidationSummary, ExperimentError> {
    cfg.check()?;
    let sources = prepare_sources(cfg, images, labels)?;
    let realized_counts = class_counts(&sources);
    for c in &realized_counts {
        let train = (cfg.train_fraction * c.count as f64).round() as usize;
        let test = c.count - train.min(c.count);
        if test < cfg.folds {
            return Err(ExperimentError::Config(format!(
                "class {} leaves {test} test images for {} folds",
                c.class, cfg.folds
            )));
        }
    }
    let radius = sources.iter().map(SourceObject::radius).fold(0.0, f64::max);
    let mut summary = ValidationSummary {
        realized_counts,
        cells: cfg.scale_factors.len() * cfg.photon_counts.len(),
        sigma_eff: vec![],
        di_half_extent: vec![],
        feature_len: vec![],
    };
    for &f in &cfg.scale_factors {
        let params = OpticsParams::new(cfg.sigma, f)?;
        let optics = cell_optics(cfg, params.sigma_eff(), radius)?;
        if let Optics::Di(grid) = &optics {
            let worst = sources
                .par_iter()
                .map(|s| (di_leakage(s, &params, grid), s.index))
                .reduce(|| (0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
            if worst.0 > MAX_LEAKAGE {
                return Err(OpticsError::Leakage {
                    leakage: worst.0,
                    half_extent: grid.half_extent,
                    sigma_eff: params.sigma_eff(),
                }
                .into());
            }
            summary.di_half_extent.push(grid.half_extent);
        }
        summary.sigma_eff.push(params.sigma_eff());
        summary.feature_len.push(schema(cfg.measurement, &optics).len());
    }
    Ok(summary)
}
