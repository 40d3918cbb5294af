use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{csv_err, create, load_data, prepare_sources, ExperimentConfig, ExperimentError};
use crate::dataset::{LabelSet, RawImageSet};
use crate::features::moments_exact;
use crate::sampler::{derive_seed, SeedPart};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScatterRow {
    pub label: u8,
    pub m20: f64,
    pub m02: f64,
    pub diag_plus: f64,
    pub diag_minus: f64,
    pub m03: f64,
}

/// Exact moments of a seeded uniform sample of `scatter_sample_size` selected
/// images, in dataset order.
pub fn scatter_rows(
    cfg: &ExperimentConfig,
    images: &RawImageSet,
    labels: &LabelSet,
) -> Result<Vec<ScatterRow>, ExperimentError> {
    let sources = prepare_sources(cfg, images, labels)?;
    let take = cfg.scatter_sample_size.min(sources.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SeedPart::Tag("scatter")]));
    let mut picked = sample(&mut rng, sources.len(), take).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| {
            let m = moments_exact(&sources[i]);
            ScatterRow {
                label: sources[i].label,
                m20: m.m20,
                m02: m.m02,
                diag_plus: m.diag_plus,
                diag_minus: m.diag_minus,
                m03: m.m03,
            }
        })
        .collect())
}

pub fn write_scatter_csv<W: Write>(rows: &[ScatterRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `scatter.csv` into the configured output directory.
pub fn emit_scatter(cfg: &ExperimentConfig) -> Result<Vec<ScatterRow>, ExperimentError> {
    cfg.check()?;
    let (images, labels) = load_data(cfg)?;
    let rows = scatter_rows(cfg, &images, &labels)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| ExperimentError::Io {
        path: cfg.output_dir.clone(),
        source,
    })?;
    let path = cfg.output_dir.join("scatter.csv");
    write_scatter_csv(&rows, create(&path)?).map_err(csv_err(&path))?;
    Ok(rows)
}
