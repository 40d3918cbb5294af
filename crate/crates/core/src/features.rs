//! Classifier inputs: relative frequencies and intensity moments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SourceObject;
use crate::optics::{build_mode_set, DiGrid, ModeSetKind, OutcomeSpace, ProbabilityVector};
use crate::sampler::{FrequencyVector, SplitFrequencies};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("input does not match schema {schema}: {reason}")]
    SchemaMismatch { schema: String, reason: String },
    #[error("moments need a DI grid distribution")]
    NotAGrid,
}

/// Weighted moments about the origin (the source centroid).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentEstimates {
    /// `<x^2>`
    pub m20: f64,
    /// `<y^2>`
    pub m02: f64,
    /// `<(x+y)^2> / 2`
    pub diag_plus: f64,
    /// `<(x-y)^2> / 2`
    pub diag_minus: f64,
    /// `<y^3>`
    pub m03: f64,
    /// `<y^4>`
    pub m04: f64,
}

impl MomentEstimates {
    fn from_weighted(points: impl Iterator<Item = (f64, f64, f64)>) -> Self {
        let mut m = MomentEstimates::default();
        for (x, y, w) in points {
            let (s, d) = (x + y, x - y);
            let y2 = y * y;
            m.m20 += w * x * x;
            m.m02 += w * y2;
            m.diag_plus += 0.5 * w * s * s;
            m.diag_minus += 0.5 * w * d * d;
            m.m03 += w * y2 * y;
            m.m04 += w * y2 * y2;
        }
        m
    }
}

/// Exact moments of the source intensity.
pub fn moments_exact(src: &SourceObject) -> MomentEstimates {
    MomentEstimates::from_weighted(src.samples.iter().map(|s| (s.x, s.y, s.w)))
}

fn grid_moments(grid: &DiGrid, weights: &[f64]) -> MomentEstimates {
    MomentEstimates::from_weighted(weights.iter().enumerate().filter(|(_, &w)| w != 0.0).map(
        |(k, &w)| {
            let (x, y) = grid.coords(k);
            (x as f64, y as f64, w)
        },
    ))
}

/// Moments of the sampled image-plane distribution. No deconvolution: the
/// second moments carry the extra `sigma_eff^2` of the blur.
pub fn moments_from_di(f: &FrequencyVector) -> Result<MomentEstimates, FeatureError> {
    match &f.outcomes {
        OutcomeSpace::Grid(grid) => Ok(grid_moments(grid, &f.frequencies())),
        OutcomeSpace::Labels(_) => Err(FeatureError::NotAGrid),
    }
}

/// Moments of an exact DI distribution.
pub fn moments_of_distribution(p: &ProbabilityVector) -> Result<MomentEstimates, FeatureError> {
    match &p.outcomes {
        OutcomeSpace::Grid(grid) => Ok(grid_moments(grid, &p.p)),
        OutcomeSpace::Labels(_) => Err(FeatureError::NotAGrid),
    }
}

/// Layout of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureSchema {
    /// Mode frequencies of one mode set, residual bucket last.
    Spade { modes: ModeSetKind },
    /// Cartesian block then diagonal block.
    SpadeHalfHalf,
    /// Raw DI frequencies, row-major over the grid.
    DiRaw { grid: DiGrid },
    /// `[diag_plus, diag_minus]`
    DiagonalMoments,
    /// `[m20, m02]`
    CartesianMoments,
}

impl FeatureSchema {
    pub fn tag(&self) -> String {
        match self {
            FeatureSchema::Spade { modes } => format!("spade_{modes}"),
            FeatureSchema::SpadeHalfHalf => "spade_half_half".into(),
            FeatureSchema::DiRaw { grid } => format!("di_raw_{}", grid.half_extent),
            FeatureSchema::DiagonalMoments => "diagonal_moments".into(),
            FeatureSchema::CartesianMoments => "cartesian_moments".into(),
        }
    }

    /// Slot names, in vector order.
    pub fn slot_names(&self) -> Vec<String> {
        match self {
            FeatureSchema::Spade { modes } => build_mode_set(*modes, 1.0).labels().to_vec(),
            FeatureSchema::SpadeHalfHalf => {
                let c = build_mode_set(ModeSetKind::CartesianLowest, 1.0);
                let d = build_mode_set(ModeSetKind::DiagonalLowest, 1.0);
                c.labels()
                    .iter()
                    .map(|l| format!("cart:{l}"))
                    .chain(d.labels().iter().map(|l| format!("diag:{l}")))
                    .collect()
            }
            FeatureSchema::DiRaw { grid } => (0..grid.len())
                .map(|k| {
                    let (x, y) = grid.coords(k);
                    format!("({x},{y})")
                })
                .collect(),
            FeatureSchema::DiagonalMoments => vec!["diag_plus".into(), "diag_minus".into()],
            FeatureSchema::CartesianMoments => vec!["m20".into(), "m02".into()],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FeatureSchema::DiRaw { grid } => grid.len(),
            _ => self.slot_names().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum FeatureInput<'a> {
    Frequencies(&'a FrequencyVector),
    Split(&'a SplitFrequencies),
    Moments(&'a MomentEstimates),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema: FeatureSchema,
}

fn mismatch(schema: &FeatureSchema, reason: impl Into<String>) -> FeatureError {
    FeatureError::SchemaMismatch {
        schema: schema.tag(),
        reason: reason.into(),
    }
}

fn check_labels(schema: &FeatureSchema, got: &OutcomeSpace, kind: ModeSetKind) -> Result<(), FeatureError> {
    let want = build_mode_set(kind, 1.0);
    match got {
        OutcomeSpace::Labels(l) if l[..] == want.labels()[..] => Ok(()),
        OutcomeSpace::Labels(l) => Err(mismatch(
            schema,
            format!("outcomes {:?} are not the {kind} set", &l[..]),
        )),
        OutcomeSpace::Grid(_) => Err(mismatch(schema, "got DI grid frequencies")),
    }
}

pub fn assemble_features(
    input: FeatureInput<'_>,
    schema: FeatureSchema,
) -> Result<FeatureVector, FeatureError> {
    let values = match (schema, input) {
        (FeatureSchema::Spade { modes }, FeatureInput::Frequencies(f)) => {
            check_labels(&schema, &f.outcomes, modes)?;
            f.frequencies()
        }
        (FeatureSchema::SpadeHalfHalf, FeatureInput::Split(s)) => {
            check_labels(&schema, &s.cartesian.outcomes, ModeSetKind::CartesianLowest)?;
            check_labels(&schema, &s.diagonal.outcomes, ModeSetKind::DiagonalLowest)?;
            s.frequencies()
        }
        (FeatureSchema::DiRaw { grid }, FeatureInput::Frequencies(f)) => match &f.outcomes {
            OutcomeSpace::Grid(g) if *g == grid => f.frequencies(),
            _ => return Err(mismatch(&schema, "frequencies are not over this DI grid")),
        },
        (FeatureSchema::DiagonalMoments, FeatureInput::Moments(m)) => vec![m.diag_plus, m.diag_minus],
        (FeatureSchema::CartesianMoments, FeatureInput::Moments(m)) => vec![m.m20, m.m02],
        (_, other) => {
            let got = match other {
                FeatureInput::Frequencies(_) => "frequencies",
                FeatureInput::Split(_) => "split-basis frequencies",
                FeatureInput::Moments(_) => "moments",
            };
            return Err(mismatch(&schema, format!("cannot take {got}")));
        }
    };
    Ok(FeatureVector { values, schema })
}
