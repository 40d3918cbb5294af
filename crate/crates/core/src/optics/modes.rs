use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::OpticsError;

const ORTHO_TOL: f64 = 1e-12;

pub const RESIDUAL_LABEL: &str = "residual";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTerm {
    pub m: u32,
    pub n: u32,
    pub coeff: f64,
}

/// A detection mode: a real superposition of HG modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMode {
    pub name: String,
    pub terms: Vec<ModeTerm>,
}

impl DetectionMode {
    pub fn new(name: impl Into<String>, terms: Vec<ModeTerm>) -> Result<Self, OpticsError> {
        let mode = DetectionMode {
            name: name.into(),
            terms,
        };
        for (i, a) in mode.terms.iter().enumerate() {
            if let Some(b) = mode.terms[i + 1..].iter().find(|b| (b.m, b.n) == (a.m, a.n)) {
                return Err(OpticsError::DuplicateTerm {
                    mode: mode.name.clone(),
                    m: b.m,
                    n: b.n,
                });
            }
        }
        let norm_sq = mode.dot(&mode);
        if (norm_sq - 1.0).abs() > ORTHO_TOL {
            return Err(OpticsError::NotUnitNorm {
                mode: mode.name,
                norm_sq,
            });
        }
        Ok(mode)
    }

    /// The pure mode `HG_mn`.
    pub fn hg(m: u32, n: u32) -> Self {
        DetectionMode {
            name: format!("HG{m}{n}"),
            terms: vec![ModeTerm { m, n, coeff: 1.0 }],
        }
    }

    fn pair(name: String, first: (u32, u32, f64), second: (u32, u32, f64)) -> Self {
        let term = |(m, n, coeff)| ModeTerm { m, n, coeff };
        DetectionMode {
            name,
            terms: vec![term(first), term(second)],
        }
    }

    pub fn dot(&self, other: &DetectionMode) -> f64 {
        self.terms
            .iter()
            .flat_map(|a| {
                other
                    .terms
                    .iter()
                    .filter(move |b| (b.m, b.n) == (a.m, a.n))
                    .map(move |b| a.coeff * b.coeff)
            })
            .sum()
    }

    pub fn max_order(&self) -> u32 {
        self.terms.iter().map(|t| t.m.max(t.n)).max().unwrap_or(0)
    }
}

/// The named mode sets used by the measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSetKind {
    /// `{HG00, HG10, HG01}`
    CartesianLowest,
    /// `{HG00, (HG10+HG01)/sqrt2, (HG10-HG01)/sqrt2}`
    DiagonalLowest,
    /// `{HG01, HG10, HG11, HG02, HG20}`
    SecondOrder5dim,
    /// Ten modes resolving the third moment along y; see [`build_mode_set`].
    ExtendedThirdOrder,
}

impl fmt::Display for ModeSetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeSetKind::CartesianLowest => "cartesian_lowest",
            ModeSetKind::DiagonalLowest => "diagonal_lowest",
            ModeSetKind::SecondOrder5dim => "second_order_5dim",
            ModeSetKind::ExtendedThirdOrder => "extended_third_order",
        })
    }
}

/// An ordered, orthonormal list of detection modes, optionally followed by
/// a residual bucket collecting every other outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    modes: Vec<DetectionMode>,
    residual: bool,
    labels: Arc<[String]>,
}

impl ModeSet {
    pub fn new(modes: Vec<DetectionMode>, residual: bool) -> Result<Self, OpticsError> {
        for mode in &modes {
            // re-run the per-mode checks for modes built by hand
            DetectionMode::new(mode.name.clone(), mode.terms.clone())?;
        }
        for (i, a) in modes.iter().enumerate() {
            for b in &modes[i + 1..] {
                let dot = a.dot(b);
                if dot.abs() > ORTHO_TOL {
                    return Err(OpticsError::NotOrthogonal {
                        a: a.name.clone(),
                        b: b.name.clone(),
                        dot,
                    });
                }
            }
        }
        let mut labels: Vec<String> = modes.iter().map(|m| m.name.clone()).collect();
        if residual {
            labels.push(RESIDUAL_LABEL.to_string());
        }
        Ok(ModeSet {
            modes,
            residual,
            labels: labels.into(),
        })
    }

    pub fn modes(&self) -> &[DetectionMode] {
        &self.modes
    }

    pub fn has_residual(&self) -> bool {
        self.residual
    }

    /// Outcome labels: mode names, then `residual` if present.
    pub fn labels(&self) -> &Arc<[String]> {
        &self.labels
    }

    pub fn outcome_count(&self) -> usize {
        self.labels.len()
    }

    pub fn max_order(&self) -> u32 {
        self.modes.iter().map(|m| m.max_order()).max().unwrap_or(0)
    }
}

/// Rotation of the `(HG01, HG02)` pair that weights the third moment along y
/// against the second- and fourth-order background. Returns `(sin, cos)`.
pub fn rotation_angle(sigma_eff: f64) -> (f64, f64) {
    let t = 2.0 * sigma_eff;
    let norm = (t * t + 2.0 * t.powi(4)).sqrt();
    (t / norm, 2f64.sqrt() * t * t / norm)
}

pub fn build_mode_set(kind: ModeSetKind, sigma_eff: f64) -> ModeSet {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let hg = DetectionMode::hg;
    let modes = match kind {
        ModeSetKind::CartesianLowest => vec![hg(0, 0), hg(1, 0), hg(0, 1)],
        ModeSetKind::DiagonalLowest => vec![
            hg(0, 0),
            DetectionMode::pair("HG10+HG01".into(), (1, 0, r), (0, 1, r)),
            DetectionMode::pair("HG10-HG01".into(), (1, 0, r), (0, 1, -r)),
        ],
        ModeSetKind::SecondOrder5dim => vec![hg(0, 1), hg(1, 0), hg(1, 1), hg(0, 2), hg(2, 0)],
        ModeSetKind::ExtendedThirdOrder => {
            let (s, c) = rotation_angle(sigma_eff);
            vec![
                hg(0, 0),
                DetectionMode::pair("phi+".into(), (0, 1, s), (0, 2, c)),
                DetectionMode::pair("phi-".into(), (0, 1, c), (0, 2, -s)),
                hg(1, 0),
                hg(2, 0),
                hg(1, 1),
                hg(0, 3),
                hg(1, 2),
                hg(2, 1),
                hg(3, 0),
            ]
        }
    };
    ModeSet::new(modes, true).expect("built-in mode sets are orthonormal")
}
