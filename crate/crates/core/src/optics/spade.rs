use super::hermite::amplitude_table;
use super::{ModeSet, OpticsError, OpticsParams, OutcomeSpace, ProbabilityVector};
use crate::dataset::SourceObject;

const RESIDUAL_TOL: f64 = 1e-9;

/// Photon-detection probabilities over a mode set.
///
/// Each source pixel contributes incoherently: the probability of mode
/// `sum_i a_i HG_{m_i n_i}` is `sum_xy I_xy (sum_i a_i c_{m_i n_i}(x, y))^2`.
/// The residual bucket takes whatever the listed modes leave over.
pub fn spade_distribution(
    src: &SourceObject,
    params: &OpticsParams,
    modes: &ModeSet,
) -> Result<ProbabilityVector, OpticsError> {
    let scale = 2.0 * params.sigma_eff();
    let max_order = modes.max_order();
    let mut p = vec![0.0; modes.outcome_count()];

    for s in &src.samples {
        let ax = amplitude_table(max_order, s.x / scale);
        let ay = amplitude_table(max_order, s.y / scale);
        for (slot, mode) in p.iter_mut().zip(modes.modes()) {
            let amp: f64 = mode
                .terms
                .iter()
                .map(|t| t.coeff * ax[t.m as usize] * ay[t.n as usize])
                .sum();
            *slot += s.w * amp * amp;
        }
    }

    let listed: f64 = p[..modes.modes().len()].iter().sum();
    let rest = src.samples.iter().map(|s| s.w).sum::<f64>() - listed;
    if rest < -RESIDUAL_TOL {
        return Err(OpticsError::NegativeResidual(rest));
    }
    if modes.has_residual() {
        *p.last_mut().unwrap() = rest.max(0.0);
    } else if rest > RESIDUAL_TOL {
        return Err(OpticsError::UnspannedMass(rest));
    }

    Ok(ProbabilityVector {
        outcomes: OutcomeSpace::Labels(modes.labels().clone()),
        p,
    })
}
