//! Finite-photon statistics drawn from exact distributions.
//!
//! Every draw stream is a ChaCha8 generator keyed by a 64-bit seed. Seeds for
//! individual images and measurements are derived from the experiment's
//! master seed with [`derive_seed`], so a stream never depends on the order
//! in which work is scheduled.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::optics::{OutcomeSpace, ProbabilityVector};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("photon count must be at least {min}, got {got}")]
    TooFewPhotons { min: u64, got: u64 },
    #[error("probability vector is not a distribution (total {total}, min {min})")]
    InvalidDistribution { total: f64, min: f64 },
}

/// One component of a derived seed path.
#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    Tag(&'a str),
    Int(u64),
    Real(f64),
}

/// Stable child seed: the first eight bytes of SHA-256 over the master seed
/// and a tagged encoding of each path component.
pub fn derive_seed(master: u64, path: &[SeedPart<'_>]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for part in path {
        match part {
            SeedPart::Tag(s) => {
                h.update(*b"s");
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            SeedPart::Int(v) => {
                h.update(*b"i");
                h.update(v.to_le_bytes());
            }
            SeedPart::Real(v) => {
                h.update(*b"r");
                h.update(v.to_bits().to_le_bytes());
            }
        }
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Photon counts per outcome after `n` detections.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyVector {
    pub outcomes: OutcomeSpace,
    pub counts: Vec<u64>,
    pub n: u64,
}

impl FrequencyVector {
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// CSV with columns `outcome_label,count,N`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["outcome_label", "count", "N"])?;
        let n = self.n.to_string();
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.outcomes.label(i), c.to_string(), n.clone()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Photons split between a Cartesian and a diagonal mode measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFrequencies {
    pub cartesian: FrequencyVector,
    pub diagonal: FrequencyVector,
}

impl SplitFrequencies {
    /// Cartesian block then diagonal block, each normalized by its own count.
    pub fn frequencies(&self) -> Vec<f64> {
        let mut f = self.cartesian.frequencies();
        f.extend(self.diagonal.frequencies());
        f
    }

    pub fn labels(&self) -> Vec<String> {
        let block = |prefix: &str, fv: &FrequencyVector| {
            (0..fv.outcomes.len())
                .map(|i| format!("{prefix}:{}", fv.outcomes.label(i)))
                .collect::<Vec<_>>()
        };
        let mut l = block("cart", &self.cartesian);
        l.extend(block("diag", &self.diagonal));
        l
    }
}

struct Cdf {
    cumulative: Vec<f64>,
    last_live: usize,
}

impl Cdf {
    fn new(p: &ProbabilityVector) -> Result<Self, SamplerError> {
        let min = p.p.iter().copied().fold(f64::INFINITY, f64::min);
        let total = p.total();
        if min.is_nan() || min < 0.0 || !total.is_finite() || (total - 1.0).abs() > 1e-9 {
            return Err(SamplerError::InvalidDistribution { total, min });
        }
        let mut acc = 0.0;
        let cumulative = p
            .p
            .iter()
            .map(|&v| {
                acc += v;
                acc
            })
            .collect();
        let last_live = p.p.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        Ok(Cdf {
            cumulative,
            last_live,
        })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        // outcome k owns [cdf[k-1], cdf[k]), so empty outcomes are never hit
        let k = self.cumulative.partition_point(|&c| c <= u);
        k.min(self.last_live)
    }
}

/// Multinomial counts of `n` independent inverse-CDF draws from `p`.
pub fn sample_frequencies(
    p: &ProbabilityVector,
    n: u64,
    seed: u64,
) -> Result<FrequencyVector, SamplerError> {
    if n == 0 {
        return Err(SamplerError::TooFewPhotons { min: 1, got: 0 });
    }
    let cdf = Cdf::new(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; p.p.len()];
    for _ in 0..n {
        counts[cdf.draw(&mut rng)] += 1;
    }
    Ok(FrequencyVector {
        outcomes: p.outcomes.clone(),
        counts,
        n,
    })
}

/// Sends `ceil(n/2)` photons to the Cartesian distribution and `floor(n/2)`
/// to the diagonal one, each with its own derived stream.
pub fn sample_split_bases(
    p_cartesian: &ProbabilityVector,
    p_diagonal: &ProbabilityVector,
    n: u64,
    seed: u64,
) -> Result<SplitFrequencies, SamplerError> {
    if n < 2 {
        return Err(SamplerError::TooFewPhotons { min: 2, got: n });
    }
    let n_cart = n.div_ceil(2);
    let cartesian = sample_frequencies(
        p_cartesian,
        n_cart,
        derive_seed(seed, &[SeedPart::Tag("cartesian")]),
    )?;
    let diagonal = sample_frequencies(
        p_diagonal,
        n - n_cart,
        derive_seed(seed, &[SeedPart::Tag("diagonal")]),
    )?;
    Ok(SplitFrequencies {
        cartesian,
        diagonal,
    })
}
