//! Sub-Rayleigh image classification from photon-counting statistics.
//!
//! The pipeline turns MNIST digits into incoherent light sources
//! ([`dataset`]), computes the exact photon-detection distributions of direct
//! imaging and of Hermite-Gaussian mode sorting ([`optics`]), draws
//! finite-photon frequencies from them ([`sampler`]), turns those into
//! classifier inputs ([`features`]) and trains random forests or small
//! fully connected networks on them ([`ml`]). [`experiment`] ties the stages
//! together behind a JSON configuration.

pub mod dataset;
pub mod optics;
pub mod sampler;
pub mod features;
pub mod ml;
pub mod experiment;
