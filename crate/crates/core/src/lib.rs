//! Simulator for communication-efficient decentralized Bayesian federated
//! learning.
//!
//! Devices on a simulated graph run Langevin-type samplers (centralized SGLD,
//! decentralized SGLD, and the compressed CD-BFL scheme) or the compressed
//! frequentist baseline (CF-FL), exchanging sparsified parameter deltas
//! through a lossless synchronous fabric with exact communication accounting.
//! Calibration is measured with reliability bins and the expected
//! calibration error.
//!
//! All numerical code is generic over a [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! harness and CLI use.

pub mod compression;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod network;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod vector;

pub use error::{Error, Result};
pub use rng::{Purpose, RngStream, StreamId};
pub use scalar::Scalar;

/// Dense parameter vector over `f64`.
pub type Params = vector::ParameterVector<f64>;
/// Sparse delta over `f64`.
pub type Delta = vector::SparseDelta<f64>;
/// Mixing matrix over `f64`.
pub type Mixing = network::MixingMatrix<f64>;
/// Dataset with `f64` features.
pub type Data = models::Dataset<f64>;
/// Posterior ensemble over `f64` parameters.
pub type Ensemble = models::PosteriorEnsemble<f64>;
/// Per-device sampler state over `f64`.
pub type Node = samplers::NodeState<f64>;
/// Reliability report over `f64` confidences.
pub type Reliability = metrics::ReliabilityReport<f64>;

/// Single-precision counterparts.
pub mod f32 {
    pub type Params = crate::vector::ParameterVector<f32>;
    pub type Delta = crate::vector::SparseDelta<f32>;
    pub type Mixing = crate::network::MixingMatrix<f32>;
    pub type Data = crate::models::Dataset<f32>;
    pub type Ensemble = crate::models::PosteriorEnsemble<f32>;
}
