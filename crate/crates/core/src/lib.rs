//! Recovery of missing entries in Gaussian-correlated state matrices.
//!
//! The crate covers the whole experimental pipeline: a synthetic Gaussian
//! source, uniform and bursty (two-state Markov) erasure masks, noisy
//! acquisition, three estimators (column-wise LMMSE, singular value
//! thresholding and its Bayesian variant), the rate-distortion floor on
//! achievable error, and a deterministic Monte-Carlo sweep harness.

pub mod acquisition;
pub mod bsvt;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod lmmse;
pub mod opta;
pub mod sampling;
pub mod source;
pub mod svt;

pub use acquisition::{acquire, sigma_from_snr, NoisyObservations};
pub use bsvt::{bsvt_recover, noise_level, optimal_threshold, sure_risk, BsvtConfig, BsvtOutcome, Conditioning};
pub use error::{Error, Result};
pub use lmmse::{lmmse_column, lmmse_posterior_distortion, lmmse_recover, LmmseModel};
pub use opta::{distortion_at_rate, opta_nmse, rd_point, CapacityLog, RateDistortionPoint};
pub use sampling::{
    markov_mask, markov_params_from_targets, mask_stats, uniform_mask, Calibration, MarkovSamplerParams,
    ObservationMask,
};
pub use source::{
    mismatch_covariance, sample_source, synthetic_covariance, GaussianSourceSpec, MismatchMode, StateMatrix,
};
pub use svt::{soft_threshold, svt_recover, SvtConfig, SvtOutcome};
