//! Information-theoretic floor on recovery error.
//!
//! The rate the observations can carry is bounded by the AWGN capacity of the
//! observed entries; the best distortion at that rate follows from reverse
//! water-filling over the eigenvalues of the source covariance.

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::csv_writer;
use crate::linalg;

/// Logarithm used for the channel capacity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityLog {
    /// Natural log, consistent with rates in nats.
    #[default]
    Natural,
    /// Base-10 log as sometimes printed for the capacity expression.
    Base10,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDistortionPoint {
    pub theta: f64,
    /// Nats per source symbol.
    pub rate: f64,
    /// Mean squared error per entry.
    pub distortion: f64,
}

fn check_eigenvalues(eigenvalues: &[f64]) -> Result<()> {
    if eigenvalues.is_empty() {
        return Err(Error::domain("eigenvalues", "must not be empty"));
    }
    if eigenvalues.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::domain("eigenvalues", "must be finite and non-negative"));
    }
    Ok(())
}

/// One point of the parametric reverse water-filling curve.
pub fn rd_point(eigenvalues: &[f64], theta: f64) -> Result<RateDistortionPoint> {
    check_eigenvalues(eigenvalues)?;
    if !(theta > 0.0) {
        return Err(Error::domain("theta", format!("must be positive, got {theta}")));
    }
    Ok(rd_unchecked(eigenvalues, theta))
}

fn rd_unchecked(eigenvalues: &[f64], theta: f64) -> RateDistortionPoint {
    let n = eigenvalues.len() as f64;
    let (mut rate, mut distortion) = (0.0, 0.0);
    for &l in eigenvalues.iter().filter(|&&l| l > 0.0) {
        if l > theta {
            rate += 0.5 * (l / theta).ln();
        }
        distortion += theta.min(l);
    }
    RateDistortionPoint {
        theta,
        rate: rate / n,
        distortion: distortion / n,
    }
}

/// Smallest distortion reachable at `target_rate` nats per symbol.
///
/// Bisects on `ln(theta)` over `(0, max lambda]` down to the resolution of
/// `f64`, well inside a relative rate error of `1e-10`.
pub fn distortion_at_rate(eigenvalues: &[f64], target_rate: f64) -> Result<f64> {
    check_eigenvalues(eigenvalues)?;
    if !(target_rate >= 0.0) {
        return Err(Error::domain("target_rate", format!("must be non-negative, got {target_rate}")));
    }
    let n = eigenvalues.len() as f64;
    let max = eigenvalues.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(0.0);
    }
    if target_rate == 0.0 {
        return Ok(eigenvalues.iter().sum::<f64>() / n);
    }
    if target_rate.is_infinite() {
        return Ok(0.0);
    }
    // R(theta) <= (1/2) ln(max / theta), so this lower end already overshoots.
    let mut hi = max.ln();
    let mut lo = hi - 2.0 * target_rate * n - 1.0;
    while rd_unchecked(eigenvalues, lo.exp()).rate < target_rate {
        lo -= 2.0 * (hi - lo);
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if rd_unchecked(eigenvalues, mid.exp()).rate > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(rd_unchecked(eigenvalues, (0.5 * (lo + hi)).exp()).distortion)
}

/// Rate budget in nats per source symbol carried by `n_observed` noisy
/// entries at the given SNR.
pub fn rate_budget(n_observed: usize, n_rows: usize, n_cols: usize, snr_db: f64, log: CapacityLog) -> f64 {
    let snr = 10f64.powf(snr_db / 10.0);
    let capacity = match log {
        CapacityLog::Natural => snr.ln_1p(),
        CapacityLog::Base10 => (1.0 + snr).log10(),
    };
    n_observed as f64 / (2.0 * (n_rows * n_cols) as f64) * capacity
}

/// Lower bound on the NMSE of any estimator, relative to the realized energy
/// `||M||_F^2`.
pub fn opta_nmse(
    sigma_cov: &DMatrix<f64>,
    n_observed: usize,
    n_rows: usize,
    n_cols: usize,
    snr_db: f64,
    ground_truth_energy: f64,
    log: CapacityLog,
) -> Result<f64> {
    if sigma_cov.nrows() != n_rows {
        return Err(Error::shape(format!("{n_rows}x{n_rows} covariance"), sigma_cov.nrows()));
    }
    if !(ground_truth_energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let eigenvalues: Vec<f64> = linalg::symmetric_eigenvalues(sigma_cov)?
        .into_iter()
        .map(|l| l.max(0.0))
        .collect();
    let rate = rate_budget(n_observed, n_rows, n_cols, snr_db, log);
    let d = distortion_at_rate(&eigenvalues, rate)?;
    Ok(d * (n_rows * n_cols) as f64 / ground_truth_energy)
}

/// Writes `gamma,opta_nmse` rows.
pub fn write_opta_csv(path: impl AsRef<Path>, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = csv_writer(File::create(path)?);
    w.write_record(["gamma", "opta_nmse"])?;
    for (gamma, bound) in curve {
        w.write_record([gamma.to_string(), bound.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
