//! Singular value thresholding: the nuclear-norm proximal operator and the
//! classic two-step completion iteration.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::acquisition::NoisyObservations;
use crate::error::{Error, Result};
use crate::linalg::{self, GramSpectrum};
use crate::source::StateMatrix;

pub const DEFAULT_STEP_SIZE: f64 = 1.2;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_MAX_ITERATIONS: usize = 500;

/// `tau` falls back to `5 * n_rows` when unset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvtConfig {
    pub tau: Option<f64>,
    pub step_size: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvtConfig {
    fn default() -> Self {
        Self {
            tau: None,
            step_size: DEFAULT_STEP_SIZE,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl SvtConfig {
    pub fn with_tau(tau: f64) -> Self {
        Self {
            tau: Some(tau),
            ..Self::default()
        }
    }

    pub fn tau_for(&self, n_rows: usize) -> f64 {
        self.tau.unwrap_or(5.0 * n_rows as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(tau) = self.tau {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(Error::domain("tau", format!("must be non-negative, got {tau}")));
            }
        }
        validate_loop(self.step_size, self.tolerance, self.max_iterations)
    }
}

pub(crate) fn validate_loop(step_size: f64, tolerance: f64, max_iterations: usize) -> Result<()> {
    if !(step_size > 0.0 && step_size < 2.0) {
        return Err(Error::domain("step_size", format!("must lie in (0, 2), got {step_size}")));
    }
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(Error::domain("tolerance", format!("must be positive, got {tolerance}")));
    }
    if max_iterations == 0 {
        return Err(Error::domain("max_iterations", "must be at least 1"));
    }
    Ok(())
}

/// `D_tau(y) = U diag((s - tau)_+) V^T`.
pub fn soft_threshold(y: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::domain("tau", format!("must be non-negative, got {tau}")));
    }
    Ok(linalg::svd(y)?.shrink(tau))
}

#[derive(Debug, Clone)]
pub struct SvtOutcome {
    pub estimate: StateMatrix,
    pub iterations: usize,
    pub converged: bool,
}

/// Relative misfit `||P_Omega(x) - obs|| / ||obs||` (absolute when the
/// observations are all zero).
pub(crate) fn observed_residual(x: &DMatrix<f64>, obs: &NoisyObservations, obs_norm: f64) -> f64 {
    let misfit: f64 = obs.iter().map(|(i, j, v)| (x[(i, j)] - v).powi(2)).sum::<f64>().sqrt();
    if obs_norm > 0.0 {
        misfit / obs_norm
    } else {
        misfit
    }
}

/// `y += step * P_Omega(obs - x)`.
pub(crate) fn dual_step(y: &mut DMatrix<f64>, x: &DMatrix<f64>, obs: &NoisyObservations, step: f64) {
    for (i, j, v) in obs.iter() {
        y[(i, j)] += step * (v - x[(i, j)]);
    }
}

/// Runs SVT from `Y^0 = 0` until the observed residual drops below the
/// tolerance or the iteration cap is hit. Non-convergence is reported through
/// the flag rather than as an error.
pub fn svt_recover(obs: &NoisyObservations, config: &SvtConfig) -> Result<SvtOutcome> {
    svt_recover_with(obs, config, |_, _| {})
}

/// [`svt_recover`] with a hook called on every dual iterate `Y^k`.
pub fn svt_recover_with<F>(obs: &NoisyObservations, config: &SvtConfig, mut inspect: F) -> Result<SvtOutcome>
where
    F: FnMut(usize, &DMatrix<f64>),
{
    config.validate()?;
    if obs.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let tau = config.tau_for(obs.n_rows());
    let obs_norm = obs.energy().sqrt();
    let mut y = DMatrix::zeros(obs.n_rows(), obs.n_cols());
    let mut x = y.clone();
    for k in 1..=config.max_iterations {
        x = shrink_iterate(&y, tau)?;
        if observed_residual(&x, obs, obs_norm) <= config.tolerance {
            return Ok(SvtOutcome {
                estimate: StateMatrix::new(x)?,
                iterations: k,
                converged: true,
            });
        }
        dual_step(&mut y, &x, obs, config.step_size);
        inspect(k, &y);
    }
    Ok(SvtOutcome {
        estimate: StateMatrix::new(x)?,
        iterations: config.max_iterations,
        converged: false,
    })
}

fn shrink_iterate(y: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    Ok(GramSpectrum::new(y)?.shrink(y, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::acquire;
    use crate::sampling::{uniform_mask, ObservationMask};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn zero_threshold_is_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let y = gaussian(7, 5, &mut r);
        let out = soft_threshold(&y, 0.0).unwrap();
        assert!((out - &y).norm() <= 1e-12 * y.norm());
    }

    #[test]
    fn diagonal_shrinkage() {
        let y = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let out = soft_threshold(&y, 2.0).unwrap();
        assert!((out - DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).norm() < 1e-14);
    }

    #[test]
    fn large_threshold_annihilates() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let y = gaussian(6, 9, &mut r);
        let smax = linalg::singular_values(&y).unwrap()[0];
        assert_eq!(soft_threshold(&y, smax).unwrap(), DMatrix::zeros(6, 9));
    }

    #[test]
    fn negative_tau_rejected() {
        assert!(soft_threshold(&DMatrix::zeros(2, 2), -1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SvtConfig { step_size: 2.0, ..Default::default() }.validate().is_err());
        assert!(SvtConfig { tolerance: 0.0, ..Default::default() }.validate().is_err());
        assert!(SvtConfig { max_iterations: 0, ..Default::default() }.validate().is_err());
        assert_eq!(SvtConfig::default().tau_for(40), 200.0);
    }

    #[test]
    fn empty_observations_rejected() {
        let m = crate::source::StateMatrix::new(DMatrix::from_element(3, 3, 1.0)).unwrap();
        let obs = acquire(&m, &ObservationMask::empty(3, 3).unwrap(), 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(svt_recover(&obs, &SvtConfig::default()), Err(Error::EmptyObservations)));
    }

    #[test]
    fn full_mask_meets_stopping_rule() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let a = gaussian(20, 2, &mut r) * gaussian(2, 20, &mut r);
        let m = crate::source::StateMatrix::new(a.clone()).unwrap();
        let obs = acquire(&m, &ObservationMask::full(20, 20).unwrap(), 0.0, &mut r).unwrap();
        let cfg = SvtConfig::with_tau(1.0);
        let out = svt_recover(&obs, &cfg).unwrap();
        assert!(out.converged);
        let rel = (out.estimate.values() - &a).norm() / a.norm();
        assert!(rel <= cfg.tolerance * 1.0000001, "{rel}");
    }

    #[test]
    fn dual_iterate_stays_on_mask() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let a = gaussian(15, 3, &mut r) * gaussian(3, 12, &mut r);
        let m = crate::source::StateMatrix::new(a).unwrap();
        let mask = uniform_mask(15, 12, 0.5, &mut r).unwrap();
        let obs = acquire(&m, &mask, 0.01, &mut r).unwrap();
        let cfg = SvtConfig {
            max_iterations: 30,
            ..SvtConfig::with_tau(5.0)
        };
        svt_recover_with(&obs, &cfg, |_, y| {
            for (i, j) in mask.missing_pairs() {
                assert_eq!(y[(i, j)], 0.0);
            }
        })
        .unwrap();
    }
}
