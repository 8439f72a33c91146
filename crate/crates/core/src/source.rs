//! Gaussian source model for the state-variable matrix.
//!
//! Each column of the `N x L` state matrix (one feeder, `N` time instants) is
//! an independent draw from `N(mean, covariance)`. When no measured covariance
//! is available the experiments use an exponentially decaying correlation
//! `variance * rho^|i-j|`, which is positive definite for `rho < 1` and has the
//! fast-decaying spectrum that makes the matrix approximately low rank.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

/// Relative tolerance on negative eigenvalues accepted as "PSD".
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Mean vector and covariance of one state-variable column.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSourceSpec {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianSourceSpec {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        validate_covariance(&covariance)?;
        if mean.len() != covariance.nrows() {
            return Err(Error::shape(
                format!("mean of length {}", covariance.nrows()),
                format!("length {}", mean.len()),
            ));
        }
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("mean", "entries must be finite"));
        }
        Ok(Self { mean, covariance })
    }

    /// Source with the same value at every time instant.
    pub fn with_constant_mean(value: f64, covariance: DMatrix<f64>) -> Result<Self> {
        let n = covariance.nrows();
        Self::new(DVector::from_element(n, value), covariance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Same mean, different covariance (used for postulated statistics).
    pub fn with_covariance(&self, covariance: DMatrix<f64>) -> Result<Self> {
        Self::new(self.mean.clone(), covariance)
    }
}

/// Checks squareness, exact symmetry and positive semidefiniteness.
pub fn validate_covariance(c: &DMatrix<f64>) -> Result<()> {
    if c.nrows() != c.ncols() || c.nrows() == 0 {
        return Err(Error::shape(
            "non-empty square covariance",
            format!("{}x{}", c.nrows(), c.ncols()),
        ));
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("covariance", "entries must be finite"));
    }
    let n = c.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            if c[(i, j)] != c[(j, i)] {
                return Err(Error::domain(
                    "covariance",
                    format!("not symmetric at ({i}, {j})"),
                ));
            }
        }
    }
    let ev = linalg::symmetric_eigenvalues(c)?;
    let (min, max) = (ev[0], ev[n - 1]);
    if min < -PSD_TOLERANCE * max.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::domain(
            "covariance",
            format!("not positive semidefinite (smallest eigenvalue {min:e}, largest {max:e})"),
        ));
    }
    Ok(())
}

/// Ground-truth matrix of state variables: rows are time instants, columns
/// are feeders.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix(DMatrix<f64>);

impl StateMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::shape("at least 1x1", format!("{}x{}", values.nrows(), values.ncols())));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("state matrix", "entries must be finite"));
        }
        Ok(Self(values))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        linalg::frobenius_sq(&self.0)
    }
}

/// `variance * rho^|i-j|` covariance of size `n`.
pub fn synthetic_covariance(n: usize, variance: f64, rho: f64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::domain("n", "must be at least 1"));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::domain("variance", format!("must be positive, got {variance}")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::domain("rho", format!("must lie in [0, 1), got {rho}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        variance * rho.powi(i.abs_diff(j) as i32)
    }))
}

/// Square-root factor `F` with `F F^T = covariance`.
///
/// Tries a Cholesky factorization, then once more with a `1e-12 * tr/N`
/// diagonal jitter, and finally falls back to the eigenvalue square root so
/// that rank-deficient (including all-zero) covariances can be sampled.
fn covariance_factor(covariance: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let jitter = 1e-12 * linalg::mean_diagonal(covariance);
    if let Ok(chol) = linalg::cholesky_with_jitter(covariance.clone(), jitter) {
        return Ok(chol.l());
    }
    let (values, vectors) = linalg::symmetric_eigen(covariance)?;
    let max = values.last().copied().unwrap_or(0.0);
    if values[0] < -PSD_TOLERANCE * max.abs() {
        return Err(Error::Factorization(format!(
            "covariance is indefinite (smallest eigenvalue {:e})",
            values[0]
        )));
    }
    let mut factor = vectors;
    for (k, mut col) in factor.column_iter_mut().enumerate() {
        col *= values[k].max(0.0).sqrt();
    }
    Ok(factor)
}

/// Draws `l` independent columns from the source.
///
/// Normal deviates are consumed column by column, so the output depends only
/// on the source law, `l` and the state of `rng`.
pub fn sample_source<R: Rng + ?Sized>(
    law: &GaussianSourceSpec,
    l: usize,
    rng: &mut R,
) -> Result<StateMatrix> {
    if l == 0 {
        return Err(Error::domain("l", "must be at least 1"));
    }
    let n = law.dim();
    let factor = covariance_factor(law.covariance())?;
    let draws: Vec<f64> = (0..n * l).map(|_| rng.sample(StandardNormal)).collect();
    let mut m = factor * DMatrix::from_vec(n, l, draws);
    for mut col in m.column_iter_mut() {
        col += law.mean();
    }
    StateMatrix::new(m)
}

/// How the random mismatch direction is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MismatchMode {
    /// `||postulated - actual||_F = ||actual||_F / smr` exactly.
    #[default]
    Normalized,
    /// Scale factor `(1/smr) * ||actual||_F^2 / ||delta||_F^2`.
    EnergyRatio,
}

/// Postulated covariance `sigma + alpha * H H^T`, with `H` standard normal.
pub fn mismatch_covariance<R: Rng + ?Sized>(
    sigma: &DMatrix<f64>,
    smr: f64,
    rng: &mut R,
    mode: MismatchMode,
) -> Result<DMatrix<f64>> {
    if !(smr > 0.0) {
        return Err(Error::domain("smr", format!("must be positive, got {smr}")));
    }
    let n = sigma.nrows();
    let mut attempt = 0;
    let delta = loop {
        let h: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        let d = &h * h.transpose();
        // exact symmetry, whatever order the product was accumulated in
        let d = (&d + d.transpose()) * 0.5;
        if d.norm() > 0.0 {
            break d;
        }
        attempt += 1;
        if attempt == 2 {
            return Err(Error::Degenerate("mismatch direction has zero norm".into()));
        }
    };
    let (sigma_norm, delta_norm) = (sigma.norm(), delta.norm());
    let alpha = match mode {
        MismatchMode::Normalized => sigma_norm / delta_norm / smr,
        MismatchMode::EnergyRatio => sigma_norm * sigma_norm / (delta_norm * delta_norm) / smr,
    };
    Ok(sigma + delta * alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn synthetic_covariance_examples() {
        assert_eq!(synthetic_covariance(1, 4.0, 0.5).unwrap()[(0, 0)], 4.0);
        let c = synthetic_covariance(2, 1.0, 0.9).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]));
        let ev = linalg::symmetric_eigenvalues(&synthetic_covariance(50, 1.0, 0.9).unwrap()).unwrap();
        assert!(ev[0] > 0.0);
    }

    #[test]
    fn synthetic_covariance_domain() {
        assert!(synthetic_covariance(3, 1.0, 1.0).is_err());
        assert!(synthetic_covariance(3, 0.0, 0.5).is_err());
        assert!(synthetic_covariance(3, 1.0, -0.1).is_err());
        assert!(synthetic_covariance(0, 1.0, 0.5).is_err());
    }

    #[test]
    fn source_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(GaussianSourceSpec::new(DVector::zeros(2), asym).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianSourceSpec::new(DVector::zeros(2), indefinite).is_err());
        let ok = synthetic_covariance(3, 1.0, 0.2).unwrap();
        assert!(GaussianSourceSpec::new(DVector::zeros(2), ok.clone()).is_err());
        assert!(GaussianSourceSpec::new(DVector::zeros(3), ok).is_ok());
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let law = GaussianSourceSpec::with_constant_mean(5.0, DMatrix::zeros(4, 4)).unwrap();
        let m = sample_source(&law, 7, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(m.values().iter().all(|&x| x == 5.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let law = GaussianSourceSpec::with_constant_mean(
            1.0,
            synthetic_covariance(6, 2.0, 0.7).unwrap(),
        )
        .unwrap();
        let a = sample_source(&law, 9, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = sample_source(&law, 9, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn semidefinite_covariance_can_be_sampled() {
        // rank one: every column is a multiple of (1, 1, 1)
        let law = GaussianSourceSpec::new(DVector::zeros(3), DMatrix::from_element(3, 3, 1.0)).unwrap();
        let m = sample_source(&law, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for col in m.values().column_iter() {
            assert!((col[0] - col[1]).abs() < 1e-5 && (col[1] - col[2]).abs() < 1e-5);
        }
    }

    #[test]
    fn mismatch_vanishes_for_huge_smr() {
        let sigma = synthetic_covariance(20, 3.0, 0.8).unwrap();
        let post = mismatch_covariance(&sigma, 1e12, &mut ChaCha8Rng::seed_from_u64(1), MismatchMode::Normalized).unwrap();
        assert!((&post - &sigma).norm() / sigma.norm() <= 1e-11);
    }

    #[test]
    fn normalized_mismatch_has_requested_norm() {
        let sigma = synthetic_covariance(15, 2.0, 0.6).unwrap();
        for (seed, smr) in [(1, 1.0), (2, 10.0), (3, 100.0)] {
            let post = mismatch_covariance(&sigma, smr, &mut ChaCha8Rng::seed_from_u64(seed), MismatchMode::Normalized).unwrap();
            let ratio = (&post - &sigma).norm() / sigma.norm();
            assert!((ratio - 1.0 / smr).abs() <= 1e-12 / smr, "smr {smr}: ratio {ratio}");
        }
    }

    #[test]
    fn energy_ratio_scale() {
        let n = 10;
        let sigma = synthetic_covariance(n, 2.0, 0.5).unwrap();
        let post = mismatch_covariance(&sigma, 4.0, &mut ChaCha8Rng::seed_from_u64(4), MismatchMode::EnergyRatio).unwrap();
        // replay the direction from the same stream
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        let delta = &h * h.transpose();
        let expected = sigma.norm().powi(2) / delta.norm() / 4.0;
        let literal = (&post - &sigma).norm();
        assert!((literal - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn mismatch_output_is_symmetric_psd() {
        let sigma = synthetic_covariance(12, 1.0, 0.9).unwrap();
        let min_before = linalg::symmetric_eigenvalues(&sigma).unwrap()[0];
        for seed in 0..5 {
            for mode in [MismatchMode::Normalized, MismatchMode::EnergyRatio] {
                let post = mismatch_covariance(&sigma, 0.5 + seed as f64, &mut ChaCha8Rng::seed_from_u64(seed), mode).unwrap();
                assert_eq!(post, post.transpose());
                let min_after = linalg::symmetric_eigenvalues(&post).unwrap()[0];
                assert!(min_after >= min_before - 1e-10);
            }
        }
    }

    #[test]
    fn mismatch_rejects_nonpositive_smr() {
        let sigma = synthetic_covariance(3, 1.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(mismatch_covariance(&sigma, 0.0, &mut rng, MismatchMode::Normalized).is_err());
    }
}
