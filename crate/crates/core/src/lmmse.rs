//! Column-wise linear MMSE recovery under a (possibly mismatched) Gaussian
//! model.
//!
//! Columns are independent draws of the same law, so every column is
//! estimated from its own observed rows. Columns that share an observation
//! pattern share one Cholesky factorization.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::acquisition::NoisyObservations;
use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_with_jitter};
use crate::sampling::ObservationMask;
use crate::source::{validate_covariance, GaussianSourceSpec, StateMatrix};

/// Relative diagonal jitter (times `tr(sigma)/N`) used when the observed
/// block is numerically singular.
pub const LMMSE_JITTER: f64 = 1e-10;

/// Postulated second-order statistics handed to the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmseModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    noise_variance: f64,
}

impl LmmseModel {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, noise_variance: f64) -> Result<Self> {
        validate_covariance(&covariance)?;
        if mean.len() != covariance.nrows() {
            return Err(Error::shape(
                format!("mean of length {}", covariance.nrows()),
                mean.len(),
            ));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::domain("noise_variance", format!("must be non-negative, got {noise_variance}")));
        }
        Ok(Self {
            mean,
            covariance,
            noise_variance,
        })
    }

    pub fn from_source(law: &GaussianSourceSpec, noise_variance: f64) -> Result<Self> {
        Self::new(law.mean().clone(), law.covariance().clone(), noise_variance)
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

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub(crate) fn jitter(&self) -> f64 {
        LMMSE_JITTER * linalg::mean_diagonal(&self.covariance)
    }

    /// Cholesky factor of `sigma[o, o] + extra * I`.
    pub(crate) fn factor_observed(&self, rows: &[usize], extra: f64) -> Result<Cholesky<f64, Dyn>> {
        let mut block = linalg::select(&self.covariance, rows, rows);
        for k in 0..rows.len() {
            block[(k, k)] += extra;
        }
        cholesky_with_jitter(block, self.jitter())
    }

    fn check_dim(&self, n_rows: usize) -> Result<()> {
        if n_rows != self.dim() {
            return Err(Error::shape(format!("{} rows", self.dim()), n_rows));
        }
        Ok(())
    }
}

/// Columns grouped by identical observation pattern, in order of first
/// appearance.
pub(crate) struct PatternGroup {
    pub observed: Vec<usize>,
    pub missing: Vec<usize>,
    pub columns: Vec<usize>,
}

pub(crate) fn group_columns(mask: &ObservationMask) -> Vec<PatternGroup> {
    let mut index: HashMap<&[bool], usize> = HashMap::new();
    let mut groups: Vec<PatternGroup> = Vec::new();
    for j in 0..mask.n_cols() {
        let bits = mask.column_bits(j);
        match index.get(bits) {
            Some(&g) => groups[g].columns.push(j),
            None => {
                index.insert(bits, groups.len());
                groups.push(PatternGroup {
                    observed: mask.observed_rows(j),
                    missing: mask.missing_rows(j),
                    columns: vec![j],
                });
            }
        }
    }
    groups
}

/// Solves for every column of a group at once: returns `mu + sigma[:, o] * w`
/// with `w = (sigma_oo + s2 I)^-1 (y - mu_o)` stacked column-wise.
fn estimate_group(
    model: &LmmseModel,
    observed: &[usize],
    centered: DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = model.dim();
    let k = centered.ncols();
    let mut out = DMatrix::from_fn(n, k, |i, _| model.mean[i]);
    if observed.is_empty() {
        return Ok(out);
    }
    let chol = model.factor_observed(observed, model.noise_variance)?;
    let weights = chol.solve(&centered);
    let all: Vec<usize> = (0..n).collect();
    let cross = linalg::select(&model.covariance, &all, observed);
    out.gemm(1.0, &cross, &weights, 1.0);
    Ok(out)
}

/// LMMSE estimate of a single column from its observed rows.
pub fn lmmse_column(observed_rows: &[usize], observed_values: &DVector<f64>, model: &LmmseModel) -> Result<DVector<f64>> {
    if observed_rows.len() != observed_values.len() {
        return Err(Error::shape(
            format!("{} values", observed_rows.len()),
            observed_values.len(),
        ));
    }
    let n = model.dim();
    let mut seen = vec![false; n];
    for &r in observed_rows {
        if r >= n || seen[r] {
            return Err(Error::domain("observed_rows", format!("row {r} is out of range or repeated")));
        }
        seen[r] = true;
    }
    let centered = DMatrix::from_fn(observed_rows.len(), 1, |k, _| {
        observed_values[k] - model.mean[observed_rows[k]]
    });
    let mut est = estimate_group(model, observed_rows, centered)?.column(0).into_owned();
    if model.noise_variance == 0.0 {
        for (k, &r) in observed_rows.iter().enumerate() {
            est[r] = observed_values[k];
        }
    }
    Ok(est)
}

/// Applies [`lmmse_column`] to every column of the observations.
pub fn lmmse_recover(obs: &NoisyObservations, model: &LmmseModel) -> Result<StateMatrix> {
    model.check_dim(obs.n_rows())?;
    let mut out = DMatrix::zeros(obs.n_rows(), obs.n_cols());
    for group in group_columns(obs.mask()) {
        let o = &group.observed;
        let centered = DMatrix::from_fn(o.len(), group.columns.len(), |k, c| {
            let (_, values) = obs.column(group.columns[c]);
            values[k] - model.mean[o[k]]
        });
        let est = estimate_group(model, o, centered)?;
        for (c, &j) in group.columns.iter().enumerate() {
            out.set_column(j, &est.column(c));
            if model.noise_variance == 0.0 {
                let (rows, values) = obs.column(j);
                for (&r, &v) in rows.iter().zip(values) {
                    out[(r, j)] = v;
                }
            }
        }
    }
    StateMatrix::new(out)
}

/// Average posterior variance over the missing entries.
pub fn lmmse_posterior_distortion(mask: &ObservationMask, model: &LmmseModel) -> Result<f64> {
    model.check_dim(mask.n_rows())?;
    let missing = mask.missing_count();
    if missing == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for group in group_columns(mask) {
        let (o, c) = (&group.observed, &group.missing);
        if c.is_empty() {
            continue;
        }
        let mut prior: f64 = c.iter().map(|&i| model.covariance[(i, i)]).sum();
        if !o.is_empty() {
            let chol = model.factor_observed(o, model.noise_variance)?;
            let mut cross = linalg::select(&model.covariance, o, c);
            chol.l().solve_lower_triangular_mut(&mut cross);
            prior -= linalg::frobenius_sq(&cross);
        }
        total += prior.max(0.0) * group.columns.len() as f64;
    }
    Ok(total / missing as f64)
}
