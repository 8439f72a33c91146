//! Bayesian singular value thresholding.
//!
//! SVT iterations in which the missing entries of the dual iterate are filled
//! with an LMMSE prediction before shrinkage, and the threshold is re-chosen
//! every iteration by minimizing Stein's unbiased risk estimate of the
//! singular value soft-thresholding denoiser.

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::acquisition::NoisyObservations;
use crate::error::{Error, Result};
use crate::io::csv_writer;
use crate::linalg::{self, GramSpectrum};
use crate::lmmse::{group_columns, lmmse_posterior_distortion, LmmseModel};
use crate::source::StateMatrix;
use crate::svt::{dual_step, observed_residual, validate_loop, DEFAULT_MAX_ITERATIONS, DEFAULT_STEP_SIZE, DEFAULT_TOLERANCE};

pub const DEFAULT_GRID_SIZE: usize = 512;

/// Two singular values closer than this (relative) count as repeated, which
/// zeroes the divergence term.
const REPEAT_TOLERANCE: f64 = 1e-9;

/// What the LMMSE fill of the missing entries is conditioned on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// The observed part of the current dual iterate `Y^k`.
    #[default]
    Iterate,
    /// The noisy observations themselves.
    Observations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsvtConfig {
    pub step_size: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub threshold_grid_size: usize,
    /// Adds the noise variance to the observed block when computing the fill
    /// gains (off: the noiseless gain `sigma_co sigma_oo^-1`).
    pub regularized: bool,
    pub conditioning: Conditioning,
}

impl Default for BsvtConfig {
    fn default() -> Self {
        Self {
            step_size: DEFAULT_STEP_SIZE,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            threshold_grid_size: DEFAULT_GRID_SIZE,
            regularized: false,
            conditioning: Conditioning::Iterate,
        }
    }
}

impl BsvtConfig {
    pub fn validate(&self) -> Result<()> {
        validate_loop(self.step_size, self.tolerance, self.max_iterations)?;
        if self.threshold_grid_size < 2 {
            return Err(Error::domain("threshold_grid_size", "must be at least 2"));
        }
        Ok(())
    }
}

fn has_repeats(sv: &[f64]) -> bool {
    sv.windows(2)
        .any(|w| (w[0] - w[1]).abs() <= REPEAT_TOLERANCE * w[0].abs().max(w[1].abs()))
}

fn check_spectrum(sv: &[f64], noise_variance: f64, n_rows: usize, n_cols: usize) -> Result<()> {
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::domain("noise_variance", format!("must be non-negative, got {noise_variance}")));
    }
    if sv.len() != n_rows.min(n_cols) {
        return Err(Error::shape(format!("{} singular values", n_rows.min(n_cols)), sv.len()));
    }
    if sv.iter().any(|&s| !(s >= 0.0 && s.is_finite())) || sv.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::domain("singular_values", "must be finite, non-negative and non-increasing"));
    }
    Ok(())
}

/// Stein's unbiased estimate of `||D_tau(Z) - M||_F^2` for `Z = M + W`,
/// `W` i.i.d. `N(0, noise_variance)`, given the spectrum of `Z` in
/// non-increasing order.
///
/// The cross term of the divergence is summed over unordered pairs, where
/// `(f_i - f_j) / (s_i^2 - s_j^2)` with `f = s (s - tau)_+` simplifies to
/// `1 - tau / (s_i + s_j)` when both values exceed `tau`.
pub fn sure_risk(sv: &[f64], tau: f64, noise_variance: f64, n_rows: usize, n_cols: usize) -> Result<f64> {
    check_spectrum(sv, noise_variance, n_rows, n_cols)?;
    if !(tau >= 0.0) {
        return Err(Error::domain("tau", format!("must be non-negative, got {tau}")));
    }
    let fit: f64 = sv.iter().map(|&s| (tau * tau).min(s * s)).sum();
    let gap = n_rows.abs_diff(n_cols) as f64;
    let mut div = 0.0;
    if !has_repeats(sv) {
        for (i, &si) in sv.iter().enumerate() {
            if si <= tau {
                break;
            }
            div += 1.0 + gap * (si - tau) / si;
            for &sj in &sv[i + 1..] {
                div += 2.0
                    * if sj > tau {
                        1.0 - tau / (si + sj)
                    } else {
                        si * (si - tau) / (si * si - sj * sj)
                    };
            }
        }
    }
    let nl = (n_rows * n_cols) as f64;
    Ok(-nl * noise_variance + fit + 2.0 * noise_variance * div)
}

/// Precomputed sums that evaluate [`sure_risk`] in constant time for any
/// threshold once the spectrum is fixed.
struct SureProfile {
    sv: Vec<f64>,
    noise_variance: f64,
    nl: f64,
    gap: f64,
    repeated: bool,
    /// `tail_sq[a] = sum_{j >= a} s_j^2`
    tail_sq: Vec<f64>,
    /// `inv_sum[a] = sum_{i < a} 1 / s_i`
    inv_sum: Vec<f64>,
    /// `pair_inv[a] = sum_{i < j < a} 1 / (s_i + s_j)`
    pair_inv: Vec<f64>,
    /// `cross2[a] = sum_{i < a <= j} s_i^2 / (s_i^2 - s_j^2)`
    cross2: Vec<f64>,
    /// `cross1[a] = sum_{i < a <= j} s_i / (s_i^2 - s_j^2)`
    cross1: Vec<f64>,
}

impl SureProfile {
    fn new(sv: &[f64], noise_variance: f64, n_rows: usize, n_cols: usize) -> Result<Self> {
        check_spectrum(sv, noise_variance, n_rows, n_cols)?;
        let k = sv.len();
        let mut tail_sq = vec![0.0; k + 1];
        for a in (0..k).rev() {
            tail_sq[a] = tail_sq[a + 1] + sv[a] * sv[a];
        }
        let repeated = has_repeats(sv);
        let mut inv_sum = vec![0.0; k + 1];
        let mut pair_inv = vec![0.0; k + 1];
        let mut cross2 = vec![0.0; k + 1];
        let mut cross1 = vec![0.0; k + 1];
        if !repeated {
            // Active values are strictly positive here, since at most one
            // singular value can be zero without a repeat.
            for a in 0..k {
                inv_sum[a + 1] = inv_sum[a] + if sv[a] > 0.0 { 1.0 / sv[a] } else { 0.0 };
                let added: f64 = sv[..a].iter().map(|&si| 1.0 / (si + sv[a])).sum();
                pair_inv[a + 1] = pair_inv[a] + added;
            }
            // Column prefix sums of the strictly upper triangular tables.
            let mut col2 = vec![0.0; k];
            let mut col1 = vec![0.0; k];
            for a in 1..k {
                let si = sv[a - 1];
                for j in a..k {
                    let d = si * si - sv[j] * sv[j];
                    col2[j] += si * si / d;
                    col1[j] += si / d;
                }
                cross2[a] = col2[a..].iter().sum();
                cross1[a] = col1[a..].iter().sum();
            }
        }
        Ok(Self {
            sv: sv.to_vec(),
            noise_variance,
            nl: (n_rows * n_cols) as f64,
            gap: n_rows.abs_diff(n_cols) as f64,
            repeated,
            tail_sq,
            inv_sum,
            pair_inv,
            cross2,
            cross1,
        })
    }

    fn risk(&self, tau: f64) -> f64 {
        let a = self.sv.partition_point(|&s| s > tau);
        let af = a as f64;
        let fit = af * tau * tau + self.tail_sq[a];
        let div = if self.repeated {
            0.0
        } else {
            let own = af + self.gap * (af - tau * self.inv_sum[a]);
            let inner = af * (af - 1.0) / 2.0 - tau * self.pair_inv[a];
            let outer = self.cross2[a] - tau * self.cross1[a];
            own + 2.0 * (inner + outer)
        };
        -self.nl * self.noise_variance + fit + 2.0 * self.noise_variance * div
    }
}

/// Candidate thresholds: zero, every singular value and a uniform grid on
/// `[0, s_max]`, sorted ascending.
fn candidates(sv: &[f64], grid_size: usize) -> Vec<f64> {
    let smax = sv.first().copied().unwrap_or(0.0);
    let mut out = Vec::with_capacity(sv.len() + grid_size + 1);
    out.push(0.0);
    out.extend_from_slice(sv);
    out.extend((0..grid_size).map(|g| smax * g as f64 / (grid_size - 1) as f64));
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// SURE minimizer over the candidate set for a known spectrum; ties go to the
/// smallest threshold.
pub fn optimal_threshold_for_spectrum(
    sv: &[f64],
    noise_variance: f64,
    n_rows: usize,
    n_cols: usize,
    grid_size: usize,
) -> Result<f64> {
    if grid_size < 2 {
        return Err(Error::domain("grid_size", "must be at least 2"));
    }
    let profile = SureProfile::new(sv, noise_variance, n_rows, n_cols)?;
    let mut best = (f64::INFINITY, 0.0);
    for tau in candidates(sv, grid_size) {
        let risk = profile.risk(tau);
        if risk < best.0 {
            best = (risk, tau);
        }
    }
    Ok(best.1)
}

/// SURE-optimal soft threshold for `z`.
pub fn optimal_threshold(z: &DMatrix<f64>, noise_variance: f64, grid_size: usize) -> Result<f64> {
    let sv = linalg::singular_values(z)?;
    optimal_threshold_for_spectrum(&sv, noise_variance, z.nrows(), z.ncols(), grid_size)
}

/// Effective noise level of the filled iterate: the observed misfit plus the
/// posterior variance attributed to every missing entry, per entry.
pub fn noise_level(y_k: &DMatrix<f64>, obs: &NoisyObservations, d_lmmse: f64) -> f64 {
    let misfit: f64 = obs.iter().map(|(i, j, v)| (y_k[(i, j)] - v).powi(2)).sum();
    let missing = obs.mask().missing_count() as f64;
    let nl = (obs.n_rows() * obs.n_cols()) as f64;
    let floor = if obs.is_empty() {
        0.0
    } else {
        1e-12 * obs.energy() / obs.len() as f64
    };
    ((misfit + missing * d_lmmse) / nl).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub tau: f64,
    pub sigma2_z: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct BsvtOutcome {
    pub estimate: StateMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRecord>,
}

/// Writes the per-iteration trace as `k,tau,sigma2_z,residual`.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRecord]) -> Result<()> {
    let mut w = csv_writer(File::create(path)?);
    w.write_record(["k", "tau", "sigma2_z", "residual"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            r.tau.to_string(),
            r.sigma2_z.to_string(),
            r.residual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// LMMSE predictor of the missing rows of a column pattern from its observed
/// rows.
struct FillGroup {
    observed: Vec<usize>,
    missing: Vec<usize>,
    columns: Vec<usize>,
    /// `|missing| x |observed|`
    gain: DMatrix<f64>,
}

fn fill_groups(obs: &NoisyObservations, model: &LmmseModel, regularized: bool) -> Result<Vec<FillGroup>> {
    let extra = if regularized { model.noise_variance() } else { 0.0 };
    group_columns(obs.mask())
        .into_iter()
        .filter(|g| !g.missing.is_empty())
        .map(|g| {
            let gain = if g.observed.is_empty() {
                DMatrix::zeros(g.missing.len(), 0)
            } else {
                let chol = model.factor_observed(&g.observed, extra)?;
                let cross = linalg::select(model.covariance(), &g.observed, &g.missing);
                chol.solve(&cross).transpose()
            };
            Ok(FillGroup {
                observed: g.observed,
                missing: g.missing,
                columns: g.columns,
                gain,
            })
        })
        .collect()
}

/// Writes `mu_c + G (src_o - mu_o)` into the missing entries of `z`.
fn fill_missing(z: &mut DMatrix<f64>, groups: &[FillGroup], model: &LmmseModel, source: &DMatrix<f64>) {
    let mu = model.mean();
    for g in groups {
        let centered = DMatrix::from_fn(g.observed.len(), g.columns.len(), |k, c| {
            source[(g.observed[k], g.columns[c])] - mu[g.observed[k]]
        });
        let pred = &g.gain * centered;
        for (c, &j) in g.columns.iter().enumerate() {
            for (k, &i) in g.missing.iter().enumerate() {
                z[(i, j)] = mu[i] + pred[(k, c)];
            }
        }
    }
}

/// Runs BSVT from `Z^0 = Y^0 = 0`, `tau = 0` with the postulated `model`.
pub fn bsvt_recover(obs: &NoisyObservations, model: &LmmseModel, config: &BsvtConfig) -> Result<BsvtOutcome> {
    config.validate()?;
    if obs.is_empty() {
        return Err(Error::EmptyObservations);
    }
    if model.dim() != obs.n_rows() {
        return Err(Error::shape(format!("{} rows", model.dim()), obs.n_rows()));
    }
    let (n, l) = (obs.n_rows(), obs.n_cols());
    let groups = fill_groups(obs, model, config.regularized)?;
    let d_lmmse = lmmse_posterior_distortion(obs.mask(), model)?;
    let dense_obs = obs.to_dense();
    let obs_norm = obs.energy().sqrt();

    let mut y = DMatrix::zeros(n, l);
    let mut z = DMatrix::zeros(n, l);
    let mut spectrum: Option<GramSpectrum> = None;
    let mut tau = 0.0;
    let mut x = DMatrix::zeros(n, l);
    let mut trace = Vec::new();
    for k in 1..=config.max_iterations {
        x = match &spectrum {
            Some(law) => law.shrink(&z, tau),
            None => DMatrix::zeros(n, l),
        };
        let residual = observed_residual(&x, obs, obs_norm);
        if residual <= config.tolerance {
            return Ok(BsvtOutcome {
                estimate: StateMatrix::new(x)?,
                iterations: k,
                converged: true,
                trace,
            });
        }
        dual_step(&mut y, &x, obs, config.step_size);
        z.copy_from(&y);
        let source = match config.conditioning {
            Conditioning::Iterate => &y,
            Conditioning::Observations => &dense_obs,
        };
        fill_missing(&mut z, &groups, model, source);
        let sigma2_z = noise_level(&y, obs, d_lmmse);
        let law = GramSpectrum::new(&z)?;
        tau = optimal_threshold_for_spectrum(&law.s, sigma2_z, n, l, config.threshold_grid_size)?;
        spectrum = Some(law);
        trace.push(TraceRecord {
            iteration: k,
            tau,
            sigma2_z,
            residual,
        });
    }
    Ok(BsvtOutcome {
        estimate: StateMatrix::new(x)?,
        iterations: config.max_iterations,
        converged: false,
        trace,
    })
}
