use std::time::Instant;

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::acquisition::{acquire, sigma_from_snr, NoisyObservations};
use crate::bsvt::bsvt_recover;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Method, SamplingKind, SmrLevel};
use crate::harness::report::{aggregate, mean_std, Aggregate, CurvePoint, RunResult};
use crate::linalg;
use crate::lmmse::{lmmse_recover, LmmseModel};
use crate::opta;
use crate::sampling::{markov_mask, markov_params_from_targets, uniform_mask, ObservationMask};
use crate::source::{mismatch_covariance, sample_source, GaussianSourceSpec, StateMatrix};
use crate::svt::svt_recover;

/// `||truth - estimate||_F^2 / ||truth||_F^2`.
pub fn nmse(truth: &StateMatrix, estimate: &StateMatrix) -> Result<f64> {
    if (truth.nrows(), truth.ncols()) != (estimate.nrows(), estimate.ncols()) {
        return Err(Error::shape(
            format!("{}x{}", truth.nrows(), truth.ncols()),
            format!("{}x{}", estimate.nrows(), estimate.ncols()),
        ));
    }
    let energy = truth.energy();
    if energy == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(linalg::frobenius_sq(&(truth.values() - estimate.values())) / energy)
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of one (gamma, repeat) cell. Both mixing steps are bijections of
/// `u64`, so distinct cells (indices below `2^32`) get distinct seeds.
pub fn child_seed(base_seed: u64, gamma_index: usize, repeat: usize) -> u64 {
    let cell = ((gamma_index as u64) << 32) | (repeat as u64 & 0xffff_ffff);
    splitmix64(splitmix64(base_seed) ^ cell)
}

/// Independent random streams of a cell.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Source,
    Mask,
    Noise,
    Mismatch(usize),
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match which {
        Stream::Source => 0,
        Stream::Mask => 1,
        Stream::Noise => 2,
        Stream::Mismatch(k) => 16 + k as u64,
    });
    rng
}

/// Everything an operator would see in one cell, plus the ground truth.
pub struct Scenario {
    pub truth: StateMatrix,
    pub observations: NoisyObservations,
    pub noise_variance: f64,
}

/// Draws the mask for one gamma under the configured sampling model.
pub fn draw_mask(config: &ExperimentConfig, gamma: f64, rng: &mut ChaCha8Rng) -> Result<ObservationMask> {
    match config.sampling {
        SamplingKind::Uniform => uniform_mask(config.n_rows, config.n_cols, gamma, rng),
        SamplingKind::Markov if gamma == 0.0 => ObservationMask::full(config.n_rows, config.n_cols),
        SamplingKind::Markov => {
            let params = markov_params_from_targets(gamma, config.markov_l0(), config.markov_calibration)?;
            markov_mask(config.n_rows, config.n_cols, params, rng)
        }
    }
}

/// Ground truth and observations of cell `(gamma_index, repeat)`.
pub fn scenario(
    config: &ExperimentConfig,
    source: &GaussianSourceSpec,
    gamma_index: usize,
    repeat: usize,
) -> Result<Scenario> {
    let seed = child_seed(config.base_seed, gamma_index, repeat);
    let truth = sample_source(source, config.n_cols, &mut stream(seed, Stream::Source))?;
    let mask = draw_mask(config, config.gammas[gamma_index], &mut stream(seed, Stream::Mask))?;
    let noise_variance = sigma_from_snr(source.covariance(), config.snr_db);
    let observations = acquire(&truth, &mask, noise_variance, &mut stream(seed, Stream::Noise))?;
    Ok(Scenario {
        truth,
        observations,
        noise_variance,
    })
}

/// Postulated model for one mismatch level of a cell.
pub fn postulated_model(
    config: &ExperimentConfig,
    source: &GaussianSourceSpec,
    noise_variance: f64,
    seed: u64,
    smr_index: usize,
) -> Result<LmmseModel> {
    let covariance = match config.smr[smr_index] {
        SmrLevel::Exact => source.covariance().clone(),
        SmrLevel::Ratio(smr) => mismatch_covariance(
            source.covariance(),
            smr,
            &mut stream(seed, Stream::Mismatch(smr_index)),
            config.mismatch_mode,
        )?,
    };
    LmmseModel::new(source.mean().clone(), covariance, noise_variance)
}

/// Output of one sweep: per-run rows in canonical order, their aggregates,
/// and the mean rate-distortion floor per gamma when requested.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub results: Vec<RunResult>,
    pub aggregates: Vec<Aggregate>,
    pub opta: Vec<CurvePoint>,
}

struct CellOutput {
    rows: Vec<RunResult>,
    opta: Option<f64>,
}

fn failed(mut row: RunResult, error: &Error) -> RunResult {
    warn!(
        "{} failed at gamma={} smr={} repeat={}: {error}",
        row.method, row.gamma, row.smr, row.repeat
    );
    row.nmse = f64::NAN;
    row.iterations = 0;
    row.converged = false;
    row
}

fn run_cell(
    config: &ExperimentConfig,
    source: &GaussianSourceSpec,
    eigenvalues: &[f64],
    gamma_index: usize,
    repeat: usize,
) -> Result<CellOutput> {
    let gamma = config.gammas[gamma_index];
    let seed = child_seed(config.base_seed, gamma_index, repeat);
    let cell = scenario(config, source, gamma_index, repeat)?;
    let obs = &cell.observations;
    let checksum = obs.checksum();
    debug!("cell gamma={gamma} repeat={repeat} seed={seed:#018x} observations={checksum:#018x}");

    let models: Vec<Result<LmmseModel>> = if config.methods.iter().any(|m| m.uses_model()) {
        (0..config.smr.len())
            .map(|k| postulated_model(config, source, cell.noise_variance, seed, k))
            .collect()
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for &method in &config.methods {
        let levels: Vec<Option<usize>> = if method.uses_model() {
            (0..config.smr.len()).map(Some).collect()
        } else {
            vec![None]
        };
        for level in levels {
            let template = RunResult {
                gamma,
                method,
                smr: level.map_or_else(|| "na".to_string(), |k| config.smr[k].label()),
                sampling: config.sampling.label().to_string(),
                repeat,
                nmse: 0.0,
                iterations: 0,
                converged: false,
                seconds: 0.0,
            };
            let start = Instant::now();
            let outcome = (|| -> Result<(StateMatrix, usize, bool)> {
                match (method, level) {
                    (Method::Svt, _) => {
                        let out = svt_recover(obs, &config.svt)?;
                        Ok((out.estimate, out.iterations, out.converged))
                    }
                    (_, Some(k)) => {
                        let model = models[k]
                            .as_ref()
                            .map_err(|e| Error::Degenerate(format!("postulated model unavailable: {e}")))?;
                        if method == Method::Lmmse {
                            Ok((lmmse_recover(obs, model)?, 1, true))
                        } else {
                            let out = bsvt_recover(obs, model, &config.bsvt)?;
                            Ok((out.estimate, out.iterations, out.converged))
                        }
                    }
                    (_, None) => unreachable!("model-based methods always carry a level"),
                }
            })();
            let seconds = if config.timing { start.elapsed().as_secs_f64() } else { 0.0 };
            debug_assert_eq!(obs.checksum(), checksum);
            rows.push(match outcome.and_then(|(est, it, conv)| Ok((nmse(&cell.truth, &est)?, it, conv))) {
                Ok((nmse, iterations, converged)) => RunResult {
                    nmse,
                    iterations,
                    converged,
                    seconds,
                    ..template
                },
                Err(e) => failed(RunResult { seconds, ..template }, &e),
            });
        }
    }
    let opta = if config.opta {
        Some(opta_for_cell(config, eigenvalues, &cell)?)
    } else {
        None
    };
    Ok(CellOutput { rows, opta })
}

fn opta_for_cell(config: &ExperimentConfig, eigenvalues: &[f64], cell: &Scenario) -> Result<f64> {
    let rate = opta::rate_budget(
        cell.observations.len(),
        config.n_rows,
        config.n_cols,
        config.snr_db,
        config.opta_log,
    );
    let d = opta::distortion_at_rate(eigenvalues, rate)?;
    let energy = cell.truth.energy();
    if energy == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(d * (config.n_rows * config.n_cols) as f64 / energy)
}

fn covariance_eigenvalues(covariance: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(linalg::symmetric_eigenvalues(covariance)?
        .into_iter()
        .map(|l| l.max(0.0))
        .collect())
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build a pool of {n} threads: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Runs every (gamma, repeat) cell, possibly in parallel, and returns rows
/// in canonical order. `threads = None` uses the global rayon pool.
pub fn run_sweep(config: &ExperimentConfig, threads: Option<usize>) -> Result<SweepOutput> {
    config.validate()?;
    let source = config.source()?;
    let eigenvalues = if config.opta {
        covariance_eigenvalues(source.covariance())?
    } else {
        Vec::new()
    };
    let cells: Vec<(usize, usize)> = (0..config.gammas.len())
        .flat_map(|g| (0..config.repeats).map(move |r| (g, r)))
        .collect();
    let outputs = with_pool(threads, || {
        cells
            .par_iter()
            .map(|&(g, r)| run_cell(config, &source, &eigenvalues, g, r))
            .collect::<Result<Vec<_>>>()
    })??;

    let opta = if config.opta {
        config
            .gammas
            .iter()
            .enumerate()
            .map(|(g, &gamma)| {
                let values: Vec<f64> = outputs[g * config.repeats..(g + 1) * config.repeats]
                    .iter()
                    .filter_map(|c| c.opta)
                    .collect();
                let (mean, std) = mean_std(&values);
                CurvePoint { gamma, mean, std }
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut results: Vec<RunResult> = outputs.into_iter().flat_map(|c| c.rows).collect();
    sort_canonical(&mut results, config);
    let aggregates = aggregate(&results);
    Ok(SweepOutput {
        results,
        aggregates,
        opta,
    })
}

/// Mean rate-distortion floor per gamma over the same cells a sweep would
/// draw, without running any estimator.
pub fn opta_curve(config: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<CurvePoint>> {
    config.validate()?;
    let source = config.source()?;
    let eigenvalues = covariance_eigenvalues(source.covariance())?;
    with_pool(threads, || {
        (0..config.gammas.len())
            .into_par_iter()
            .map(|g| {
                let values = (0..config.repeats)
                    .map(|r| opta_for_cell(config, &eigenvalues, &scenario(config, &source, g, r)?))
                    .collect::<Result<Vec<f64>>>()?;
                let (mean, std) = mean_std(&values);
                Ok(CurvePoint {
                    gamma: config.gammas[g],
                    mean,
                    std,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Sorts by gamma, method and smr in configuration order, then repeat.
pub fn sort_canonical(results: &mut [RunResult], config: &ExperimentConfig) {
    let method_rank = |m: Method| config.methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
    let smr_rank = |label: &str| {
        config
            .smr
            .iter()
            .position(|s| s.label() == label)
            .unwrap_or(usize::MAX)
    };
    results.sort_by(|a, b| {
        a.gamma
            .total_cmp(&b.gamma)
            .then(method_rank(a.method).cmp(&method_rank(b.method)))
            .then(smr_rank(&a.smr).cmp(&smr_rank(&b.smr)))
            .then(a.repeat.cmp(&b.repeat))
    });
}
