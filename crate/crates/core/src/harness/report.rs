use std::fs::File;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Method};
use crate::harness::sweep::SweepOutput;
use crate::io::{csv_writer, parse_f64, parse_usize};

pub const RESULTS_HEADER: [&str; 9] = [
    "gamma",
    "method",
    "smr",
    "sampling",
    "repeat",
    "nmse",
    "iterations",
    "converged",
    "seconds",
];

/// One estimator run. Failed runs carry `nmse = NaN`.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub gamma: f64,
    pub method: Method,
    /// `exact`, the mismatch ratio, or `na` for methods without a model.
    pub smr: String,
    pub sampling: String,
    pub repeat: usize,
    pub nmse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        !self.nmse.is_finite()
    }

    /// Field-wise equality with floats compared bitwise, so failed rows
    /// compare equal to themselves.
    pub fn same_as(&self, other: &Self) -> bool {
        self.gamma.to_bits() == other.gamma.to_bits()
            && self.method == other.method
            && self.smr == other.smr
            && self.sampling == other.sampling
            && self.repeat == other.repeat
            && self.nmse.to_bits() == other.nmse.to_bits()
            && self.iterations == other.iterations
            && self.converged == other.converged
            && self.seconds.to_bits() == other.seconds.to_bits()
    }
}

/// Mean and sample standard deviation of the successful runs of one
/// (gamma, method, smr) group.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub gamma: f64,
    pub method: Method,
    pub smr: String,
    pub sampling: String,
    pub runs: usize,
    pub failures: usize,
    pub mean_nmse: f64,
    pub std_nmse: f64,
}

impl Aggregate {
    /// Plot series label such as `svt`, `bsvt-exact` or `lmmse-smr10`.
    pub fn series(&self) -> String {
        match self.smr.as_str() {
            "na" => self.method.to_string(),
            "exact" => format!("{}-exact", self.method),
            ratio => format!("{}-smr{ratio}", self.method),
        }
    }
}

/// Mean and sample standard deviation (zero for a single value, NaN for
/// none).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Groups rows by (gamma, method, smr) in order of first appearance.
pub fn aggregate(results: &[RunResult]) -> Vec<Aggregate> {
    let mut keys: Vec<(u64, Method, &str)> = Vec::new();
    let mut members: Vec<Vec<&RunResult>> = Vec::new();
    for row in results {
        let key = (row.gamma.to_bits(), row.method, row.smr.as_str());
        match keys.iter().position(|k| *k == key) {
            Some(i) => members[i].push(row),
            None => {
                keys.push(key);
                members.push(vec![row]);
            }
        }
    }
    members
        .into_iter()
        .map(|rows| {
            let ok: Vec<f64> = rows.iter().filter(|r| !r.failed()).map(|r| r.nmse).collect();
            let (mean_nmse, std_nmse) = mean_std(&ok);
            let first = rows[0];
            Aggregate {
                gamma: first.gamma,
                method: first.method,
                smr: first.smr.clone(),
                sampling: first.sampling.clone(),
                runs: rows.len(),
                failures: rows.len() - ok.len(),
                mean_nmse,
                std_nmse,
            }
        })
        .collect()
}

pub fn write_results_csv(path: impl AsRef<Path>, results: &[RunResult]) -> Result<()> {
    let mut w = csv_writer(File::create(path)?);
    w.write_record(RESULTS_HEADER)?;
    for r in results {
        w.write_record([
            r.gamma.to_string(),
            r.method.to_string(),
            r.smr.clone(),
            r.sampling.clone(),
            r.repeat.to_string(),
            r.nmse.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<RunResult>> {
    let path = path.as_ref();
    let bad = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(File::open(path)?);
    if reader.headers()?.iter().ne(RESULTS_HEADER) {
        return Err(bad(format!("header must be `{}`", RESULTS_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != RESULTS_HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", RESULTS_HEADER.len(), record.len())));
        }
        out.push(RunResult {
            gamma: parse_f64(&record[0], path)?,
            method: record[1].parse().map_err(|e: Error| bad(e.to_string()))?,
            smr: record[2].to_string(),
            sampling: record[3].to_string(),
            repeat: parse_usize(&record[4], path)?,
            nmse: parse_f64(&record[5], path)?,
            iterations: parse_usize(&record[6], path)?,
            converged: record[7]
                .parse()
                .map_err(|_| bad(format!("`{}` is not a boolean", &record[7])))?,
            seconds: parse_f64(&record[8], path)?,
        });
    }
    Ok(out)
}

pub fn write_aggregates_csv(path: impl AsRef<Path>, aggregates: &[Aggregate]) -> Result<()> {
    let mut w = csv_writer(File::create(path)?);
    w.write_record(["gamma", "method", "smr", "sampling", "mean_nmse", "std_nmse", "runs", "failures"])?;
    for a in aggregates {
        w.write_record([
            a.gamma.to_string(),
            a.method.to_string(),
            a.smr.clone(),
            a.sampling.clone(),
            a.mean_nmse.to_string(),
            a.std_nmse.to_string(),
            a.runs.to_string(),
            a.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and spread of one curve at one gamma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub gamma: f64,
    pub mean: f64,
    pub std: f64,
}

/// Rows `(gamma, series, mean_nmse, std)` grouped by series in order of first
/// appearance, with the rate-distortion floor last under `opta`.
pub fn plot_rows(aggregates: &[Aggregate], opta: &[CurvePoint]) -> Result<Vec<(f64, String, f64, f64)>> {
    if aggregates.is_empty() {
        return Err(Error::Config("no results to plot".into()));
    }
    let mut series: Vec<String> = Vec::new();
    for a in aggregates {
        let s = a.series();
        if !series.contains(&s) {
            series.push(s);
        }
    }
    let mut rows = Vec::new();
    for s in &series {
        for a in aggregates.iter().filter(|a| &a.series() == s) {
            rows.push((a.gamma, s.clone(), a.mean_nmse, a.std_nmse));
        }
    }
    rows.extend(opta.iter().map(|p| (p.gamma, "opta".to_string(), p.mean, p.std)));
    Ok(rows)
}

/// Short stable digest of a configuration, ignoring where results go and
/// whether runs are timed.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let mut canonical = config.clone();
    canonical.output = PathBuf::new();
    canonical.timing = false;
    let digest = Sha256::digest(canonical.to_toml_string()?.as_bytes());
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

pub fn write_plot_csv(path: impl AsRef<Path>, aggregates: &[Aggregate], opta: &[CurvePoint]) -> Result<()> {
    let mut w = csv_writer(File::create(path)?);
    w.write_record(["gamma", "series", "mean_nmse", "std"])?;
    for (gamma, series, mean, std) in plot_rows(aggregates, opta)? {
        w.write_record([gamma.to_string(), series, mean.to_string(), std.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Paths written by [`write_sweep`].
#[derive(Debug, Clone)]
pub struct SweepFiles {
    pub results: PathBuf,
    pub aggregates: PathBuf,
    pub plot: PathBuf,
    pub opta: Option<PathBuf>,
}

/// Writes `results.csv`, `aggregates.csv`, `plot-<hash>.csv` and, when the
/// floor was computed, `opta.csv` into `dir`.
pub fn write_sweep(dir: impl AsRef<Path>, config: &ExperimentConfig, output: &SweepOutput) -> Result<SweepFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let files = SweepFiles {
        results: dir.join("results.csv"),
        aggregates: dir.join("aggregates.csv"),
        plot: dir.join(format!("plot-{}.csv", config_hash(config)?)),
        opta: (!output.opta.is_empty()).then(|| dir.join("opta.csv")),
    };
    write_results_csv(&files.results, &output.results)?;
    write_aggregates_csv(&files.aggregates, &output.aggregates)?;
    write_plot_csv(&files.plot, &output.aggregates, &output.opta)?;
    if let Some(path) = &files.opta {
        let curve: Vec<(f64, f64)> = output.opta.iter().map(|p| (p.gamma, p.mean)).collect();
        crate::opta::write_opta_csv(path, &curve)?;
    }
    Ok(files)
}
