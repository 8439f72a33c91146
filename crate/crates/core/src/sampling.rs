//! Observation masks: which entries of the state matrix reach the operator.
//!
//! Two models are provided. Under uniform sampling every entry is dropped
//! independently with probability `gamma`. Under Markov sampling a two-state
//! chain (S1 = observed, S2 = missing) walks the matrix in column-major order,
//! i.e. down each feeder's time series and then on to the next feeder, so that
//! outages produce runs of consecutive missing measurements.

use std::fs::File;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer, parse_usize};

/// Set of observed `(row, col)` positions in an `n_rows x n_cols` grid.
///
/// Stored as a column-major bitmap, so positions are unique and in range by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObservationMask {
    n_rows: usize,
    n_cols: usize,
    observed: Vec<bool>,
}

impl ObservationMask {
    fn from_bitmap(n_rows: usize, n_cols: usize, observed: Vec<bool>) -> Self {
        debug_assert_eq!(observed.len(), n_rows * n_cols);
        Self {
            n_rows,
            n_cols,
            observed,
        }
    }

    fn check_dims(n_rows: usize, n_cols: usize) -> Result<()> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::domain("mask", format!("dimensions must be positive, got {n_rows}x{n_cols}")));
        }
        Ok(())
    }

    pub fn full(n_rows: usize, n_cols: usize) -> Result<Self> {
        Self::check_dims(n_rows, n_cols)?;
        Ok(Self::from_bitmap(n_rows, n_cols, vec![true; n_rows * n_cols]))
    }

    pub fn empty(n_rows: usize, n_cols: usize) -> Result<Self> {
        Self::check_dims(n_rows, n_cols)?;
        Ok(Self::from_bitmap(n_rows, n_cols, vec![false; n_rows * n_cols]))
    }

    /// Builds a mask from explicit observed pairs; rejects out-of-range and
    /// duplicate pairs.
    pub fn from_pairs<I>(n_rows: usize, n_cols: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut mask = Self::empty(n_rows, n_cols)?;
        for (i, j) in pairs {
            if i >= n_rows || j >= n_cols {
                return Err(Error::domain("mask", format!("pair ({i}, {j}) outside {n_rows}x{n_cols}")));
            }
            let k = mask.offset(i, j);
            if mask.observed[k] {
                return Err(Error::domain("mask", format!("duplicate pair ({i}, {j})")));
            }
            mask.observed[k] = true;
        }
        Ok(mask)
    }

    fn offset(&self, row: usize, col: usize) -> usize {
        col * self.n_rows + row
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.observed[self.offset(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, observed: bool) {
        let k = self.offset(row, col);
        self.observed[k] = observed;
    }

    /// `|Omega|`.
    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    /// `|Omega^c|`.
    pub fn missing_count(&self) -> usize {
        self.len() - self.observed_count()
    }

    /// Observed pairs in column-major order.
    pub fn observed_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(k, _)| (k % self.n_rows, k / self.n_rows))
    }

    /// Missing pairs (the complement) in column-major order.
    pub fn missing_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &b)| !b)
            .map(|(k, _)| (k % self.n_rows, k / self.n_rows))
    }

    pub fn observed_rows(&self, col: usize) -> Vec<usize> {
        self.column_bits(col)
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn missing_rows(&self, col: usize) -> Vec<usize> {
        self.column_bits(col)
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (!b).then_some(i))
            .collect()
    }

    pub fn column_bits(&self, col: usize) -> &[bool] {
        &self.observed[col * self.n_rows..(col + 1) * self.n_rows]
    }

    /// Column-major bitmap, `true` where observed.
    pub fn bitmap(&self) -> &[bool] {
        &self.observed
    }

    /// Writes `n_rows,<n>` and `n_cols,<n>` header lines followed by one
    /// `row,col` line per observed entry.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv_writer(File::create(path)?);
        w.write_record(["n_rows", &self.n_rows.to_string()])?;
        w.write_record(["n_cols", &self.n_cols.to_string()])?;
        for (i, j) in self.observed_pairs() {
            w.write_record([i.to_string(), j.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut records = csv_reader(File::open(path)?).into_records();
        let n_rows = read_header_value(&mut records, "n_rows", path)?;
        let n_cols = read_header_value(&mut records, "n_cols", path)?;
        let mut pairs = Vec::new();
        for record in records {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    reason: format!("expected `row,col`, found {} fields", record.len()),
                });
            }
            pairs.push((parse_usize(&record[0], path)?, parse_usize(&record[1], path)?));
        }
        Self::from_pairs(n_rows, n_cols, pairs)
    }
}

pub(crate) fn read_header_field(
    records: &mut csv::StringRecordsIntoIter<File>,
    key: &str,
    path: &Path,
) -> Result<String> {
    let record = records.next().transpose()?.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        reason: format!("missing `{key}` header line"),
    })?;
    if record.len() != 2 || &record[0] != key {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            reason: format!("expected `{key},<value>` header line"),
        });
    }
    Ok(record[1].to_string())
}

pub(crate) fn read_header_value(
    records: &mut csv::StringRecordsIntoIter<File>,
    key: &str,
    path: &Path,
) -> Result<usize> {
    let value = read_header_field(records, key, path)?;
    parse_usize(&value, path)
}

/// Drops each entry independently with probability `gamma`.
pub fn uniform_mask<R: Rng + ?Sized>(
    n_rows: usize,
    n_cols: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<ObservationMask> {
    ObservationMask::check_dims(n_rows, n_cols)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::domain("gamma", format!("must lie in [0, 1], got {gamma}")));
    }
    let observed = (0..n_rows * n_cols)
        .map(|_| rng.random::<f64>() >= gamma)
        .collect();
    Ok(ObservationMask::from_bitmap(n_rows, n_cols, observed))
}

/// Transition probabilities of the observed/missing chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovSamplerParams {
    /// observed -> missing
    p1: f64,
    /// missing -> observed
    p2: f64,
}

impl MarkovSamplerParams {
    pub fn new(p1: f64, p2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) {
            return Err(Error::domain("p1", format!("must lie in [0, 1], got {p1}")));
        }
        if !(p2 > 0.0 && p2 <= 1.0) {
            return Err(Error::domain("p2", format!("must lie in (0, 1], got {p2}")));
        }
        Ok(Self { p1, p2 })
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p2(&self) -> f64 {
        self.p2
    }

    /// Long-run fraction of missing entries.
    pub fn stationary_missing(&self) -> f64 {
        self.p1 / (self.p1 + self.p2)
    }

    /// Mean sojourn in the missing state.
    pub fn mean_missing_run(&self) -> f64 {
        1.0 / self.p2
    }
}

/// Runs the two-state chain over the grid in column-major order, continuing
/// across column boundaries. The first state is drawn from the stationary
/// distribution.
pub fn markov_mask<R: Rng + ?Sized>(
    n_rows: usize,
    n_cols: usize,
    params: MarkovSamplerParams,
    rng: &mut R,
) -> Result<ObservationMask> {
    ObservationMask::check_dims(n_rows, n_cols)?;
    let mut missing = rng.random::<f64>() < params.stationary_missing();
    let mut observed = Vec::with_capacity(n_rows * n_cols);
    for _ in 0..n_rows * n_cols {
        observed.push(!missing);
        let leave = if missing { params.p2 } else { params.p1 };
        if rng.random::<f64>() < leave {
            missing = !missing;
        }
    }
    Ok(ObservationMask::from_bitmap(n_rows, n_cols, observed))
}

/// How target statistics are turned into transition probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calibration {
    /// `E[L0] = (1 - gamma)(1 - p2)/p2^2`, solved for the positive root.
    #[default]
    Quadratic,
    /// `E[L0] = 1/p2`, the mean sojourn time of the missing state.
    Geometric,
}

impl std::fmt::Display for Calibration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Calibration::Quadratic => "quadratic",
            Calibration::Geometric => "geometric",
        })
    }
}

/// Chooses `(p1, p2)` so the chain has missing ratio `gamma` and expected
/// missing-run length `l0` under the selected calibration.
pub fn markov_params_from_targets(
    gamma: f64,
    l0: f64,
    mode: Calibration,
) -> Result<MarkovSamplerParams> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain("gamma", format!("must lie in (0, 1), got {gamma}")));
    }
    if !(l0 >= 1.0 && l0.is_finite()) {
        return Err(Error::domain("l0", format!("must be at least 1, got {l0}")));
    }
    let p2 = match mode {
        Calibration::Quadratic => {
            // l0 p2^2 + (1 - gamma) p2 - (1 - gamma) = 0
            let b = 1.0 - gamma;
            (-b + (b * b + 4.0 * l0 * b).sqrt()) / (2.0 * l0)
        }
        Calibration::Geometric => 1.0 / l0,
    };
    if !(p2 > 0.0 && p2 <= 1.0) {
        return Err(Error::NoSolution(format!("p2 = {p2} for gamma {gamma}, l0 {l0}")));
    }
    let p1 = gamma * p2 / (1.0 - gamma);
    if p1 > 1.0 {
        return Err(Error::NoSolution(format!(
            "p1 = {p1} exceeds 1 for gamma {gamma}, l0 {l0}"
        )));
    }
    MarkovSamplerParams::new(p1, p2)
}

/// Empirical missing ratio and mean length of maximal missing runs along the
/// column-major traversal (runs may span column boundaries).
pub fn mask_stats(mask: &ObservationMask) -> (f64, f64) {
    run_stats(mask.bitmap())
}

pub(crate) fn run_stats(observed: &[bool]) -> (f64, f64) {
    let mut missing = 0usize;
    let mut runs = 0usize;
    let mut previous_missing = false;
    for &o in observed {
        if !o {
            missing += 1;
            if !previous_missing {
                runs += 1;
            }
        }
        previous_missing = !o;
    }
    let ratio = missing as f64 / observed.len() as f64;
    let mean_run = if runs == 0 { 0.0 } else { missing as f64 / runs as f64 };
    (ratio, mean_run)
}
