//! Sensor noise and restriction to the observed set: the data the operator
//! actually holds.

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer, parse_f64, parse_usize};
use crate::linalg;
use crate::sampling::{read_header_field, read_header_value, ObservationMask};
use crate::source::StateMatrix;

/// Noisy values on the observed entries only.
///
/// Values are stored sparsely in the column-major order of the observed
/// entries; `col_offsets[j]..col_offsets[j + 1]` indexes column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyObservations {
    mask: ObservationMask,
    values: Vec<f64>,
    col_offsets: Vec<usize>,
    rows: Vec<usize>,
    noise_variance: f64,
}

impl NoisyObservations {
    /// `values` must follow the column-major order of `mask.observed_pairs()`.
    pub fn new(mask: ObservationMask, values: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if values.len() != mask.observed_count() {
            return Err(Error::shape(
                format!("{} observed values", mask.observed_count()),
                values.len(),
            ));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::domain("noise_variance", format!("must be non-negative, got {noise_variance}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("observations", "values must be finite"));
        }
        let mut col_offsets = Vec::with_capacity(mask.n_cols() + 1);
        let mut rows = Vec::with_capacity(values.len());
        col_offsets.push(0);
        for j in 0..mask.n_cols() {
            rows.extend(mask.observed_rows(j));
            col_offsets.push(rows.len());
        }
        Ok(Self {
            mask,
            values,
            col_offsets,
            rows,
            noise_variance,
        })
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn n_rows(&self) -> usize {
        self.mask.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.mask.n_cols()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Observed values in column-major order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Observed rows and values of column `j`.
    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let range = self.col_offsets[j]..self.col_offsets[j + 1];
        (&self.rows[range.clone()], &self.values[range])
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let (rows, values) = self.column(col);
        rows.binary_search(&row).ok().map(|k| values[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_cols()).flat_map(move |j| {
            let (rows, values) = self.column(j);
            rows.iter().zip(values).map(move |(&i, &v)| (i, j, v))
        })
    }

    /// Dense matrix with observed values on the mask and zeros elsewhere.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_rows(), self.n_cols());
        for (i, j, v) in self.iter() {
            out[(i, j)] = v;
        }
        out
    }

    /// `||P_Omega(R)||_F^2`.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Order-sensitive FNV-1a digest of the mask and observed value bits, used
    /// to log that every method in a sweep cell consumed the same data.
    pub fn checksum(&self) -> u64 {
        const PRIME: u64 = 0x100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(self.n_rows() as u64);
        eat(self.n_cols() as u64);
        eat(self.noise_variance.to_bits());
        for (i, j, v) in self.iter() {
            eat(i as u64);
            eat(j as u64);
            eat(v.to_bits());
        }
        h
    }

    /// Header lines `n_rows`, `n_cols`, `noise_variance`, then `row,col,value`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv_writer(File::create(path)?);
        w.write_record(["n_rows", &self.n_rows().to_string()])?;
        w.write_record(["n_cols", &self.n_cols().to_string()])?;
        w.write_record(["noise_variance", &self.noise_variance.to_string()])?;
        for (i, j, v) in self.iter() {
            w.write_record([i.to_string(), j.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut records = csv_reader(File::open(path)?).into_records();
        let n_rows = read_header_value(&mut records, "n_rows", path)?;
        let n_cols = read_header_value(&mut records, "n_cols", path)?;
        let noise_variance = parse_f64(&read_header_field(&mut records, "noise_variance", path)?, path)?;
        let mut entries = Vec::new();
        for record in records {
            let record = record?;
            if record.len() != 3 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    reason: format!("expected `row,col,value`, found {} fields", record.len()),
                });
            }
            entries.push((
                parse_usize(&record[0], path)?,
                parse_usize(&record[1], path)?,
                parse_f64(&record[2], path)?,
            ));
        }
        entries.sort_by_key(|&(i, j, _)| (j, i));
        let mask = ObservationMask::from_pairs(n_rows, n_cols, entries.iter().map(|&(i, j, _)| (i, j)))?;
        Self::new(mask, entries.into_iter().map(|e| e.2).collect(), noise_variance)
    }
}

/// Noise variance giving `snr_db` relative to the average source power
/// `tr(sigma)/N`.
pub fn sigma_from_snr(sigma_cov: &DMatrix<f64>, snr_db: f64) -> f64 {
    let snr = 10f64.powf(snr_db / 10.0);
    linalg::mean_diagonal(sigma_cov) / snr
}

/// Adds white Gaussian noise of variance `sigma2` to the observed entries of
/// `m`. Noise is drawn only for observed entries, in column-major order.
pub fn acquire<R: Rng + ?Sized>(
    m: &StateMatrix,
    mask: &ObservationMask,
    sigma2: f64,
    rng: &mut R,
) -> Result<NoisyObservations> {
    if (m.nrows(), m.ncols()) != (mask.n_rows(), mask.n_cols()) {
        return Err(Error::shape(
            format!("{}x{} mask", m.nrows(), m.ncols()),
            format!("{}x{}", mask.n_rows(), mask.n_cols()),
        ));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::domain("sigma2", format!("must be non-negative, got {sigma2}")));
    }
    let sigma = sigma2.sqrt();
    let truth = m.values();
    let values = mask
        .observed_pairs()
        .map(|(i, j)| {
            let w: f64 = rng.sample(StandardNormal);
            truth[(i, j)] + sigma * w
        })
        .collect();
    NoisyObservations::new(mask.clone(), values, sigma2)
}
