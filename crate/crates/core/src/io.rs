//! Plain numeric CSV: one matrix row per line, comma separated, no header.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: format!("`{field}` is not a number: {e}"),
    })
}

pub(crate) fn parse_usize(field: &str, path: &Path) -> Result<usize> {
    field.trim().parse::<usize>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: format!("`{field}` is not a non-negative integer: {e}"),
    })
}

pub(crate) fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

pub(crate) fn csv_writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_writer(sink)
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in csv_reader(File::open(path)?).records() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .map(|f| parse_f64(f, path))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    reason: format!(
                        "row {} has {} fields, expected {}",
                        rows.len() + 1,
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            reason: "no data rows".into(),
        });
    }
    let (n, m) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn write_matrix_csv(path: impl AsRef<Path>, a: &DMatrix<f64>) -> Result<()> {
    let mut w = csv_writer(File::create(path)?);
    for i in 0..a.nrows() {
        w.write_record(a.row(i).iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a vector stored either as a single column or a single row.
pub fn read_vector_csv(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let path = path.as_ref();
    let a = read_matrix_csv(path)?;
    if a.ncols() == 1 || a.nrows() == 1 {
        Ok(DVector::from_iterator(a.len(), a.iter().copied()))
    } else {
        Err(Error::Parse {
            path: path.to_path_buf(),
            reason: format!("expected a vector, found a {}x{} matrix", a.nrows(), a.ncols()),
        })
    }
}

pub fn write_vector_csv(path: impl AsRef<Path>, v: &DVector<f64>) -> Result<()> {
    let mut w = csv_writer(File::create(path)?);
    for x in v.iter() {
        w.write_record([x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
