//! Dense kernels shared by the estimators.
//!
//! Matrices are `nalgebra::DMatrix<f64>` throughout the crate. The SVD and the
//! symmetric eigensolver are delegated to `faer`, which is several times faster
//! at the sizes the sweeps use (a few hundred rows), and converted back.

use faer::{Mat, Side};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Thin singular value decomposition `a = u * diag(s) * v^T`, with `s`
/// non-negative and sorted in non-increasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    /// Rebuilds `u * diag((s - tau)_+) * v^T` using only the components that
    /// survive the shrinkage.
    pub fn shrink(&self, tau: f64) -> DMatrix<f64> {
        let rank = self.s.iter().take_while(|&&s| s > tau).count();
        if rank == 0 {
            return DMatrix::zeros(self.rows(), self.cols());
        }
        let mut left = self.u.columns(0, rank).into_owned();
        for (k, mut col) in left.column_iter_mut().enumerate() {
            col *= self.s[k] - tau;
        }
        left * self.v.columns(0, rank).transpose()
    }
}

/// Spectral decomposition of `a` obtained from its Gram matrix on the smaller
/// side: singular values and the matching right (or left, for wide inputs)
/// singular vectors.
///
/// Soft-thresholding only needs `a * V diag((1 - tau/s)_+) V^T`, which avoids
/// forming the other set of singular vectors and is exact at `tau = 0`
/// whatever the accuracy of the small singular values.
#[derive(Debug, Clone)]
pub struct GramSpectrum {
    /// Singular values in non-increasing order.
    pub s: Vec<f64>,
    /// Singular vectors on the Gram side, ordered like `s`.
    vectors: DMatrix<f64>,
    wide: bool,
}

impl GramSpectrum {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        check_finite(a)?;
        let wide = a.nrows() < a.ncols();
        let gram = if wide { a * a.transpose() } else { a.transpose() * a };
        let (values, vectors) = symmetric_eigen(&gram)?;
        let k = values.len();
        let order: Vec<usize> = (0..k).rev().collect();
        Ok(Self {
            s: order.iter().map(|&i| values[i].max(0.0).sqrt()).collect(),
            vectors: DMatrix::from_fn(k, k, |i, j| vectors[(i, order[j])]),
            wide,
        })
    }

    /// `D_tau(a)` for the matrix this spectrum was computed from.
    pub fn shrink(&self, a: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
        let rank = self.s.iter().take_while(|&&s| s > tau).count();
        if rank == 0 {
            return DMatrix::zeros(a.nrows(), a.ncols());
        }
        let basis = self.vectors.columns(0, rank);
        let mut scaled = basis.into_owned();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= 1.0 - tau / self.s[k];
        }
        let projector = scaled * basis.transpose();
        if self.wide {
            projector * a
        } else {
            a * projector
        }
    }
}

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn check_finite(a: &DMatrix<f64>) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Svd("input contains non-finite entries".into()))
    }
}

pub fn svd(a: &DMatrix<f64>) -> Result<Svd> {
    check_finite(a)?;
    let decomposition = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::Svd(format!("{e:?}")))?;
    let (u, s, v) = (decomposition.U(), decomposition.S(), decomposition.V());
    let k = a.nrows().min(a.ncols());
    Ok(Svd {
        u: DMatrix::from_fn(a.nrows(), k, |i, j| u[(i, j)]),
        s: (0..k).map(|i| s[i].max(0.0)).collect(),
        v: DMatrix::from_fn(a.ncols(), k, |i, j| v[(i, j)]),
    })
}

pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(a)?;
    let s = to_faer(a)
        .singular_values()
        .map_err(|e| Error::Svd(format!("{e:?}")))?;
    Ok(s.into_iter().map(|x| x.max(0.0)).collect())
}

/// Eigenvalues of a symmetric matrix in non-decreasing order.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    to_faer(a)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Factorization(format!("symmetric eigensolver: {e:?}")))
}

/// Eigenvalues (non-decreasing) and matching orthonormal eigenvectors.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let evd = to_faer(a)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("symmetric eigensolver: {e:?}")))?;
    let (s, u) = (evd.S(), evd.U());
    let n = a.nrows();
    Ok((
        (0..n).map(|i| s[i]).collect(),
        DMatrix::from_fn(n, n, |i, j| u[(i, j)]),
    ))
}

/// Cholesky factorization that retries once after adding `jitter` to the
/// diagonal.
pub fn cholesky_with_jitter(
    mut a: DMatrix<f64>,
    jitter: f64,
) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol);
    }
    if jitter > 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = a.cholesky() {
            return Ok(chol);
        }
    }
    Err(Error::Factorization(format!(
        "matrix is not positive definite (jitter {jitter:e})"
    )))
}

/// Submatrix `a[rows, cols]`.
pub fn select(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn frobenius_sq(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn mean_diagonal(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.trace() / a.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_reconstructs_input() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        let d = svd(&a).unwrap();
        assert!(d.s[0] >= d.s[1]);
        let back = d.shrink(0.0);
        assert!((back - &a).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn shrink_drops_small_components() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let d = svd(&a).unwrap();
        let out = d.shrink(2.0);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((out - expected).norm() < 1e-12);
    }

    #[test]
    fn svd_rejects_nan() {
        let mut a = DMatrix::<f64>::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::Svd(_))));
    }

    #[test]
    fn gram_spectrum_matches_svd() {
        for (n, m) in [(6, 4), (4, 6), (5, 5)] {
            let a = DMatrix::from_fn(n, m, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5 + (i == j) as u8 as f64);
            let exact = svd(&a).unwrap();
            let gram = GramSpectrum::new(&a).unwrap();
            for (x, y) in exact.s.iter().zip(&gram.s) {
                assert!((x - y).abs() <= 1e-10 * exact.s[0]);
            }
            assert!((gram.shrink(&a, 0.0) - &a).norm() <= 1e-12 * a.norm());
            let tau = 0.5 * exact.s[1];
            assert!((gram.shrink(&a, tau) - exact.shrink(tau)).norm() <= 1e-10 * a.norm());
        }
    }

    #[test]
    fn eigenvalues_sorted() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let ev = symmetric_eigenvalues(&a).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky_with_jitter(a.clone(), 0.0).is_err());
        assert!(cholesky_with_jitter(a, 1e-8).is_ok());
    }
}
