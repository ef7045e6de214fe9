//! Matrix-free Kronecker products.
//!
//! `(L ⊗ R) x = vec(R X Lᵀ)` with `vec(X) = x`, where `vec` stacks columns.
//! A `p×p` left factor and a `q×q` right factor act on vectors of length
//! `p·q` laid out as `p` consecutive blocks of length `q`.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::sparse::SparseMatrix;

/// Largest total dimension for which [`KroneckerOperator::to_dense`] will
/// materialize the product.
pub const DENSE_ORACLE_CAP: usize = 2000;

/// Column-stacking of a dense matrix.
pub fn vec(x: &DMatrix<f64>) -> Vec<f64> {
    x.as_slice().to_vec()
}

/// Inverse of [`vec`]: reshapes a length `rows·cols` vector into `rows×cols`.
pub fn unvec(x: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    check_len("unvec", rows * cols, x.len())?;
    Ok(DMatrix::from_column_slice(rows, cols, x))
}

#[derive(Debug, Clone, Copy)]
pub struct KroneckerOperator<'a> {
    left: &'a SparseMatrix,
    right: &'a SparseMatrix,
}

impl<'a> KroneckerOperator<'a> {
    pub fn new(left: &'a SparseMatrix, right: &'a SparseMatrix) -> Result<Self> {
        if !left.is_square() || !right.is_square() {
            return Err(Error::InvalidMatrix("Kronecker factors must be square".into()));
        }
        Ok(KroneckerOperator { left, right })
    }

    pub fn left(&self) -> &SparseMatrix {
        self.left
    }

    pub fn right(&self) -> &SparseMatrix {
        self.right
    }

    pub fn dim(&self) -> usize {
        self.left.rows() * self.right.rows()
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("kron matvec", self.dim(), x.len())?;
        let mut y = vec![0.0; x.len()];
        let mut work = vec![0.0; x.len()];
        self.apply_scaled_add(1.0, x, &mut y, &mut work);
        Ok(y)
    }

    /// `y += s · (L ⊗ R) x`, using `work` (length `p·q`) as scratch.
    pub(crate) fn apply_scaled_add(&self, s: f64, x: &[f64], y: &mut [f64], work: &mut [f64]) {
        let q = self.right.rows();
        let p = self.left.rows();
        // work = R X, block by block
        for j in 0..p {
            self.right
                .matvec_into(&x[j * q..(j + 1) * q], &mut work[j * q..(j + 1) * q]);
        }
        // y[:, i] += s Σ_j L[i, j] work[:, j]
        for i in 0..p {
            let yi = &mut y[i * q..(i + 1) * q];
            for (j, lij) in self.left.row(i) {
                let c = s * lij;
                for (yk, wk) in yi.iter_mut().zip(&work[j * q..(j + 1) * q]) {
                    *yk += c * wk;
                }
            }
        }
    }

    /// Explicit dense `L ⊗ R`; a test oracle for small instances only.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let dim = self.dim();
        if dim > DENSE_ORACLE_CAP {
            return Err(Error::DimensionCap {
                dim,
                cap: DENSE_ORACLE_CAP,
            });
        }
        Ok(dense_kron(&self.left.to_dense(), &self.right.to_dense()))
    }
}

/// Dense Kronecker product of two dense matrices.
pub fn dense_kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `Σ s_k (L_k ⊗ R_k) x` without forming any product.
pub fn kron_sum_matvec(terms: &[(f64, KroneckerOperator<'_>)], x: &[f64]) -> Result<Vec<f64>> {
    let mut y = vec![0.0; x.len()];
    let mut work = vec![0.0; x.len()];
    for (s, op) in terms {
        check_len("kron sum term", op.dim(), x.len())?;
        op.apply_scaled_add(*s, x, &mut y, &mut work);
    }
    Ok(y)
}
