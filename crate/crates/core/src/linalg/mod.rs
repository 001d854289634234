//! Sparse storage, Krylov and direct solvers, and the symmetric generalized
//! eigensolvers used by the cell and macro problems.

mod banded;
mod cg;
mod eigen;
mod sparse;

use nalgebra::DMatrix;

pub use banded::{BandedCholesky, PivotFailure};
pub use cg::{jacobi, pcg, CgOutcome, CgSettings};
pub use eigen::{dense_generalized, lowest_generalized, EigenPairs, SubspaceSettings};
pub use sparse::Csr;

/// A square linear map on `R^n`.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    fn diagonal(&self) -> Vec<f64> {
        let n = self.dim();
        let mut e = vec![0.0; n];
        (0..n)
            .map(|i| {
                e[i] = 1.0;
                let v = self.apply(&e)[i];
                e[i] = 0.0;
                v
            })
            .collect()
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e);
            e[j] = 0.0;
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        m
    }

    fn max_abs_row_sum(&self) -> f64 {
        let m = self.to_dense();
        m.row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
