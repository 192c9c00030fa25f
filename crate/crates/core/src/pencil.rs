//! Dense symmetric generalized eigensolver A psi = lambda S psi for the local
//! spectral pencils: Cholesky reduction of S followed by a standard symmetric
//! eigensolve, eigenpairs returned ascending and S-orthonormal.

use crate::counters;
use crate::{Error, Result};
use nalgebra::DMatrix;

/// Ascending eigenpairs of a symmetric pencil; `vectors` columns satisfy
/// V' S V = I.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Flips each column so its largest-magnitude component is positive; ties
/// resolved toward the lowest row index. Idempotent.
pub fn sign_align(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0;
        let mut best_abs = f64::NEG_INFINITY;
        for (r, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = r;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Solves the generalized symmetric eigenproblem. S must be positive
/// definite; a single 1e-12 * trace diagonal jitter is applied before giving
/// up on its Cholesky factorization.
pub fn solve_gep(a: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<EigenPairs> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "pencil A must be square");
    assert_eq!((s.nrows(), s.ncols()), (n, n), "pencil S shape mismatch");
    counters::record_eigensolve();
    let chol = nalgebra::Cholesky::new(s.clone()).or_else(|| {
        let jitter = 1e-12 * s.trace();
        let mut sj = s.clone();
        for i in 0..n {
            sj[(i, i)] += jitter;
        }
        nalgebra::Cholesky::new(sj)
    });
    let chol = chol.ok_or_else(|| {
        Error::Numerical("local mass matrix not positive definite after jitter".into())
    })?;
    let l = chol.l();
    let c = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let mut b = l
        .solve_lower_triangular(&c.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    // Symmetrize to protect the symmetric eigensolver from rounding drift.
    b = (&b + b.transpose()) * 0.5;
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut w = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        w.set_column(dst, &eig.eigenvectors.column(src));
    }
    let vectors = l
        .transpose()
        .solve_upper_triangular(&w)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    Ok(EigenPairs { values, vectors })
}
