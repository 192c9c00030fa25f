//! Sparse symmetric linear algebra: CSR storage, banded Cholesky for SPD
//! systems, and Jacobi-preconditioned conjugate gradients.
//!
//! Assembled operators on structured grids have small bandwidth, so the
//! direct path stores only the lower band. Systems at or above
//! [`DIRECT_SOLVE_LIMIT`] unknowns fall back to PCG.

use crate::{Error, Result};
use nalgebra::DMatrix;

/// Unknown-count threshold below which SPD solves use banded Cholesky.
pub const DIRECT_SOLVE_LIMIT: usize = 20_000;

/// Square sparse matrix in compressed sparse row form.
///
/// Rows keep strictly increasing column indices; duplicate triplets are
/// summed during construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an n x n matrix from (row, col, value) triplets, summing
    /// duplicates. Panics on out-of-range indices.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
        let mut counts = vec![0usize; n + 1];
        for &(i, j, _) in triplets {
            assert!(i < n && j < n, "triplet ({i},{j}) out of range for n={n}");
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0f64; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for i in 0..n {
            let lo = counts[i];
            let hi = counts[i + 1];
            order.clear();
            order.extend(lo..hi);
            order.sort_by_key(|&k| cols[k]);
            for &k in &order {
                if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == cols[k] {
                    *values.last_mut().unwrap() += vals[k];
                } else {
                    col_idx.push(cols[k]);
                    values.push(vals[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row i.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    /// Entry (i, j), zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// Sum of scaled matrices sharing one sparsity pattern (affine operators
    /// assembled over the same mesh in the same order).
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<CsrMatrix> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::Numerical("empty linear combination".into()))?;
        for (_, m) in terms {
            if m.row_ptr != first.row_ptr || m.col_idx != first.col_idx {
                return Err(Error::Numerical(
                    "sparsity pattern mismatch in linear combination".into(),
                ));
            }
        }
        let mut values = vec![0.0; first.values.len()];
        for (c, m) in terms {
            for (dst, v) in values.iter_mut().zip(&m.values) {
                *dst += c * v;
            }
        }
        Ok(CsrMatrix {
            n: first.n,
            row_ptr: first.row_ptr.clone(),
            col_idx: first.col_idx.clone(),
            values,
        })
    }

    /// Principal submatrix on `keep` (sorted, strictly increasing global
    /// indices), reindexed to local 0..keep.len().
    pub fn restrict(&self, keep: &[usize]) -> CsrMatrix {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let mut local = vec![usize::MAX; self.n];
        for (li, &gi) in keep.iter().enumerate() {
            local[gi] = li;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &gi in keep {
            for (gj, v) in self.row(gi) {
                if local[gj] != usize::MAX {
                    col_idx.push(local[gj]);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n: keep.len(), row_ptr, col_idx, values }
    }

    /// Self * rhs for a dense right factor.
    pub fn matmul_dense(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(rhs.nrows(), self.n);
        let mut out = DMatrix::zeros(self.n, rhs.ncols());
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let (j, v) = (self.col_idx[k], self.values[k]);
                for c in 0..rhs.ncols() {
                    out[(i, c)] += v * rhs[(j, c)];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Max |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                bw = bw.max(i.abs_diff(j));
            }
        }
        bw
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max |A_ij - A_ji| over stored entries; 0 for exactly symmetric data.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Lower-band Cholesky factor of an SPD matrix.
///
/// Row i stores L[i][j] for j in [i-bw, i] at slot i*(bw+1) + bw - (i-j).
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<BandedCholesky> {
        let n = a.n();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    band[i * w + bw - (i - j)] = v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut sum = band[i * w + bw - (i - j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    sum -= band[i * w + bw - (i - k)] * band[j * w + bw - (j - k)];
                }
                if j == i {
                    if sum <= 0.0 {
                        return Err(Error::Numerical(format!(
                            "Cholesky breakdown at row {i}: pivot {sum:.3e}"
                        )));
                    }
                    band[i * w + bw] = sum.sqrt();
                } else {
                    band[i * w + bw - (i - j)] = sum / band[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, band })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            let mut sum = y[i];
            for k in k0..i {
                sum -= self.band[i * w + bw - (i - k)] * y[k];
            }
            y[i] = sum / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let k1 = (i + bw).min(n - 1);
            let mut sum = y[i];
            for k in (i + 1)..=k1 {
                sum -= self.band[k * w + bw - (k - i)] * y[k];
            }
            y[i] = sum / self.band[i * w + bw];
        }
        y
    }
}

/// Conjugate gradients with diagonal (Jacobi) preconditioner.
///
/// Converges when the 2-norm residual falls to `tol_rel * ||b||`; returns the
/// solution and iteration count, or a numerical error reporting the final
/// relative residual.
pub fn pcg_jacobi(
    a: &CsrMatrix,
    b: &[f64],
    tol_rel: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = a.n();
    assert_eq!(b.len(), n);
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        a.matvec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) <= tol_rel * b_norm {
            return Ok((x, it + 1));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Numerical(format!(
        "CG stalled after {max_iter} iterations: relative residual {:.3e}",
        norm2(&r) / b_norm
    )))
}

/// SPD solve: banded Cholesky below [`DIRECT_SOLVE_LIMIT`], PCG above.
pub fn solve_spd(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.n() < DIRECT_SOLVE_LIMIT {
        Ok(BandedCholesky::factor(a)?.solve(b))
    } else {
        pcg_jacobi(a, b, 1e-10, 20 * a.n()).map(|(x, _)| x)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
