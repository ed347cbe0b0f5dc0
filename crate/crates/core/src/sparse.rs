//! Square CSR matrices and a sparse Cholesky wrapper with reusable symbolic analysis.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::linalg::LltError;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Square CSR matrix with sorted column indices in every row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero-valued matrix from sorted, deduplicated per-row column lists.
    pub fn from_rows(n: usize, rows: &[Vec<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows {
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        Self { n, row_ptr, col_idx, values }
    }

    /// Drops explicit zeros below `tol` and builds from a dense matrix.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        let rows: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| a[(i, j)] != 0.0 || i == j).collect()).collect();
        let mut m = Self::from_rows(n, &rows);
        for i in 0..n {
            for p in m.row_ptr[i]..m.row_ptr[i + 1] {
                m.values[p] = a[(i, m.col_idx[p])];
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[row], self.row_ptr[row + 1]);
        self.col_idx[lo..hi].binary_search(&col).ok().map(|p| lo + p)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |p| self.values[p])
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[p] * x[self.col_idx[p]];
            }
            *yi = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }

    /// Symmetric permutation `B[p[i], p[j]] = A[i, j]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                rows[perm[i]].push((perm[j], v));
            }
        }
        let mut out = Self { n: self.n, row_ptr: vec![0], col_idx: Vec::new(), values: Vec::new() };
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (j, v) in r {
                out.col_idx.push(j);
                out.values.push(v);
            }
            out.row_ptr.push(out.col_idx.len());
        }
        out
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        // A symmetric matrix in CSR is its own CSC transpose.
        SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.row_ptr, None, &self.col_idx)
    }
}

/// Symbolic Cholesky analysis, shared across numeric factorizations with the same pattern.
#[derive(Debug, Clone)]
pub struct CholeskyPattern {
    symbolic: SymbolicLlt<usize>,
    n: usize,
    nnz: usize,
}

impl CholeskyPattern {
    pub fn analyze(a: &CsrMatrix) -> Result<Self> {
        let symbolic =
            SymbolicLlt::try_new(a.symbolic(), Side::Lower).map_err(|e| Error::Solver(format!("symbolic analysis: {e:?}")))?;
        Ok(Self { symbolic, n: a.nrows(), nnz: a.nnz() })
    }

    pub fn factor(&self, a: &CsrMatrix) -> Result<Cholesky> {
        if a.nrows() != self.n || a.nnz() != self.nnz {
            return Err(Error::Solver("matrix pattern differs from analyzed pattern".into()));
        }
        let mat = SparseColMatRef::new(a.symbolic(), a.values());
        match Llt::try_new_with_symbolic(self.symbolic.clone(), mat, Side::Lower) {
            Ok(llt) => Ok(Cholesky { llt, n: self.n }),
            Err(LltError::Numeric(faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index })) => {
                Err(Error::NotPositiveDefinite { row: index, pivot: f64::NAN })
            }
            Err(e) => Err(Error::Solver(format!("factorization: {e:?}"))),
        }
    }
}

/// Numeric `L L^T` factor.
#[derive(Debug, Clone)]
pub struct Cholesky {
    llt: Llt<usize, f64>,
    n: usize,
}

impl Cholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        CholeskyPattern::analyze(a)?.factor(a)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.solve_block_in_place(b, 1);
    }

    /// Solves for `ncols` right-hand sides stored column-major.
    pub fn solve_block_in_place(&self, b: &mut [f64], ncols: usize) {
        assert_eq!(b.len(), self.n * ncols);
        let rhs = MatMut::from_column_major_slice_mut(b, self.n, ncols);
        self.llt.solve_in_place(rhs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> CsrMatrix {
        let d = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        });
        CsrMatrix::from_dense(&d)
    }

    #[test]
    fn matvec_and_dense_round_trip() {
        let a = laplacian(5);
        assert_eq!(a.nnz(), 13);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(a.mul_vec(&x), vec![0.0, 0.0, 0.0, 0.0, 6.0]);
        assert_eq!(CsrMatrix::from_dense(&a.to_dense()), a);
        assert_eq!(a.get(0, 4), 0.0);
    }

    #[test]
    fn solve_matches_dense() {
        let a = laplacian(40);
        let chol = Cholesky::new(&a).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = a.mul_vec(&x);
        chol.solve_in_place(&mut b);
        let err = b.iter().zip(&x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn block_solve_and_reuse() {
        let a = laplacian(10);
        let pattern = CholeskyPattern::analyze(&a).unwrap();
        let mut scaled = a.clone();
        scaled.values_mut().iter_mut().for_each(|v| *v *= 3.0);
        let chol = pattern.factor(&scaled).unwrap();
        let mut b = vec![3.0; 20];
        chol.solve_block_in_place(&mut b, 2);
        let back = a.mul_vec(&b[10..]);
        assert!(back.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut a = laplacian(4);
        let p = a.position(2, 2).unwrap();
        a.values_mut()[p] = -5.0;
        assert!(matches!(Cholesky::new(&a), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn permutation_preserves_entries() {
        let a = laplacian(4);
        let perm = [2, 0, 3, 1];
        let b = a.permute(&perm);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a.get(i, j), b.get(perm[i], perm[j]));
            }
        }
    }
}
