//! Compressed sparse row storage for square matrices.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows above which matrix-vector products run on the rayon pool.
const PARALLEL_ROWS: usize = 4096;

/// Square CSR matrix with sorted, de-duplicated column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// exact zeros are dropped.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= n || c >= n) {
            return Err(Error::invalid(format!(
                "triplet ({r}, {c}) out of range for {n} states"
            )));
        }
        if let Some(&(r, c, v)) = triplets.iter().find(|t| !t.2.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry {v} at ({r}, {c})"
            )));
        }
        triplets.sort_unstable_by_key(|a| (a.0, a.1));

        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry exists") += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut m = SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        };
        m.drop_zeros();
        Ok(m)
    }

    /// Builds from dense rows.
    pub fn from_dense_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut triplets = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(format!(
                    "row {r} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        Self::from_triplets(n, triplets)
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    fn drop_zeros(&mut self) {
        if !self.values.contains(&0.0) {
            return;
        }
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }

    /// Number of rows (and columns).
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero entries of row `r` as `(col, value)`, in column order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// All nonzero entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v).sum()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "dimension mismatch in matvec");
        let row_dot = |r: usize| self.row(r).map(|(c, v)| v * x[c]).sum::<f64>();
        if self.n >= PARALLEL_ROWS {
            (0..self.n).into_par_iter().map(row_dot).collect()
        } else {
            (0..self.n).map(row_dot).collect()
        }
    }

    /// `y = x^T A`.
    pub fn vecmat(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "dimension mismatch in vecmat");
        let mut y = vec![0.0; self.n];
        for (r, c, v) in self.triplets() {
            y[c] += x[r] * v;
        }
        y
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.n != other.n {
            return Err(Error::invalid("matmul of matrices with different sizes"));
        }
        let mut triplets = Vec::new();
        let mut acc = vec![0.0; self.n];
        let mut touched = Vec::new();
        for r in 0..self.n {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if acc[c] == 0.0 {
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            for &c in &touched {
                triplets.push((r, c, acc[c]));
                acc[c] = 0.0;
            }
            touched.clear();
        }
        SparseMatrix::from_triplets(self.n, triplets)
    }

    /// Weighted sum `Σ w_j A_j` of equally sized matrices.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> Result<SparseMatrix> {
        let n = terms
            .first()
            .map(|(_, m)| m.n)
            .ok_or_else(|| Error::invalid("empty linear combination"))?;
        if terms.iter().any(|(_, m)| m.n != n) {
            return Err(Error::invalid(
                "linear combination of matrices with different sizes",
            ));
        }
        let triplets = terms
            .iter()
            .flat_map(|&(w, m)| m.triplets().map(move |(r, c, v)| (r, c, w * v)))
            .collect();
        SparseMatrix::from_triplets(n, triplets)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (r, c, v) in self.triplets() {
            d[(r, c)] = v;
        }
        d
    }

    /// Largest `|A(r,c) - A(c,r)|`.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_summed_and_sorted() {
        let m = SparseMatrix::from_triplets(
            3,
            vec![
                (1, 2, 0.5),
                (0, 0, 1.0),
                (1, 2, 0.25),
                (1, 0, 0.25),
                (2, 2, 0.0),
            ],
        )
        .unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 2), 0.75);
        assert_eq!(m.get(2, 2), 0.0);
        assert_eq!(m.row(1).collect::<Vec<_>>(), vec![(0, 0.25), (2, 0.75)]);
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(SparseMatrix::from_triplets(2, vec![(0, 2, 1.0)]).is_err());
    }

    #[test]
    fn matmul_matches_dense() {
        let a = SparseMatrix::from_dense_rows(&[
            vec![0.5, 0.5, 0.0],
            vec![0.2, 0.3, 0.5],
            vec![0.0, 0.1, 0.9],
        ])
        .unwrap();
        let prod = a.matmul(&a).unwrap().to_dense();
        let dense = a.to_dense() * a.to_dense();
        assert!((prod - dense).abs().max() < 1e-15);
    }

    #[test]
    fn matvec_and_vecmat() {
        let a = SparseMatrix::from_dense_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.matvec(&[1.0, 1.0]), vec![3.0, 7.0]);
        assert_eq!(a.vecmat(&[1.0, 1.0]), vec![4.0, 6.0]);
    }
}
