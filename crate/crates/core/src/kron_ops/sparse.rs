use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices.
///
/// Construction merges duplicates and drops exact zeros, so the stored
/// pattern contains only structurally and numerically nonzero entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let triplets = diag.iter().enumerate().map(|(i, &v)| (i, i, v));
        Self::from_triplets(diag.len(), diag.len(), triplets).expect("diagonal is in range")
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for (i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({i}, {j}) outside a {nrows}x{ncols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite value at ({i}, {j})")));
            }
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut sum = 0.0;
                while k < row.len() && row[k].0 == j {
                    sum += row[k].1;
                    k += 1;
                }
                if sum != 0.0 {
                    indices.push(j);
                    values.push(sum);
                }
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Converts a dense matrix, dropping entries with `|a_ij| <= drop_tol`.
    pub fn from_dense(a: &DMatrix<f64>, drop_tol: f64) -> Self {
        let mut trip = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let v = a[(i, j)];
                if v.abs() > drop_tol {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), trip).expect("dense entries are finite")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    /// Iterates over `(col, value)` of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    /// Iterates over all stored `(row, col, value)` triplets.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[a..b].binary_search(&j) {
            Ok(k) => self.values[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// True if every stored entry lies on the diagonal.
    pub fn is_diagonal(&self) -> bool {
        self.triplets().all(|(i, j, _)| i == j)
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.triplets().map(|(i, j, _)| i.abs_diff(j)).max().unwrap_or(0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `y = A x`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (a, b) = (self.indptr[i], self.indptr[i + 1]);
            let mut s = 0.0;
            for k in a..b {
                s += self.values[k] * x[self.indices[k]];
            }
            *yi = s;
        }
    }

    /// `y += alpha A x`.
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (a, b) = (self.indptr[i], self.indptr[i + 1]);
            let mut s = 0.0;
            for k in a..b {
                s += self.values[k] * x[self.indices[k]];
            }
            *yi += alpha * s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `y += alpha A^T x`.
    pub fn matvec_transpose_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                y[j] += alpha * v * xi;
            }
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let trip = self.triplets().map(|(i, j, v)| (j, i, v));
        CsrMatrix::from_triplets(self.ncols, self.nrows, trip).expect("transpose stays in range")
    }

    pub fn scaled(&self, alpha: f64) -> CsrMatrix {
        let trip = self.triplets().map(|(i, j, v)| (i, j, alpha * v));
        CsrMatrix::from_triplets(self.nrows, self.ncols, trip).expect("same pattern")
    }

    /// `alpha A + beta B`.
    pub fn add(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> Result<CsrMatrix> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::dims(
                "sparse add",
                self.nrows * self.ncols,
                other.nrows * other.ncols,
            ));
        }
        let trip = self
            .triplets()
            .map(|(i, j, v)| (i, j, alpha * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, beta * v)));
        CsrMatrix::from_triplets(self.nrows, self.ncols, trip)
    }

    /// Weighted sum `sum_k w_k A_k` of equally sized matrices.
    pub fn linear_combination(parts: &[(f64, &CsrMatrix)]) -> Result<CsrMatrix> {
        let Some((_, first)) = parts.first() else {
            return Err(Error::InvalidArgument("empty linear combination".into()));
        };
        let (n, m) = (first.nrows, first.ncols);
        let mut trip = Vec::new();
        for (w, a) in parts {
            if a.nrows != n || a.ncols != m {
                return Err(Error::dims("linear combination", n * m, a.nrows * a.ncols));
            }
            trip.extend(a.triplets().map(|(i, j, v)| (i, j, w * v)));
        }
        CsrMatrix::from_triplets(n, m, trip)
    }

    /// Sparse product `A B`.
    pub fn matmul(&self, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::dims("sparse matmul", self.ncols, other.nrows));
        }
        let mut trip = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut touched = vec![false; other.ncols];
        let mut cols = Vec::new();
        for i in 0..self.nrows {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if !touched[j] {
                        touched[j] = true;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &cols {
                trip.push((i, j, acc[j]));
                acc[j] = 0.0;
                touched[j] = false;
            }
            cols.clear();
        }
        CsrMatrix::from_triplets(self.nrows, other.ncols, trip)
    }

    /// `diag(left) A diag(right)`.
    pub fn scale_rows_cols(&self, left: Option<&[f64]>, right: Option<&[f64]>) -> CsrMatrix {
        let trip = self.triplets().map(|(i, j, v)| {
            let l = left.map_or(1.0, |d| d[i]);
            let r = right.map_or(1.0, |d| d[j]);
            (i, j, l * v * r)
        });
        CsrMatrix::from_triplets(self.nrows, self.ncols, trip).expect("same pattern")
    }

    /// Explicit Kronecker product `A ⊗ B`.
    pub fn kron(a: &CsrMatrix, b: &CsrMatrix) -> CsrMatrix {
        let mut trip = Vec::with_capacity(a.nnz() * b.nnz());
        for (i, j, va) in a.triplets() {
            for (k, l, vb) in b.triplets() {
                trip.push((i * b.nrows + k, j * b.ncols + l, va * vb));
            }
        }
        CsrMatrix::from_triplets(a.nrows * b.nrows, a.ncols * b.ncols, trip).expect("kron indices in range")
    }

    /// Restriction to the index sets `rows` x `cols`.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut trip = Vec::new();
        for (new_i, &old_i) in rows.iter().enumerate() {
            for (j, v) in self.row(old_i) {
                if col_map[j] != usize::MAX {
                    trip.push((new_i, col_map[j], v));
                }
            }
        }
        CsrMatrix::from_triplets(rows.len(), cols.len(), trip).expect("restricted indices in range")
    }

    /// Symmetric permutation `P A P^T` with `perm[old] = new`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> CsrMatrix {
        let trip = self.triplets().map(|(i, j, v)| (perm[i], perm[j], v));
        CsrMatrix::from_triplets(self.nrows, self.ncols, trip).expect("permutation in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }

    /// Max-norm asymmetry `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    /// Quadratic form `x^T A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let ax = self.matvec(x);
        dot(x, &ax)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_merge_and_zeros_drop() {
        let a = CsrMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 0, 2.0), (1, 0, 1.0), (1, 0, -1.0)]).unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), 0.0);
    }

    #[test]
    fn rejects_out_of_range_and_nan() {
        assert!(CsrMatrix::from_triplets(2, 2, [(2, 0, 1.0)]).is_err());
        assert!(CsrMatrix::from_triplets(2, 2, [(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn product_matches_dense() {
        let a = CsrMatrix::from_triplets(2, 3, [(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]).unwrap();
        let b = CsrMatrix::from_triplets(3, 2, [(0, 1, 4.0), (1, 0, 5.0), (2, 0, 6.0)]).unwrap();
        let c = a.matmul(&b).unwrap().to_dense();
        assert_eq!(c, a.to_dense() * b.to_dense());
    }

    #[test]
    fn kron_matches_definition() {
        let a = CsrMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)]).unwrap();
        let b = CsrMatrix::from_triplets(2, 1, [(0, 0, 5.0), (1, 0, 7.0)]).unwrap();
        let k = CsrMatrix::kron(&a, &b).to_dense();
        assert_eq!(k.shape(), (4, 2));
        assert_eq!(k[(1, 1)], 2.0 * 7.0);
        assert_eq!(k[(3, 1)], 3.0 * 7.0);
        assert_eq!(k[(2, 0)], 0.0);
    }

    #[test]
    fn transpose_matvec() {
        let a = CsrMatrix::from_triplets(2, 3, [(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]).unwrap();
        let x = [1.0, -1.0];
        let mut y = vec![0.0; 3];
        a.matvec_transpose_add(1.0, &x, &mut y);
        assert_eq!(y, a.transpose().matvec(&x));
    }
}
