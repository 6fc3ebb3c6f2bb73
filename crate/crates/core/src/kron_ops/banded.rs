//! Band-limited direct factorizations.
//!
//! Spatial matrices on structured meshes in natural ordering have a
//! half-bandwidth of about one mesh row, and every temporal matrix is
//! tridiagonal, so band storage is the natural sparse direct format here.

use crate::error::{Error, Result};
use crate::kron_ops::sparse::CsrMatrix;

/// Cholesky factor `A = L L^T` of a symmetric positive definite band matrix.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i, i-bw..=i] left-padded with zeros
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Number of band entries a factorization of `a` would store.
    pub fn storage(a: &CsrMatrix) -> usize {
        a.nrows() * (a.bandwidth() + 1)
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims("banded cholesky", a.nrows(), a.ncols()));
        }
        let n = a.nrows();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let i0 = i.saturating_sub(bw);
            for j in i0..=i {
                let k0 = i0.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                for k in k0..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite(format!(
                            "pivot {s:.3e} at row {i} of a {n}x{n} band matrix"
                        )));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L z = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let (bw, w) = (self.bw, self.bw + 1);
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
    }

    /// Solves `L^T x = z` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let (bw, w) = (self.bw, self.bw + 1);
        for i in (0..self.n).rev() {
            let xi = b[i] / self.l[i * w + bw];
            b[i] = xi;
            for k in i.saturating_sub(bw)..i {
                b[k] -= self.l[i * w + (k + bw - i)] * xi;
            }
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        self.solve_lower_in_place(b);
        self.solve_upper_in_place(b);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// LU factorization with partial pivoting of a general band matrix.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    // column-major band storage: entry (i, j) at ab[j * ldab + kl + ku + i - j]
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Lower and upper bandwidths of `a`.
    pub fn bandwidths(a: &CsrMatrix) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for (i, j, _) in a.triplets() {
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
        (kl, ku)
    }

    /// Number of band entries a factorization of `a` would store.
    pub fn storage(a: &CsrMatrix) -> usize {
        let (kl, ku) = Self::bandwidths(a);
        a.nrows() * (2 * kl + ku + 1)
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims("banded lu", a.nrows(), a.ncols()));
        }
        let n = a.nrows();
        let (kl, ku) = Self::bandwidths(a);
        let ldab = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; n * ldab],
            piv: vec![0; n],
        };
        for (i, j, v) in a.triplets() {
            *lu.at_mut(i, j) = v;
        }
        let kv = ku + kl;
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = lu.at(j, j).abs();
            for r in 1..=km {
                let v = lu.at(j + r, j).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            lu.piv[j] = j + p;
            if best == 0.0 {
                return Err(Error::Singular(format!("zero pivot in column {j}")));
            }
            ju = ju.max((j + ku + p).min(n - 1));
            if p != 0 {
                for c in j..=ju {
                    let a = lu.at(j, c);
                    let b = lu.at(j + p, c);
                    *lu.at_mut(j, c) = b;
                    *lu.at_mut(j + p, c) = a;
                }
            }
            let d = lu.at(j, j);
            for r in 1..=km {
                *lu.at_mut(j + r, j) /= d;
            }
            for c in j + 1..=ju {
                let a = lu.at(j, c);
                if a != 0.0 {
                    for r in 1..=km {
                        let l = lu.at(j + r, j);
                        *lu.at_mut(j + r, c) -= l * a;
                    }
                }
            }
            debug_assert!(ju <= j + kv);
        }
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.ab[j * self.ldab + self.kl + self.ku + i - j]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.ab[j * self.ldab + self.kl + self.ku + i - j]
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = self.kl.min(n - 1 - j);
            let bj = b[j];
            for r in 1..=km {
                b[j + r] -= self.at(j + r, j) * bj;
            }
        }
        let kv = self.kl + self.ku;
        for j in (0..n).rev() {
            b[j] /= self.at(j, j);
            let bj = b[j];
            for i in j.saturating_sub(kv)..j {
                b[i] -= self.at(i, j) * bj;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trip = Vec::new();
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                trip.push((i, j, rng.random_range(-1.0..1.0)));
            }
        }
        CsrMatrix::from_triplets(n, n, trip).unwrap()
    }

    #[test]
    fn cholesky_matches_dense_solve() {
        let b = random_band(30, 3, 3, 7);
        let bt = b.transpose();
        let spd = b.matmul(&bt).unwrap().add(1.0, &CsrMatrix::identity(30), 0.5).unwrap();
        let chol = BandedCholesky::factor(&spd).unwrap();
        let rhs: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let x = chol.solve(&rhs);
        let dense = spd.to_dense().lu().solve(&DVector::from_vec(rhs)).unwrap();
        for (a, b) in x.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = CsrMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(BandedCholesky::factor(&a), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn lu_needs_pivoting() {
        // zero leading pivot forces an interchange
        let a = CsrMatrix::from_triplets(
            3,
            3,
            [
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 1, 1.0),
                (1, 2, 2.0),
                (2, 1, 3.0),
                (2, 2, 1.0),
            ],
        )
        .unwrap();
        let lu = BandedLu::factor(&a).unwrap();
        let rhs = [1.0, 2.0, 3.0];
        let x = lu.solve(&rhs);
        let r = a.matvec(&x);
        for (ri, bi) in r.iter().zip(rhs) {
            assert!((ri - bi).abs() < 1e-13);
        }
    }

    #[test]
    fn lu_random_unsymmetric_band() {
        let a = random_band(40, 4, 2, 11);
        let a = a.add(1.0, &CsrMatrix::identity(40), 0.1).unwrap();
        let lu = BandedLu::factor(&a).unwrap();
        let rhs: Vec<f64> = (0..40).map(|i| 1.0 + i as f64).collect();
        let x = lu.solve(&rhs);
        let dense: DMatrix<f64> = a.to_dense();
        let xd = dense.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for (p, q) in x.iter().zip(xd.iter()) {
            assert!((p - q).abs() < 1e-9 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn lu_detects_singular() {
        let a = CsrMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert!(matches!(BandedLu::factor(&a), Err(Error::Singular(_))));
    }
}
