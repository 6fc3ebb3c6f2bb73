use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron_ops::sparse::CsrMatrix;

/// Coefficient vector on a tensor space, stored time-major: entry
/// `m * space_dim + n` holds time basis function `m` and space basis
/// function `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeVector {
    space_dim: usize,
    data: Vec<f64>,
}

impl SpaceTimeVector {
    pub fn new(space_dim: usize, data: Vec<f64>) -> Result<Self> {
        if space_dim == 0 || !data.len().is_multiple_of(space_dim) {
            return Err(Error::InvalidArgument(format!(
                "length {} is not a multiple of the space dimension {space_dim}",
                data.len()
            )));
        }
        Ok(SpaceTimeVector { space_dim, data })
    }

    pub fn zeros(time_dim: usize, space_dim: usize) -> Self {
        SpaceTimeVector {
            space_dim,
            data: vec![0.0; time_dim * space_dim],
        }
    }

    /// Outer product `a ⊗ b` of a time vector and a space vector.
    pub fn outer(time: &[f64], space: &[f64]) -> Self {
        let data = time.iter().flat_map(|&t| space.iter().map(move |&s| t * s)).collect();
        SpaceTimeVector {
            space_dim: space.len(),
            data,
        }
    }

    pub fn space_dim(&self) -> usize {
        self.space_dim
    }

    pub fn time_dim(&self) -> usize {
        self.data.len() / self.space_dim
    }

    pub fn block(&self, m: usize) -> &[f64] {
        &self.data[m * self.space_dim..(m + 1) * self.space_dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// One weighted term `weight * (time ⊗ space)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KronTerm {
    pub weight: f64,
    pub time: CsrMatrix,
    pub space: CsrMatrix,
}

/// Sum of Kronecker products acting on time-major space-time vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KronSum {
    time_shape: (usize, usize),
    space_shape: (usize, usize),
    terms: Vec<KronTerm>,
}

impl KronSum {
    /// Empty operator of the given factor shapes.
    pub fn empty(time_shape: (usize, usize), space_shape: (usize, usize)) -> Self {
        KronSum {
            time_shape,
            space_shape,
            terms: Vec::new(),
        }
    }

    pub fn single(weight: f64, time: CsrMatrix, space: CsrMatrix) -> Self {
        let mut k = KronSum::empty((time.nrows(), time.ncols()), (space.nrows(), space.ncols()));
        k.terms.push(KronTerm { weight, time, space });
        k
    }

    pub fn push(&mut self, weight: f64, time: CsrMatrix, space: CsrMatrix) -> Result<()> {
        if (time.nrows(), time.ncols()) != self.time_shape {
            return Err(Error::dims(
                "kron term time factor",
                self.time_shape.0 * self.time_shape.1,
                time.nrows() * time.ncols(),
            ));
        }
        if (space.nrows(), space.ncols()) != self.space_shape {
            return Err(Error::dims(
                "kron term space factor",
                self.space_shape.0 * self.space_shape.1,
                space.nrows() * space.ncols(),
            ));
        }
        self.terms.push(KronTerm { weight, time, space });
        Ok(())
    }

    pub fn with(mut self, weight: f64, time: CsrMatrix, space: CsrMatrix) -> Result<Self> {
        self.push(weight, time, space)?;
        Ok(self)
    }

    pub fn terms(&self) -> &[KronTerm] {
        &self.terms
    }

    pub fn time_shape(&self) -> (usize, usize) {
        self.time_shape
    }

    pub fn space_shape(&self) -> (usize, usize) {
        self.space_shape
    }

    pub fn nrows(&self) -> usize {
        self.time_shape.0 * self.space_shape.0
    }

    pub fn ncols(&self) -> usize {
        self.time_shape.1 * self.space_shape.1
    }

    /// `out += alpha * Op v`, never forming the Kronecker matrix.
    pub fn apply_add(&self, alpha: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.ncols() {
            return Err(Error::dims("kron matvec input", self.ncols(), v.len()));
        }
        if out.len() != self.nrows() {
            return Err(Error::dims("kron matvec output", self.nrows(), out.len()));
        }
        let (ns_out, ns_in) = self.space_shape;
        let mut tmp = vec![0.0; self.time_shape.1 * ns_out];
        for term in &self.terms {
            // apply the space factor to every time block, then combine blocks
            for j in 0..self.time_shape.1 {
                term.space
                    .matvec_into(&v[j * ns_in..(j + 1) * ns_in], &mut tmp[j * ns_out..(j + 1) * ns_out]);
            }
            for i in 0..self.time_shape.0 {
                let dst = &mut out[i * ns_out..(i + 1) * ns_out];
                for (j, t) in term.time.row(i) {
                    let w = alpha * term.weight * t;
                    for (d, s) in dst.iter_mut().zip(&tmp[j * ns_out..(j + 1) * ns_out]) {
                        *d += w * s;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|x| *x = 0.0);
        self.apply_add(1.0, v, out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.nrows()];
        self.apply_add(1.0, v, &mut out)?;
        Ok(out)
    }

    pub fn transpose(&self) -> KronSum {
        KronSum {
            time_shape: (self.time_shape.1, self.time_shape.0),
            space_shape: (self.space_shape.1, self.space_shape.0),
            terms: self
                .terms
                .iter()
                .map(|t| KronTerm {
                    weight: t.weight,
                    time: t.time.transpose(),
                    space: t.space.transpose(),
                })
                .collect(),
        }
    }

    pub fn scaled(&self, alpha: f64) -> KronSum {
        let mut k = self.clone();
        k.terms.iter_mut().for_each(|t| t.weight *= alpha);
        k
    }

    /// Concatenates the terms of two equally shaped operators.
    pub fn sum(&self, other: &KronSum) -> Result<KronSum> {
        let mut k = self.clone();
        for t in &other.terms {
            k.push(t.weight, t.time.clone(), t.space.clone())?;
        }
        Ok(k)
    }

    /// Explicit sparse matrix of the operator.
    pub fn expand(&self) -> CsrMatrix {
        let mut trip = Vec::new();
        for t in &self.terms {
            let k = CsrMatrix::kron(&t.time, &t.space);
            trip.extend(k.triplets().map(|(i, j, v)| (i, j, t.weight * v)));
        }
        CsrMatrix::from_triplets(self.nrows(), self.ncols(), trip).expect("expanded kron in range")
    }

    /// Number of nonzeros an explicit expansion would hold (upper bound).
    pub fn expanded_nnz_bound(&self) -> usize {
        self.terms.iter().map(|t| t.time.nnz() * t.space.nnz()).sum()
    }
}

/// Matrix-free product of a Kronecker sum with a space-time vector.
pub fn kron_matvec(op: &KronSum, v: &SpaceTimeVector) -> Result<SpaceTimeVector> {
    if v.space_dim() != op.space_shape().1 {
        return Err(Error::dims(
            "kron matvec space dimension",
            op.space_shape().1,
            v.space_dim(),
        ));
    }
    let out = op.matvec(v.as_slice())?;
    SpaceTimeVector::new(op.space_shape().0, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn dense_to_csr(rows: usize, cols: usize, vals: &[f64]) -> CsrMatrix {
        let trip = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j, vals[i * cols + j])));
        CsrMatrix::from_triplets(rows, cols, trip).unwrap()
    }

    #[test]
    fn identity_kron_identity() {
        let op = KronSum::single(1.0, CsrMatrix::identity(2), CsrMatrix::identity(3));
        let v = SpaceTimeVector::new(3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(kron_matvec(&op, &v).unwrap(), v);
    }

    #[test]
    fn rank_one_mixed_product() {
        // (a b^T ⊗ c d^T) v = (a ⊗ c) * ((b ⊗ d)^T v)
        let (a, b, c, d) = ([1.0, 2.0], [3.0, -1.0], [0.5, 1.0, 2.0], [1.0, 0.0, -2.0]);
        let at = dense_to_csr(2, 2, &[a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]);
        let mut cd = Vec::new();
        for ci in c {
            for dj in d {
                cd.push(ci * dj);
            }
        }
        let ax = dense_to_csr(3, 3, &cd);
        let op = KronSum::single(1.0, at, ax);
        let v: Vec<f64> = (0..6).map(|i| i as f64 + 1.0).collect();
        let bd = SpaceTimeVector::outer(&b, &d);
        let s: f64 = bd.as_slice().iter().zip(&v).map(|(x, y)| x * y).sum();
        let expected = SpaceTimeVector::outer(&a, &c);
        let got = op.matvec(&v).unwrap();
        for (g, e) in got.iter().zip(expected.as_slice()) {
            assert!((g - e * s).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let op = KronSum::single(1.0, CsrMatrix::identity(2), CsrMatrix::identity(3));
        assert!(op.matvec(&[1.0; 5]).is_err());
        let mut k = KronSum::empty((2, 2), (3, 3));
        assert!(k.push(1.0, CsrMatrix::identity(3), CsrMatrix::identity(3)).is_err());
    }

    #[test]
    fn rejects_bad_layout() {
        assert!(SpaceTimeVector::new(4, vec![0.0; 6]).is_err());
    }

    fn factor(rows: usize, cols: usize) -> impl Strategy<Value = CsrMatrix> {
        proptest::collection::vec(prop_oneof![Just(0.0), -2.0..2.0f64], rows * cols)
            .prop_map(move |vals| dense_to_csr(rows, cols, &vals))
    }

    fn kron_case() -> impl Strategy<Value = (Vec<(f64, CsrMatrix, CsrMatrix)>, Vec<f64>)> {
        (1usize..=8, 1usize..=8, 1usize..=8, 1usize..=8, 1usize..=3).prop_flat_map(|(tr, tc, sr, sc, nt)| {
            (
                proptest::collection::vec((-2.0..2.0f64, factor(tr, tc), factor(sr, sc)), nt),
                proptest::collection::vec(-1.0..1.0f64, tc * sc),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matvec_matches_dense_expansion((terms, v) in kron_case()) {
            let (_, t0, s0) = &terms[0];
            let mut op = KronSum::empty((t0.nrows(), t0.ncols()), (s0.nrows(), s0.ncols()));
            let mut dense = nalgebra::DMatrix::zeros(op.nrows(), op.ncols());
            for (w, t, s) in &terms {
                op.push(*w, t.clone(), s.clone()).unwrap();
                dense += t.to_dense().kronecker(&s.to_dense()) * *w;
            }
            let got = op.matvec(&v).unwrap();
            let want = &dense * DVector::from_column_slice(&v);
            for (g, w) in got.iter().zip(want.iter()) {
                prop_assert!((g - w).abs() <= 1e-13 * (1.0 + w.abs()));
            }
            let exp = op.expand().matvec(&v);
            for (g, w) in exp.iter().zip(want.iter()) {
                prop_assert!((g - w).abs() <= 1e-13 * (1.0 + w.abs()));
            }
        }

        #[test]
        fn matvec_is_linear((terms, v) in kron_case(), alpha in -3.0..3.0f64) {
            let (_, t0, s0) = &terms[0];
            let mut op = KronSum::empty((t0.nrows(), t0.ncols()), (s0.nrows(), s0.ncols()));
            for (w, t, s) in &terms {
                op.push(*w, t.clone(), s.clone()).unwrap();
            }
            let u: Vec<f64> = v.iter().map(|x| x * x - 0.5).collect();
            let comb: Vec<f64> = v.iter().zip(&u).map(|(a, b)| alpha * a + b).collect();
            let lhs = op.matvec(&comb).unwrap();
            let (ov, ou) = (op.matvec(&v).unwrap(), op.matvec(&u).unwrap());
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (alpha * ov[i] + ou[i])).abs() <= 1e-12 * (1.0 + lhs[i].abs()));
            }
        }
    }

    #[test]
    fn random_3x3_factors_match_dense_to_1e14() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut vals = || (0..9).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (t, s) = (dense_to_csr(3, 3, &vals()), dense_to_csr(3, 3, &vals()));
        let v = vals();
        let op = KronSum::single(1.0, t.clone(), s.clone());
        let want = t.to_dense().kronecker(&s.to_dense()) * DVector::from_vec(v.clone());
        let got = op.matvec(&v).unwrap();
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-14);
        }
    }
}
