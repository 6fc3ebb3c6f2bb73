use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kron_ops::banded::BandedCholesky;
use crate::kron_ops::solve::{LinearSolver, Preconditioner};
use crate::kron_ops::sparse::CsrMatrix;

/// Generalized eigenbasis of `A v = lambda M v` for SPD `A` and diagonal SPD
/// `M`, normalized so that `V^T M V = I`.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    lambda: Vec<f64>,
    v: DMatrix<f64>,
    vt: DMatrix<f64>,
}

impl SpectralBasis {
    pub fn new(a: &CsrMatrix, mass: &[f64]) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || mass.len() != n {
            return Err(Error::dims("spectral basis", n, mass.len()));
        }
        if let Some(i) = mass.iter().position(|&m| !(m > 0.0)) {
            return Err(Error::NotPositiveDefinite(format!("mass entry {i} is not positive")));
        }
        let s: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
        let mut scaled = a.to_dense();
        for j in 0..n {
            for i in 0..n {
                scaled[(i, j)] *= s[i] * s[j];
            }
        }
        // symmetrize against assembly round-off
        let scaled = (&scaled + scaled.transpose()) * 0.5;
        let eig = SymmetricEigen::new(scaled);
        if let Some(i) = eig.eigenvalues.iter().position(|&l| !(l > 0.0)) {
            return Err(Error::NotPositiveDefinite(format!(
                "generalized eigenvalue {i} = {:.3e}",
                eig.eigenvalues[i]
            )));
        }
        let mut v = eig.eigenvectors;
        for (i, si) in s.iter().enumerate() {
            for j in 0..n {
                v[(i, j)] *= si;
            }
        }
        let vt = v.transpose();
        Ok(SpectralBasis {
            lambda: eig.eigenvalues.iter().copied().collect(),
            v,
            vt,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    /// `(I ⊗ V^T) x` for a time-major space-time vector.
    pub fn to_spectral(&self, x: &[f64]) -> Vec<f64> {
        self.transform(&self.vt, x)
    }

    /// `(I ⊗ V) x` for a time-major space-time vector.
    pub fn from_spectral(&self, x: &[f64]) -> Vec<f64> {
        self.transform(&self.v, x)
    }

    fn transform(&self, op: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let blocks = DMatrix::from_column_slice(n, x.len() / n, x);
        let out = op * blocks;
        out.as_slice().to_vec()
    }
}

/// Term `w T ⊗ (M V Λ^power V^T M)` of a spectrally diagonal space-time
/// operator. `power = 0` gives `T ⊗ M`, `power = 1` gives `T ⊗ A`.
#[derive(Clone, Debug)]
pub struct SpectralTerm {
    pub weight: f64,
    pub time: CsrMatrix,
    pub power: i32,
}

/// Exact inverse of `sum_k w_k T_k ⊗ (M V Λ^p_k V^T M)` by one banded
/// Cholesky per eigenmode.
#[derive(Clone, Debug)]
pub struct SpectralKronSolver {
    basis: Arc<SpectralBasis>,
    time_dim: usize,
    factors: Vec<BandedCholesky>,
}

impl SpectralKronSolver {
    pub fn new(basis: Arc<SpectralBasis>, terms: &[SpectralTerm]) -> Result<Self> {
        let Some(first) = terms.first() else {
            return Err(Error::InvalidArgument("spectral operator has no terms".into()));
        };
        let time_dim = first.time.nrows();
        for t in terms {
            if !t.time.is_square() || t.time.nrows() != time_dim {
                return Err(Error::dims("spectral time factor", time_dim, t.time.nrows()));
            }
        }
        let factors = basis
            .eigenvalues()
            .iter()
            .map(|&l| {
                let parts: Vec<(f64, &CsrMatrix)> =
                    terms.iter().map(|t| (t.weight * l.powi(t.power), &t.time)).collect();
                BandedCholesky::factor(&CsrMatrix::linear_combination(&parts)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectralKronSolver {
            basis,
            time_dim,
            factors,
        })
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    fn per_mode(&self, x: &mut [f64], f: impl Fn(&BandedCholesky, &mut [f64])) {
        let n = self.basis.dim();
        let mut buf = vec![0.0; self.time_dim];
        for (mode, chol) in self.factors.iter().enumerate() {
            for (m, b) in buf.iter_mut().enumerate() {
                *b = x[m * n + mode];
            }
            f(chol, &mut buf);
            for (m, b) in buf.iter().enumerate() {
                x[m * n + mode] = *b;
            }
        }
    }

    /// Returns `w` with `||w||^2 = r^T Op^-1 r`.
    pub fn whiten(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check(r.len())?;
        let mut x = self.basis.to_spectral(r);
        self.per_mode(&mut x, |c, b| c.solve_lower_in_place(b));
        Ok(x)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != LinearSolver::dim(self) {
            return Err(Error::dims("spectral solve", LinearSolver::dim(self), len));
        }
        Ok(())
    }
}

impl LinearSolver for SpectralKronSolver {
    fn dim(&self) -> usize {
        self.basis.dim() * self.time_dim
    }

    fn solve_into(&self, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(rhs.len())?;
        let mut x = self.basis.to_spectral(rhs);
        self.per_mode(&mut x, |c, b| c.solve_in_place(b));
        out.copy_from_slice(&self.basis.from_spectral(&x));
        Ok(())
    }
}

impl Preconditioner for SpectralKronSolver {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        self.solve_into(r, z)
    }
}
