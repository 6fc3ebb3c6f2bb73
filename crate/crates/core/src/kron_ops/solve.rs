use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron_ops::banded::BandedCholesky;
use crate::kron_ops::kron::KronSum;
use crate::kron_ops::sparse::{axpy, dot, norm2, CsrMatrix};

/// Default relative residual target for all linear solves.
pub const DEFAULT_TOL: f64 = 1e-10;

/// How saddle-point systems are solved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaddleMethod {
    /// Eliminate the second block with direct C-solves, then run PCG on the
    /// SPD Schur complement `A + B^T C^-1 B`.
    #[default]
    Schur,
    /// Banded LU of the assembled symmetric indefinite matrix.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual target.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest number of matrix entries a direct factorization may store.
    pub direct_budget: usize,
    pub saddle: SaddleMethod,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_iter: 5000,
            direct_budget: 1 << 24,
            saddle: SaddleMethod::Schur,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Direct,
    Iterative,
    Trivial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub method: SolveMethod,
    pub iterations: usize,
    /// Achieved relative residual `||b - A x|| / ||b||`.
    pub residual: f64,
}

/// A square linear map `y = A x`.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()>;
}

/// Approximate inverse `z ≈ P^-1 r` used by PCG.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()>;
}

/// Exact solver `x = A^-1 b`.
pub trait LinearSolver: Sync {
    fn dim(&self) -> usize;
    fn solve_into(&self, rhs: &[f64], out: &mut [f64]) -> Result<()>;

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.solve_into(rhs, &mut out)?;
        Ok(out)
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.matvec_into(x, y);
        Ok(())
    }
}

impl LinearOperator for KronSum {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.apply_into(x, y)
    }
}

impl LinearSolver for BandedCholesky {
    fn dim(&self) -> usize {
        BandedCholesky::dim(self)
    }
    fn solve_into(&self, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(rhs);
        self.solve_in_place(out);
        Ok(())
    }
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        z.copy_from_slice(r);
        Ok(())
    }
}

/// Any exact solver is also a preconditioner.
pub struct SolverPreconditioner<'a>(pub &'a dyn LinearSolver);

impl Preconditioner for SolverPreconditioner<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        self.0.solve_into(r, z)
    }
}

struct Jacobi(Vec<f64>);

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        for ((zi, ri), d) in z.iter_mut().zip(r).zip(&self.0) {
            *zi = ri / d;
        }
        Ok(())
    }
}

/// Preconditioned conjugate gradients on `op x = b`, warm-started from `x`.
///
/// Stops once the true residual satisfies `||b - A x|| <= abs_tol`. The
/// recurrence residual is re-synchronized with the true one before
/// accepting convergence.
pub fn pcg(
    op: &dyn LinearOperator,
    pc: &dyn Preconditioner,
    b: &[f64],
    x: &mut [f64],
    abs_tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = op.dim();
    if b.len() != n || x.len() != n {
        return Err(Error::dims("pcg", n, b.len().max(x.len())));
    }
    let bnorm = norm2(b);
    let rel = |r: f64| if bnorm > 0.0 { r / bnorm } else { r };
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut iterations = 0;
    for _restart in 0..4 {
        op.apply(x, &mut ap)?;
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        let mut rnorm = norm2(&r);
        if rnorm <= abs_tol {
            return Ok(SolveStats {
                method: SolveMethod::Iterative,
                iterations,
                residual: rel(rnorm),
            });
        }
        pc.apply(&r, &mut z)?;
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            op.apply(&p, &mut ap)?;
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::NotPositiveDefinite(format!(
                    "negative curvature p^T A p = {pap:.3e} in CG iteration {iterations}"
                )));
            }
            let alpha = rz / pap;
            axpy(alpha, &p, x);
            axpy(-alpha, &ap, &mut r);
            rnorm = norm2(&r);
            if rnorm <= abs_tol {
                break;
            }
            pc.apply(&r, &mut z)?;
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if iterations >= max_iter && rnorm > abs_tol {
            break;
        }
    }
    op.apply(x, &mut ap)?;
    let true_res = b.iter().zip(&ap).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
    if true_res <= abs_tol {
        return Ok(SolveStats {
            method: SolveMethod::Iterative,
            iterations,
            residual: rel(true_res),
        });
    }
    Err(Error::NoConvergence {
        iterations,
        residual: rel(true_res),
        target: rel(abs_tol),
    })
}

/// Operand of [`solve_spd`].
#[derive(Clone, Copy)]
pub enum SpdOperator<'a> {
    Sparse(&'a CsrMatrix),
    Kron(&'a KronSum),
}

impl SpdOperator<'_> {
    fn dim(&self) -> usize {
        match self {
            SpdOperator::Sparse(a) => a.nrows(),
            SpdOperator::Kron(k) => k.nrows(),
        }
    }

    fn as_operator(&self) -> &dyn LinearOperator {
        match self {
            SpdOperator::Sparse(a) => *a,
            SpdOperator::Kron(k) => *k,
        }
    }
}

/// Solves an SPD system to relative residual `opts.tol`.
///
/// Uses a banded Cholesky factorization when the band fits
/// `opts.direct_budget`, otherwise PCG with a block-diagonal
/// (time-diagonal ⊗ space-factor) preconditioner for Kronecker sums and a
/// Jacobi preconditioner for plain sparse matrices.
pub fn solve_spd(op: SpdOperator<'_>, rhs: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::dims("solve_spd rhs", n, rhs.len()));
    }
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                method: SolveMethod::Trivial,
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let target = opts.tol * bnorm;

    let expanded;
    let matrix = match op {
        SpdOperator::Sparse(a) => Some(a),
        SpdOperator::Kron(k) if k.expanded_nnz_bound() <= opts.direct_budget => {
            expanded = k.expand();
            Some(&expanded)
        }
        SpdOperator::Kron(_) => None,
    };
    if let Some(a) = matrix {
        if BandedCholesky::storage(a) <= opts.direct_budget {
            let chol = BandedCholesky::factor(a)?;
            let mut x = chol.solve(rhs);
            // iterative refinement against the unfactored operator
            let mut res = residual(op.as_operator(), rhs, &x)?;
            let mut steps = 0;
            while norm2(&res) > target && steps < 3 {
                let dx = chol.solve(&res);
                axpy(1.0, &dx, &mut x);
                res = residual(op.as_operator(), rhs, &x)?;
                steps += 1;
            }
            let r = norm2(&res);
            if r > target {
                return Err(Error::NoConvergence {
                    iterations: steps,
                    residual: r / bnorm,
                    target: opts.tol,
                });
            }
            return Ok((
                x,
                SolveStats {
                    method: SolveMethod::Direct,
                    iterations: steps,
                    residual: r / bnorm,
                },
            ));
        }
    }

    let mut x = vec![0.0; n];
    let stats = match op {
        SpdOperator::Sparse(a) => {
            let d = a.diagonal();
            if let Some(i) = d.iter().position(|&v| v <= 0.0) {
                return Err(Error::NotPositiveDefinite(format!(
                    "diagonal entry {i} is not positive"
                )));
            }
            pcg(a, &Jacobi(d), rhs, &mut x, target, opts.max_iter)?
        }
        SpdOperator::Kron(k) => {
            let pc = KronBlockJacobi::new(k)?;
            pcg(k, &pc, rhs, &mut x, target, opts.max_iter)?
        }
    };
    Ok((x, stats))
}

fn residual(op: &dyn LinearOperator, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let mut ax = vec![0.0; b.len()];
    op.apply(x, &mut ax)?;
    Ok(b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect())
}

/// Block-diagonal preconditioner of a square Kronecker sum: block `m` is
/// `sum_k w_k (T_k)_mm S_k`, factored by banded Cholesky.
pub struct KronBlockJacobi {
    space_dim: usize,
    blocks: Vec<BandedCholesky>,
}

impl KronBlockJacobi {
    pub fn new(op: &KronSum) -> Result<Self> {
        let (mt, mt2) = op.time_shape();
        let (ns, ns2) = op.space_shape();
        if mt != mt2 || ns != ns2 {
            return Err(Error::InvalidArgument(
                "block preconditioner needs square factors".into(),
            ));
        }
        let blocks = (0..mt)
            .map(|m| {
                let parts: Vec<(f64, &CsrMatrix)> = op
                    .terms()
                    .iter()
                    .map(|t| (t.weight * t.time.get(m, m), &t.space))
                    .filter(|(w, _)| *w != 0.0)
                    .collect();
                if parts.is_empty() {
                    return Err(Error::NotPositiveDefinite(format!("time block {m} is empty")));
                }
                BandedCholesky::factor(&CsrMatrix::linear_combination(&parts)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KronBlockJacobi { space_dim: ns, blocks })
    }
}

impl Preconditioner for KronBlockJacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        let n = self.space_dim;
        for (m, chol) in self.blocks.iter().enumerate() {
            let dst = &mut z[m * n..(m + 1) * n];
            dst.copy_from_slice(&r[m * n..(m + 1) * n]);
            chol.solve_in_place(dst);
        }
        Ok(())
    }
}

/// Direct solver for `w (D ⊗ S)` with diagonal time factor `D`: one banded
/// Cholesky of `S`, reused for every time block.
pub struct KronDiagonalSolver {
    space_dim: usize,
    scales: Vec<f64>,
    chol: BandedCholesky,
}

impl KronDiagonalSolver {
    pub fn new(op: &KronSum) -> Result<Self> {
        let [term] = op.terms() else {
            return Err(Error::InvalidArgument(
                "block-diagonal solver needs a single Kronecker term".into(),
            ));
        };
        if !term.time.is_square() || !term.time.is_diagonal() {
            return Err(Error::InvalidArgument(
                "block-diagonal solver needs a diagonal time factor".into(),
            ));
        }
        let scales: Vec<f64> = term.time.diagonal().iter().map(|d| d * term.weight).collect();
        if let Some(m) = scales.iter().position(|&s| s <= 0.0) {
            return Err(Error::NotPositiveDefinite(format!("time weight {m} is not positive")));
        }
        Ok(KronDiagonalSolver {
            space_dim: term.space.nrows(),
            scales,
            chol: BandedCholesky::factor(&term.space)?,
        })
    }

    /// Reuses an existing factorization of the space factor.
    pub fn from_parts(scales: Vec<f64>, chol: BandedCholesky) -> Self {
        KronDiagonalSolver {
            space_dim: chol.dim(),
            scales,
            chol,
        }
    }
}

impl LinearSolver for KronDiagonalSolver {
    fn dim(&self) -> usize {
        self.space_dim * self.scales.len()
    }

    fn solve_into(&self, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        if rhs.len() != self.dim() {
            return Err(Error::dims("block-diagonal solve", self.dim(), rhs.len()));
        }
        let n = self.space_dim;
        for (m, s) in self.scales.iter().enumerate() {
            let dst = &mut out[m * n..(m + 1) * n];
            for (d, r) in dst.iter_mut().zip(&rhs[m * n..(m + 1) * n]) {
                *d = r / s;
            }
            self.chol.solve_in_place(dst);
        }
        Ok(())
    }
}

/// Generic SPD solver falling back to [`solve_spd`] on every call.
pub struct KronSpdSolver<'a> {
    pub op: &'a KronSum,
    pub opts: SolverOptions,
}

impl LinearSolver for KronSpdSolver<'_> {
    fn dim(&self) -> usize {
        self.op.nrows()
    }
    fn solve_into(&self, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        let (x, _) = solve_spd(SpdOperator::Kron(self.op), rhs, &self.opts)?;
        out.copy_from_slice(&x);
        Ok(())
    }
}
