use crate::error::{Error, Result};
use crate::kron_ops::banded::BandedLu;
use crate::kron_ops::kron::KronSum;
use crate::kron_ops::solve::{
    pcg, KronBlockJacobi, KronDiagonalSolver, KronSpdSolver, LinearOperator, LinearSolver, Preconditioner,
    SaddleMethod, SolveMethod, SolveStats, SolverOptions,
};
use crate::kron_ops::sparse::{norm2, CsrMatrix};

/// Symmetric indefinite block operator `[[A, B^T], [B, -C]]` with `A`, `C` SPD.
#[derive(Clone, Debug)]
pub struct BlockSaddleOperator {
    pub a: KronSum,
    pub b: KronSum,
    pub c: KronSum,
}

#[derive(Clone, Debug)]
pub struct SaddleSolution {
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub stats: SolveStats,
}

impl BlockSaddleOperator {
    pub fn new(a: KronSum, b: KronSum, c: KronSum) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::dims("saddle A (square)", a.nrows(), a.ncols()));
        }
        if c.nrows() != c.ncols() {
            return Err(Error::dims("saddle C (square)", c.nrows(), c.ncols()));
        }
        if b.ncols() != a.nrows() {
            return Err(Error::dims("saddle B columns", a.nrows(), b.ncols()));
        }
        if b.nrows() != c.nrows() {
            return Err(Error::dims("saddle B rows", c.nrows(), b.nrows()));
        }
        Ok(BlockSaddleOperator { a, b, c })
    }

    pub fn ny(&self) -> usize {
        self.a.nrows()
    }

    pub fn np(&self) -> usize {
        self.c.nrows()
    }

    /// Returns `(A y + B^T p, B y - C p)`.
    pub fn apply(&self, y: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if y.len() != self.ny() {
            return Err(Error::dims("saddle apply y", self.ny(), y.len()));
        }
        if p.len() != self.np() {
            return Err(Error::dims("saddle apply p", self.np(), p.len()));
        }
        let mut r1 = self.a.matvec(y)?;
        self.b.transpose().apply_add(1.0, p, &mut r1)?;
        let mut r2 = self.b.matvec(y)?;
        self.c.apply_add(-1.0, p, &mut r2)?;
        Ok((r1, r2))
    }

    /// Euclidean norm of the block residual `rhs - S (y, p)`.
    pub fn residual_norm(&self, y: &[f64], p: &[f64], f1: &[f64], f2: &[f64]) -> Result<f64> {
        let (r1, r2) = self.apply(y, p)?;
        let s1: f64 = r1.iter().zip(f1).map(|(a, b)| (b - a).powi(2)).sum();
        let s2: f64 = r2.iter().zip(f2).map(|(a, b)| (b - a).powi(2)).sum();
        Ok((s1 + s2).sqrt())
    }

    /// Assembled matrix with unknowns ordered `(y, p)`.
    pub fn expand(&self) -> CsrMatrix {
        let ny = self.ny();
        let a = self.a.expand();
        let b = self.b.expand();
        let c = self.c.expand();
        let mut trip: Vec<(usize, usize, f64)> = a.triplets().collect();
        for (i, j, v) in b.triplets() {
            trip.push((ny + i, j, v));
            trip.push((j, ny + i, v));
        }
        trip.extend(c.triplets().map(|(i, j, v)| (ny + i, ny + j, -v)));
        CsrMatrix::from_triplets(ny + self.np(), ny + self.np(), trip).expect("blocks are dimension-checked")
    }

    /// Slab-interleaved ordering `[y_0, p_0, y_1, p_1, ..., y_M-1]` when the
    /// time shapes allow it; `perm[old] = new`.
    fn interleaving(&self) -> Vec<usize> {
        let (mp, my) = self.b.time_shape();
        let n = self.b.space_shape().1;
        let interleave = my == mp + 1 && self.b.space_shape().0 == n;
        let total = self.ny() + self.np();
        if !interleave {
            return (0..total).collect();
        }
        let mut perm = vec![0; total];
        for m in 0..my {
            for i in 0..n {
                perm[m * n + i] = 2 * m * n + i;
            }
        }
        for q in 0..mp {
            for i in 0..n {
                perm[my * n + q * n + i] = (2 * q + 1) * n + i;
            }
        }
        perm
    }
}

/// Solves `[[A, B^T], [B, -C]] (y, p) = (f1, f2)` with default
/// sub-solvers: block-diagonal Cholesky for `C` when its time factor is
/// diagonal and a time-block Jacobi preconditioner for the Schur complement.
pub fn solve_saddle(op: &BlockSaddleOperator, f1: &[f64], f2: &[f64], opts: &SolverOptions) -> Result<SaddleSolution> {
    match opts.saddle {
        SaddleMethod::Direct => solve_saddle_direct(op, f1, f2, opts),
        SaddleMethod::Schur => {
            let spd_opts = SolverOptions {
                tol: opts.tol * 1e-2,
                ..*opts
            };
            let generic;
            let diag;
            let c_solver: &dyn LinearSolver = match KronDiagonalSolver::new(&op.c) {
                Ok(s) => {
                    diag = s;
                    &diag
                }
                Err(Error::InvalidArgument(_)) => {
                    generic = KronSpdSolver {
                        op: &op.c,
                        opts: spd_opts,
                    };
                    &generic
                }
                Err(e) => return Err(e),
            };
            let pc = KronBlockJacobi::new(&op.a)?;
            solve_saddle_schur(op, f1, f2, opts, c_solver, &pc)
        }
    }
}

struct SchurOperator<'a> {
    op: &'a BlockSaddleOperator,
    bt: KronSum,
    c_solver: &'a dyn LinearSolver,
}

impl LinearOperator for SchurOperator<'_> {
    fn dim(&self) -> usize {
        self.op.ny()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.op.a.apply_into(x, y)?;
        let bx = self.op.b.matvec(x)?;
        let mut cinv = vec![0.0; bx.len()];
        self.c_solver.solve_into(&bx, &mut cinv)?;
        self.bt.apply_add(1.0, &cinv, y)
    }
}

/// Schur-complement path with caller-supplied `C` solver and preconditioner
/// for `A + B^T C^-1 B`.
pub fn solve_saddle_schur(
    op: &BlockSaddleOperator,
    f1: &[f64],
    f2: &[f64],
    opts: &SolverOptions,
    c_solver: &dyn LinearSolver,
    pc: &dyn Preconditioner,
) -> Result<SaddleSolution> {
    check_rhs(op, f1, f2)?;
    let rhs_norm = (norm2(f1).powi(2) + norm2(f2).powi(2)).sqrt();
    if rhs_norm == 0.0 {
        return Ok(trivial(op));
    }
    let schur = SchurOperator {
        op,
        bt: op.b.transpose(),
        c_solver,
    };
    let mut cf2 = vec![0.0; op.np()];
    c_solver.solve_into(f2, &mut cf2)?;
    let mut g = f1.to_vec();
    schur.bt.apply_add(1.0, &cf2, &mut g)?;

    let target = opts.tol * rhs_norm;
    let mut y = vec![0.0; op.ny()];
    let mut iterations = 0;
    let mut tighten = 0.5;
    for _ in 0..4 {
        let stats = pcg(&schur, pc, &g, &mut y, tighten * target, opts.max_iter)?;
        iterations += stats.iterations;
        let p = recover_p(op, c_solver, &y, f2)?;
        let res = op.residual_norm(&y, &p, f1, f2)?;
        if res <= target {
            return Ok(SaddleSolution {
                y,
                p,
                stats: SolveStats {
                    method: SolveMethod::Iterative,
                    iterations,
                    residual: res / rhs_norm,
                },
            });
        }
        tighten *= 0.1;
    }
    let p = recover_p(op, c_solver, &y, f2)?;
    Err(Error::NoConvergence {
        iterations,
        residual: op.residual_norm(&y, &p, f1, f2)? / rhs_norm,
        target: opts.tol,
    })
}

fn recover_p(op: &BlockSaddleOperator, c_solver: &dyn LinearSolver, y: &[f64], f2: &[f64]) -> Result<Vec<f64>> {
    let mut by = op.b.matvec(y)?;
    for (v, f) in by.iter_mut().zip(f2) {
        *v -= f;
    }
    let mut p = vec![0.0; op.np()];
    c_solver.solve_into(&by, &mut p)?;
    Ok(p)
}

/// Banded LU of the assembled matrix in slab-interleaved order.
pub fn solve_saddle_direct(
    op: &BlockSaddleOperator,
    f1: &[f64],
    f2: &[f64],
    opts: &SolverOptions,
) -> Result<SaddleSolution> {
    check_rhs(op, f1, f2)?;
    let rhs_norm = (norm2(f1).powi(2) + norm2(f2).powi(2)).sqrt();
    if rhs_norm == 0.0 {
        return Ok(trivial(op));
    }
    let perm = op.interleaving();
    let bound = op.a.expanded_nnz_bound() + 2 * op.b.expanded_nnz_bound() + op.c.expanded_nnz_bound();
    if bound > opts.direct_budget {
        return Err(Error::Budget {
            what: "assembled saddle matrix",
            required: bound,
            budget: opts.direct_budget,
        });
    }
    let full = op.expand().permute_symmetric(&perm);
    let required = BandedLu::storage(&full);
    if required > opts.direct_budget {
        return Err(Error::Budget {
            what: "banded LU of saddle matrix",
            required,
            budget: opts.direct_budget,
        });
    }
    let lu = BandedLu::factor(&full)?;
    let ny = op.ny();
    let mut rhs = vec![0.0; perm.len()];
    for (old, &new) in perm.iter().enumerate() {
        rhs[new] = if old < ny { f1[old] } else { f2[old - ny] };
    }
    let sol = lu.solve(&rhs);
    let mut y = vec![0.0; ny];
    let mut p = vec![0.0; op.np()];
    for (old, &new) in perm.iter().enumerate() {
        if old < ny {
            y[old] = sol[new];
        } else {
            p[old - ny] = sol[new];
        }
    }
    let res = op.residual_norm(&y, &p, f1, f2)?;
    if res > opts.tol * rhs_norm {
        return Err(Error::NoConvergence {
            iterations: 0,
            residual: res / rhs_norm,
            target: opts.tol,
        });
    }
    Ok(SaddleSolution {
        y,
        p,
        stats: SolveStats {
            method: SolveMethod::Direct,
            iterations: 0,
            residual: res / rhs_norm,
        },
    })
}

fn check_rhs(op: &BlockSaddleOperator, f1: &[f64], f2: &[f64]) -> Result<()> {
    if f1.len() != op.ny() {
        return Err(Error::dims("saddle rhs (first block)", op.ny(), f1.len()));
    }
    if f2.len() != op.np() {
        return Err(Error::dims("saddle rhs (second block)", op.np(), f2.len()));
    }
    if f1.iter().chain(f2).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("saddle rhs contains non-finite values".into()));
    }
    Ok(())
}

fn trivial(op: &BlockSaddleOperator) -> SaddleSolution {
    SaddleSolution {
        y: vec![0.0; op.ny()],
        p: vec![0.0; op.np()],
        stats: SolveStats {
            method: SolveMethod::Trivial,
            iterations: 0,
            residual: 0.0,
        },
    }
}
