//! High-fidelity space-time saddle-point solves.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron_ops::{
    solve_saddle_direct, solve_saddle_schur, BandedCholesky, BlockSaddleOperator, KronBlockJacobi, KronDiagonalSolver,
    KronSum, LinearSolver, Preconditioner, SaddleMethod, SolveStats, SolverOptions, SpectralBasis, SpectralKronSolver,
    SpectralTerm,
};
use crate::problem::{ParameterVector, SeparableProblem};

/// Preconditioner for the Schur complement `A + B^T C^-1 B`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HifiPreconditioner {
    /// Eigenbasis of `A_x(mu)`: the exact inverse of the Schur complement.
    Spectral,
    /// Eigenbasis of `A_x(mu_ref)`, shared by all parameters.
    #[default]
    Reference,
    /// Time-diagonal blocks `T_mm M + (M_t)_mm A_x(mu)`.
    BlockDiagonal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HifiOptions {
    pub solver: SolverOptions,
    pub preconditioner: HifiPreconditioner,
}

/// High-fidelity trajectory with its reference-parameter lift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub mu: ParameterVector,
    /// Trial coefficients, length `N M`.
    pub y: Vec<f64>,
    /// Test coefficients, length `N P`.
    pub p: Vec<f64>,
    /// `(M_t^psi ⊗ A_x(mu_ref))^-1 (Z_t ⊗ M_x) y`, length `N P`.
    pub lift: Vec<f64>,
    /// Relative residual of the saddle solve.
    pub residual: f64,
}

/// Saddle operator and right-hand side at `mu`.
pub fn assemble_system(problem: &SeparableProblem, mu: &[f64]) -> Result<(BlockSaddleOperator, Vec<f64>, Vec<f64>)> {
    let ev = problem.evaluate(mu)?;
    let tm = &problem.time;
    let mass = problem.space.mass_matrix();
    let a = KronSum::single(1.0, tm.terminal.clone(), mass.clone()).with(1.0, tm.mass.clone(), ev.stiffness.clone())?;
    let b = KronSum::single(1.0, tm.coupling.clone(), mass);
    let c = KronSum::single(1.0, tm.mass_test.clone(), ev.stiffness);
    let n = problem.space_dim();
    let mut f1 = ev.f1;
    for (m, &w) in tm.initial.iter().enumerate() {
        if w != 0.0 {
            for i in 0..n {
                f1[m * n + i] += w * ev.initial[i];
            }
        }
    }
    Ok((BlockSaddleOperator::new(a, b, c)?, f1, ev.f2))
}

/// Factorizations at the reference parameter shared by every solve.
#[derive(Debug)]
pub struct ReferenceData {
    pub stiffness_chol: BandedCholesky,
    pub basis: Arc<SpectralBasis>,
    /// Inverse of the W-Gram `T ⊗ M + M_t ⊗ A + K_t ⊗ M A^-1 M` at `mu_ref`.
    pub gram: SpectralKronSolver,
}

impl ReferenceData {
    pub fn new(problem: &SeparableProblem) -> Result<Self> {
        let a_ref = problem.reference_stiffness();
        let basis = Arc::new(SpectralBasis::new(a_ref, problem.mass())?);
        let gram = schur_spectral(basis.clone(), problem)?;
        Ok(ReferenceData {
            stiffness_chol: BandedCholesky::factor(a_ref)?,
            basis,
            gram,
        })
    }
}

fn schur_spectral(basis: Arc<SpectralBasis>, problem: &SeparableProblem) -> Result<SpectralKronSolver> {
    let tm = &problem.time;
    SpectralKronSolver::new(
        basis,
        &[
            SpectralTerm {
                weight: 1.0,
                time: tm.terminal.clone(),
                power: 0,
            },
            SpectralTerm {
                weight: 1.0,
                time: tm.mass.clone(),
                power: 1,
            },
            SpectralTerm {
                weight: 1.0,
                time: tm.stiffness(),
                power: -1,
            },
        ],
    )
}

/// Reusable high-fidelity solver for one problem.
#[derive(Clone)]
pub struct HifiSolver {
    problem: Arc<SeparableProblem>,
    options: HifiOptions,
    reference: Arc<ReferenceData>,
}

impl HifiSolver {
    pub fn new(problem: Arc<SeparableProblem>, options: HifiOptions) -> Result<Self> {
        let reference = Arc::new(ReferenceData::new(&problem)?);
        Ok(HifiSolver {
            problem,
            options,
            reference,
        })
    }

    pub fn problem(&self) -> &Arc<SeparableProblem> {
        &self.problem
    }

    pub fn options(&self) -> &HifiOptions {
        &self.options
    }

    pub fn reference(&self) -> &Arc<ReferenceData> {
        &self.reference
    }

    /// Solves the saddle system at `mu` and attaches the reference lift.
    pub fn solve(&self, mu: &[f64]) -> Result<Snapshot> {
        let (y, p, stats) = self.solve_system(mu)?;
        let lift = self.lift(&y)?;
        Ok(Snapshot {
            mu: mu.to_vec(),
            y,
            p,
            lift,
            residual: stats.residual,
        })
    }

    /// Raw `(y, p)` solve without the lift.
    pub fn solve_system(&self, mu: &[f64]) -> Result<(Vec<f64>, Vec<f64>, SolveStats)> {
        let (op, f1, f2) = assemble_system(&self.problem, mu)?;
        let opts = &self.options.solver;
        let sol = match opts.saddle {
            SaddleMethod::Direct => solve_saddle_direct(&op, &f1, &f2, opts)?,
            SaddleMethod::Schur => {
                let c_solver = KronDiagonalSolver::new(&op.c)?;
                let local;
                let pc: &dyn Preconditioner = match self.options.preconditioner {
                    HifiPreconditioner::Reference => &self.reference.gram,
                    HifiPreconditioner::Spectral => {
                        let stiffness = &op.c.terms()[0].space;
                        let basis = Arc::new(SpectralBasis::new(stiffness, self.problem.mass())?);
                        local = PcBox::Spectral(schur_spectral(basis, &self.problem)?);
                        &local
                    }
                    HifiPreconditioner::BlockDiagonal => {
                        local = PcBox::Block(KronBlockJacobi::new(&op.a)?);
                        &local
                    }
                };
                solve_saddle_schur(&op, &f1, &f2, opts, &c_solver, pc)?
            }
        };
        Ok((sol.y, sol.p, sol.stats))
    }

    /// Solver for `M_t^psi ⊗ A_x(mu_ref)`.
    pub fn lift_solver(&self) -> KronDiagonalSolver {
        KronDiagonalSolver::from_parts(self.problem.time.widths.clone(), self.reference.stiffness_chol.clone())
    }

    /// `(M_t^psi ⊗ A_x(mu_ref))^-1 (Z_t ⊗ M_x) y`.
    pub fn lift(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.problem.space_dim();
        if y.len() != n * self.problem.num_nodes() {
            return Err(Error::dims("lift input", n * self.problem.num_nodes(), y.len()));
        }
        let widths = &self.problem.time.widths;
        let mass = self.problem.mass();
        let mut out = vec![0.0; n * widths.len()];
        for (p, k) in widths.iter().enumerate() {
            let dst = &mut out[p * n..(p + 1) * n];
            for i in 0..n {
                dst[i] = mass[i] * (y[(p + 1) * n + i] - y[p * n + i]) / k;
            }
            self.reference.stiffness_chol.solve_in_place(dst);
        }
        Ok(out)
    }
}

enum PcBox {
    Spectral(SpectralKronSolver),
    Block(KronBlockJacobi),
}

impl Preconditioner for PcBox {
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        match self {
            PcBox::Spectral(s) => s.solve_into(r, z),
            PcBox::Block(b) => b.apply(r, z),
        }
    }
}

/// One-shot solve with default options and the given tolerance.
pub fn solve_hifi(problem: Arc<SeparableProblem>, mu: &[f64], tol: f64) -> Result<Snapshot> {
    let mut options = HifiOptions::default();
    options.solver.tol = tol;
    HifiSolver::new(problem, options)?.solve(mu)
}

/// The y-only residual `l_d(mu; w_i) - b_d(mu; y, w_i)` over all trial
/// basis functions, with the test-space lift taken at `mu`.
pub fn y_only_residual(problem: &SeparableProblem, mu: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let (op, f1, f2) = assemble_system(problem, mu)?;
    if y.len() != op.ny() {
        return Err(Error::dims("trial coefficients", op.ny(), y.len()));
    }
    let c_solver = KronDiagonalSolver::new(&op.c)?;
    let mut r = f1;
    op.a.apply_add(-1.0, y, &mut r)?;
    let mut by = op.b.matvec(y)?;
    for (v, f) in by.iter_mut().zip(&f2) {
        *v -= f;
    }
    let z = c_solver.solve(&by)?;
    op.b.transpose().apply_add(-1.0, &z, &mut r)?;
    Ok(r)
}

/// Largest absolute defect of the y-only equation.
pub fn check_y_only_equation(problem: &SeparableProblem, mu: &[f64], snapshot: &Snapshot) -> Result<f64> {
    let r = y_only_residual(problem, mu, &snapshot.y)?;
    Ok(r.iter().fold(0.0, |m, v| m.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron_ops::sparse::norm2;
    use crate::problem::make_thermal_block;

    fn toy() -> Arc<SeparableProblem> {
        Arc::new(make_thermal_block(4, 3, 1.0).unwrap())
    }

    #[test]
    fn homogeneous_data_gives_zero() {
        let p = toy();
        let mut mu = p.reference.clone();
        mu[8] = 0.0;
        let s = solve_hifi(p.clone(), &mu, 1e-10).unwrap();
        assert!(s.y.iter().chain(&s.p).chain(&s.lift).all(|&v| v == 0.0));
    }

    #[test]
    fn system_dimensions() {
        let p = toy();
        let (op, f1, f2) = assemble_system(&p, &p.reference).unwrap();
        let n = p.space_dim();
        assert_eq!(op.ny() + op.np(), n * 4 + n * 3);
        assert_eq!((f1.len(), f2.len()), (n * 4, n * 3));
    }

    #[test]
    fn preconditioners_and_direct_agree() {
        let p = toy();
        let mu = vec![0.3, 2.0, 5.0, 0.1, 1.0, 7.0, 0.5, 9.0, 0.7];
        let mut reference = None;
        for (pc, saddle) in [
            (HifiPreconditioner::Reference, SaddleMethod::Schur),
            (HifiPreconditioner::Spectral, SaddleMethod::Schur),
            (HifiPreconditioner::BlockDiagonal, SaddleMethod::Schur),
            (HifiPreconditioner::Reference, SaddleMethod::Direct),
        ] {
            let mut options = HifiOptions {
                preconditioner: pc,
                ..HifiOptions::default()
            };
            options.solver.saddle = saddle;
            let s = HifiSolver::new(p.clone(), options).unwrap().solve(&mu).unwrap();
            assert!(s.residual <= 1e-10);
            match &reference {
                None => reference = Some(s),
                Some(r) => {
                    let d: Vec<f64> = s.y.iter().zip(&r.y).map(|(a, b)| a - b).collect();
                    assert!(norm2(&d) <= 1e-8 * norm2(&r.y), "{pc:?} {saddle:?}");
                }
            }
        }
    }

    #[test]
    fn lift_consistency_and_y_only_equation() {
        let p = toy();
        let solver = HifiSolver::new(p.clone(), HifiOptions::default()).unwrap();
        let mu = vec![0.5, 1.5, 3.0, 0.2, 1.0, 4.0, 2.0, 0.3, -0.6];
        let s = solver.solve(&mu).unwrap();
        // (M_psi ⊗ A_ref) lift = (Z ⊗ M) y
        let lhs = KronSum::single(1.0, p.time.mass_test.clone(), p.reference_stiffness().clone())
            .matvec(&s.lift)
            .unwrap();
        let rhs = KronSum::single(1.0, p.time.coupling.clone(), p.space.mass_matrix())
            .matvec(&s.y)
            .unwrap();
        let d: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        assert!(norm2(&d) <= 1e-12 * norm2(&rhs));
        let (_, f1, f2) = assemble_system(&p, &mu).unwrap();
        let rhs_norm = (norm2(&f1).powi(2) + norm2(&f2).powi(2)).sqrt();
        let defect = check_y_only_equation(&p, &mu, &s).unwrap();
        assert!(defect <= 10.0 * 1e-10 * rhs_norm, "{defect}");
    }

    #[test]
    fn y_only_defect_of_zero_and_scaling() {
        let p = toy();
        let mu = p.reference.clone();
        let zero = Snapshot {
            mu: mu.clone(),
            y: vec![0.0; p.space_dim() * 4],
            p: vec![],
            lift: vec![],
            residual: 0.0,
        };
        let r = y_only_residual(&p, &mu, &zero.y).unwrap();
        let linf = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(linf > 0.0);
        assert_eq!(check_y_only_equation(&p, &mu, &zero).unwrap(), linf);
        let mut mu2 = mu.clone();
        mu2[8] = 0.5;
        let half = check_y_only_equation(&p, &mu2, &zero).unwrap();
        assert!((2.0 * half - linf).abs() < 1e-14 * linf);
    }

    #[test]
    fn superposition() {
        let p = toy();
        let solver = HifiSolver::new(p.clone(), HifiOptions::default()).unwrap();
        let mut mu = vec![0.4, 2.5, 1.0, 6.0, 0.2, 3.0, 1.0, 0.9, 0.3];
        let a = solver.solve(&mu).unwrap();
        mu[8] = -0.9;
        let b = solver.solve(&mu).unwrap();
        for (x, z) in a.y.iter().zip(&b.y) {
            assert!((x * -3.0 - z).abs() <= 1e-9 * (1.0 + z.abs()));
        }
    }
}
