//! Discrete energy inner products, Riesz lifts and residual dual norms.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hifi::{assemble_system, y_only_residual, HifiSolver};
use crate::kron_ops::sparse::dot;
use crate::kron_ops::{
    solve_saddle_schur, BlockSaddleOperator, KronDiagonalSolver, KronSum, LinearSolver, SolverOptions,
};
use crate::problem::SeparableProblem;

/// Energy inner product at the reference parameter.
pub struct WGram {
    problem: Arc<SeparableProblem>,
    /// `T_t ⊗ M_x + M_t ⊗ A_x(mu_ref)`.
    pub direct: KronSum,
    /// `M_t^psi ⊗ A_x(mu_ref)`.
    pub lift: KronSum,
    saddle: BlockSaddleOperator,
    lift_solver: KronDiagonalSolver,
    hifi: HifiSolver,
    opts: SolverOptions,
}

impl WGram {
    pub fn new(hifi: &HifiSolver) -> Result<Self> {
        let problem = hifi.problem().clone();
        let (saddle, _, _) = assemble_system(&problem, &problem.reference)?;
        Ok(WGram {
            direct: saddle.a.clone(),
            lift: saddle.c.clone(),
            saddle,
            lift_solver: hifi.lift_solver(),
            problem,
            hifi: hifi.clone(),
            opts: hifi.options().solver,
        })
    }

    pub fn problem(&self) -> &Arc<SeparableProblem> {
        &self.problem
    }

    pub fn hifi(&self) -> &HifiSolver {
        &self.hifi
    }

    /// `u^T (T ⊗ M + M_t ⊗ A) v + u_hat^T (M_psi ⊗ A) v_hat`.
    pub fn w_inner(&self, u: &[f64], u_hat: &[f64], v: &[f64], v_hat: &[f64]) -> Result<f64> {
        if u.len() != self.direct.nrows() || v.len() != self.direct.nrows() {
            return Err(Error::dims(
                "w_inner trial vector",
                self.direct.nrows(),
                u.len().min(v.len()),
            ));
        }
        if u_hat.len() != self.lift.nrows() || v_hat.len() != self.lift.nrows() {
            return Err(Error::dims(
                "w_inner lift",
                self.lift.nrows(),
                u_hat.len().min(v_hat.len()),
            ));
        }
        Ok(dot(u, &self.direct.matvec(v)?) + dot(u_hat, &self.lift.matvec(v_hat)?))
    }

    pub fn w_norm(&self, u: &[f64], u_hat: &[f64]) -> Result<f64> {
        Ok(self.w_inner(u, u_hat, u, u_hat)?.max(0.0).sqrt())
    }

    /// Applies the inverse of the energy Gram `A + B^T C^-1 B` at the
    /// reference parameter through one saddle solve with rhs `(r, 0)`.
    pub fn gram_solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        let zero = vec![0.0; self.saddle.np()];
        let sol = solve_saddle_schur(
            &self.saddle,
            r,
            &zero,
            &self.opts,
            &self.lift_solver,
            &self.hifi.reference().gram,
        )?;
        Ok(sol.y)
    }

    /// Dual norm `sqrt(r^T G^-1 r)`.
    pub fn dual_norm(&self, r: &[f64]) -> Result<f64> {
        let g = self.gram_solve(r)?;
        Ok(dot(r, &g).max(0.0).sqrt())
    }

    /// `||r_d(mu)||` of the y-only residual of `y` over the trial space.
    pub fn residual_riesz_norm(&self, mu: &[f64], y: &[f64]) -> Result<f64> {
        let r = y_only_residual(&self.problem, mu, y)?;
        self.dual_norm(&r)
    }

    /// `(M_psi ⊗ A_x(mu_ref))^-1 (Z_t ⊗ M_x) y`.
    pub fn lift_of(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.hifi.lift(y)
    }
}

/// Lifts the test-space functional `phi` at `mu` and returns the largest
/// defect of the defining identity over the test basis.
pub fn riesz_check(problem: &SeparableProblem, mu: &[f64], phi: &[f64]) -> Result<(Vec<f64>, f64)> {
    let c = KronSum::single(1.0, problem.time.mass_test.clone(), problem.stiffness(mu)?);
    if phi.len() != c.nrows() {
        return Err(Error::dims("test-space functional", c.nrows(), phi.len()));
    }
    let r = KronDiagonalSolver::new(&c)?.solve(phi)?;
    let back = c.matvec(&r)?;
    let defect = back.iter().zip(phi).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok((r, defect))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hifi::HifiOptions;
    use crate::problem::make_thermal_block;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> WGram {
        let p = Arc::new(make_thermal_block(4, 4, 1.0).unwrap());
        WGram::new(&HifiSolver::new(p, HifiOptions::default()).unwrap()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn inner_product_basics() {
        let w = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random(&mut rng, w.direct.nrows());
        let v = random(&mut rng, w.direct.nrows());
        let (uh, vh) = (w.lift_of(&u).unwrap(), w.lift_of(&v).unwrap());
        let zero = vec![0.0; u.len()];
        let zh = vec![0.0; uh.len()];
        assert_eq!(w.w_inner(&zero, &zh, &v, &vh).unwrap(), 0.0);
        let a = w.w_inner(&u, &uh, &v, &vh).unwrap();
        let b = w.w_inner(&v, &vh, &u, &uh).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        let s: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x + y).collect();
        let sh = w.lift_of(&s).unwrap();
        let lhs = w.w_norm(&s, &sh).unwrap();
        assert!(lhs <= w.w_norm(&u, &uh).unwrap() + w.w_norm(&v, &vh).unwrap() + 1e-12);
        assert!(w.w_norm(&u, &uh).unwrap() > 0.0);
    }

    #[test]
    fn gram_solve_matches_dense_gram() {
        let w = setup();
        let p = w.problem().clone();
        let m = dense_mass_ainv_mass(&p);
        let k_t = p.time.stiffness().to_dense();
        let g = w.direct.expand().to_dense() + k_t.kronecker(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random(&mut rng, w.direct.nrows());
        let oracle = g.lu().solve(&DVector::from_vec(r.clone())).unwrap();
        let x = w.gram_solve(&r).unwrap();
        for (a, b) in x.iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    fn dense_mass_ainv_mass(p: &SeparableProblem) -> DMatrix<f64> {
        let m = p.space.mass_matrix().to_dense();
        &m * p.reference_stiffness().to_dense().try_inverse().unwrap() * &m
    }

    #[test]
    fn riesz_lift_identities() {
        let w = setup();
        let p = w.problem().clone();
        let mu = vec![0.2, 3.0, 1.0, 8.0, 0.5, 0.4, 2.0, 1.1, 0.1];
        let np = p.space_dim() * p.num_elements();
        let (r, d) = riesz_check(&p, &mu, &vec![0.0; np]).unwrap();
        assert!(r.iter().all(|&v| v == 0.0) && d == 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q_star = random(&mut rng, np);
        let c = KronSum::single(1.0, p.time.mass_test.clone(), p.stiffness(&mu).unwrap());
        let phi = c.matvec(&q_star).unwrap();
        let (r, d) = riesz_check(&p, &mu, &phi).unwrap();
        for (a, b) in r.iter().zip(&q_star) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(d <= 10.0 * 1e-10 * phi.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn residual_norm_homogeneity() {
        let w = setup();
        let p = w.problem().clone();
        let mut mu = p.reference.clone();
        let zero = vec![0.0; w.direct.nrows()];
        let a = w.residual_riesz_norm(&mu, &zero).unwrap();
        assert!(a > 0.0);
        mu[8] = 0.5;
        let b = w.residual_riesz_norm(&mu, &zero).unwrap();
        assert!((2.0 * b - a).abs() <= 1e-12 * a);
        let s = w.hifi().solve(&mu).unwrap();
        let c = w.residual_riesz_norm(&mu, &s.y).unwrap();
        assert!(c <= 1e-8 * b, "{c} vs {b}");
    }
}
