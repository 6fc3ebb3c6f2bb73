//! Residual-based error estimators in the discrete energy norm.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::hifi::ReferenceData;
use crate::kron_ops::sparse::dot;
use crate::kron_ops::{solve_spd, CsrMatrix, KronSum, SolverOptions, SpdOperator, SpectralKronSolver, SpectralTerm};
use crate::problem::{Monomial, SeparableProblem};
use crate::rb_core::{OnlineSolution, ReducedBasis, ReducedModel};
use crate::wspace::WGram;

/// Default cap on the number of estimator Gram columns.
pub const DEFAULT_MAX_COLUMNS: usize = 4000;

/// One affine term of the scaled residual operator.
#[derive(Clone, Debug)]
pub struct OperatorPart {
    pub theta: Monomial,
    pub op: KronSum,
}

/// One affine term of the scaled residual right-hand side.
#[derive(Clone, Debug)]
pub struct VectorPart {
    pub theta: Monomial,
    pub vector: Vec<f64>,
}

fn inv(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| 1.0 / x).collect()
}

/// `A_i M^-1 A_j` for every ordered pair.
fn stiffness_products(problem: &SeparableProblem) -> Result<Vec<Vec<CsrMatrix>>> {
    let minv = inv(problem.mass());
    let parts = problem.stiffness_parts();
    parts
        .iter()
        .map(|ai| {
            let scaled = ai.scale_rows_cols(None, Some(&minv));
            parts.iter().map(|aj| scaled.matmul(aj)).collect()
        })
        .collect()
}

/// Operator parts in canonical order: `K_t ⊗ M`, then `M_t ⊗ A_i M^-1 A_j`
/// with `q = 1 + j Q_A + i`, then `T_t ⊗ A_i` with `q = 1 + Q_A^2 + i`.
pub fn operator_parts(problem: &SeparableProblem) -> Result<Vec<OperatorPart>> {
    let tm = &problem.time;
    let qa = problem.q_a();
    let prods = stiffness_products(problem)?;
    let mut out = Vec::with_capacity(1 + qa * qa + qa);
    out.push(OperatorPart {
        theta: Monomial::product(&[]),
        op: KronSum::single(1.0, tm.stiffness(), problem.space.mass_matrix()),
    });
    for j in 0..qa {
        for i in 0..qa {
            out.push(OperatorPart {
                theta: Monomial::product(&[problem.theta_a[i], problem.theta_a[j]]),
                op: KronSum::single(1.0, tm.mass.clone(), prods[i][j].clone()),
            });
        }
    }
    for i in 0..qa {
        out.push(OperatorPart {
            theta: Monomial::product(&[problem.theta_a[i]]),
            op: KronSum::single(1.0, tm.terminal.clone(), problem.stiffness_parts()[i].clone()),
        });
    }
    Ok(out)
}

/// Right-hand side parts in canonical order: initial-value parts with
/// `q = j Q_A + i`, load parts `(I ⊗ A_i M^-1) F_1^j` with
/// `q = Q_A Q_y + j Q_A + i`, then `(Z_t^T (M^psi)^-1 ⊗ I) F_2^i`.
pub fn vector_parts(problem: &SeparableProblem) -> Result<Vec<VectorPart>> {
    let tm = &problem.time;
    let n = problem.space_dim();
    let minv = inv(problem.mass());
    let qa = problem.q_a();
    let apply_blocks = |a: &CsrMatrix, v: &[f64]| -> Vec<f64> {
        v.chunks(n)
            .flat_map(|b| {
                let s: Vec<f64> = b.iter().zip(&minv).map(|(x, m)| x * m).collect();
                a.matvec(&s)
            })
            .collect()
    };
    let mut out = Vec::new();
    for (j, y0) in problem.y0_parts.iter().enumerate() {
        for i in 0..qa {
            let block = apply_blocks(&problem.stiffness_parts()[i], y0);
            let vector = tm
                .initial
                .iter()
                .flat_map(|&t| block.iter().map(move |&x| t * x))
                .collect();
            out.push(VectorPart {
                theta: Monomial::product(&[problem.theta_a[i], problem.theta_y0[j]]),
                vector,
            });
        }
    }
    for (j, f1) in problem.f1_parts.iter().enumerate() {
        for i in 0..qa {
            out.push(VectorPart {
                theta: Monomial::product(&[problem.theta_a[i], problem.theta_f[j]]),
                vector: apply_blocks(&problem.stiffness_parts()[i], f1),
            });
        }
    }
    let zt = tm.coupling.transpose().scale_rows_cols(None, Some(&inv(&tm.widths)));
    for (i, f2) in problem.f2_parts.iter().enumerate() {
        let op = KronSum::single(1.0, zt.clone(), CsrMatrix::identity(n));
        out.push(VectorPart {
            theta: Monomial::product(&[problem.theta_f[i]]),
            vector: op.matvec(f2)?,
        });
    }
    Ok(out)
}

/// `(S(mu), s(mu))` assembled directly at `mu` without the affine tables.
pub fn scaled_residual_system(problem: &SeparableProblem, mu: &[f64]) -> Result<(KronSum, Vec<f64>)> {
    let ev = problem.evaluate(mu)?;
    let tm = &problem.time;
    let n = problem.space_dim();
    let minv = inv(problem.mass());
    let am = ev.stiffness.scale_rows_cols(None, Some(&minv));
    let op = KronSum::single(1.0, tm.stiffness(), problem.space.mass_matrix())
        .with(1.0, tm.mass.clone(), am.matmul(&ev.stiffness)?)?
        .with(1.0, tm.terminal.clone(), ev.stiffness.clone())?;
    let mut rhs: Vec<f64> = ev.f1.chunks(n).flat_map(|b| am.matvec(b)).collect();
    let r0 = am.matvec(&ev.initial);
    for (m, &t) in tm.initial.iter().enumerate() {
        for i in 0..n {
            rhs[m * n + i] += t * r0[i];
        }
    }
    let zt = tm.coupling.transpose().scale_rows_cols(None, Some(&inv(&tm.widths)));
    KronSum::single(1.0, zt, CsrMatrix::identity(n)).apply_add(1.0, &ev.f2, &mut rhs)?;
    Ok((op, rhs))
}

/// `K_t ⊗ A + M_t ⊗ A M^-1 A M^-1 A + T_t ⊗ A M^-1 A` at the reference
/// parameter, assembled as a sparse Kronecker sum.
pub fn residual_gram_operator(problem: &SeparableProblem) -> Result<KronSum> {
    let a = problem.reference_stiffness();
    let am = a.scale_rows_cols(None, Some(&inv(problem.mass())));
    let a2 = am.matmul(a)?;
    let a3 = am.matmul(&a2)?.scale_rows_cols(None, None);
    let tm = &problem.time;
    KronSum::single(1.0, tm.stiffness(), a.clone())
        .with(1.0, tm.mass.clone(), a3)?
        .with(1.0, tm.terminal.clone(), a2)
}

/// Exact inverse of [`residual_gram_operator`] in the reference eigenbasis.
pub fn residual_gram_solver(problem: &SeparableProblem, reference: &ReferenceData) -> Result<SpectralKronSolver> {
    let tm = &problem.time;
    SpectralKronSolver::new(
        reference.basis.clone(),
        &[
            SpectralTerm {
                weight: 1.0,
                time: tm.stiffness(),
                power: 1,
            },
            SpectralTerm {
                weight: 1.0,
                time: tm.mass.clone(),
                power: 3,
            },
            SpectralTerm {
                weight: 1.0,
                time: tm.terminal.clone(),
                power: 2,
            },
        ],
    )
}

/// Affine parts sharing a coefficient monomial are summed; parts that are
/// identically zero are dropped.
fn group_operators(parts: &[OperatorPart]) -> Result<Vec<(Monomial, KronSum)>> {
    let mut groups: BTreeMap<Vec<usize>, Vec<(f64, &KronSum)>> = BTreeMap::new();
    for p in parts {
        groups
            .entry(p.theta.components.clone())
            .or_default()
            .push((p.theta.coeff, &p.op));
    }
    let mut out = Vec::new();
    for (components, members) in groups {
        // merge terms with identical time factors
        let mut merged: Vec<(CsrMatrix, Vec<(f64, &CsrMatrix)>)> = Vec::new();
        let first = members[0].1;
        for (c, op) in &members {
            for t in op.terms() {
                match merged.iter_mut().find(|(time, _)| *time == t.time) {
                    Some((_, spaces)) => spaces.push((c * t.weight, &t.space)),
                    None => merged.push((t.time.clone(), vec![(c * t.weight, &t.space)])),
                }
            }
        }
        let mut sum = KronSum::empty(first.time_shape(), first.space_shape());
        for (time, spaces) in merged {
            let space = CsrMatrix::linear_combination(&spaces)?;
            if space.nnz() > 0 && time.nnz() > 0 {
                sum.push(1.0, time, space)?;
            }
        }
        if !sum.terms().is_empty() {
            out.push((Monomial { coeff: 1.0, components }, sum));
        }
    }
    Ok(out)
}

fn group_vectors(parts: &[VectorPart]) -> Vec<(Monomial, Vec<f64>)> {
    let mut groups: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for p in parts {
        let acc = groups
            .entry(p.theta.components.clone())
            .or_insert_with(|| vec![0.0; p.vector.len()]);
        for (a, v) in acc.iter_mut().zip(&p.vector) {
            *a += p.theta.coeff * v;
        }
    }
    groups
        .into_iter()
        .filter(|(_, v)| v.iter().any(|&x| x != 0.0))
        .map(|(components, v)| (Monomial { coeff: 1.0, components }, v))
        .collect()
}

/// Offline data of the decomposable estimator.
#[derive(Clone, Debug)]
pub struct EstimatorOffline {
    /// Nominal affine counts before grouping.
    pub q_vec: usize,
    pub q_op: usize,
    /// Coefficients of the stored vector columns.
    pub vec_thetas: Vec<Monomial>,
    /// Coefficients of the stored operator groups, each contributing `L`
    /// columns.
    pub op_thetas: Vec<Monomial>,
    pub l: usize,
    /// Symmetric Gram of the stored columns in the residual inner product.
    pub gram: DMatrix<f64>,
    online: QuadraticForm,
}

/// `r(mu)^T G r(mu)` regrouped by coefficient monomial: with `z = (1, u,
/// u_j u_k for j <= k)` the form equals `p(mu)^T D z` where `p` collects
/// the distinct products of two group coefficients.
#[derive(Clone, Debug)]
struct QuadraticForm {
    monomials: Vec<Monomial>,
    table: DMatrix<f64>,
}

fn packed(l: usize, j: usize, k: usize) -> usize {
    // upper triangle, row by row
    j * l - j * (j + 1) / 2 + k
}

impl QuadraticForm {
    fn new(vec_thetas: &[Monomial], op_thetas: &[Monomial], l: usize, gram: &DMatrix<f64>) -> Self {
        let width = 1 + l + l * (l + 1) / 2;
        let mut index: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut row_of = |a: &Monomial, b: &Monomial| -> (usize, f64) {
            let mut key = [a.components.as_slice(), b.components.as_slice()].concat();
            key.sort_unstable();
            let next = rows.len();
            let r = *index.entry(key).or_insert(next);
            if r == next {
                rows.push(vec![0.0; width]);
            }
            (r, a.coeff * b.coeff)
        };
        let nv = vec_thetas.len();
        let mut updates: Vec<(usize, usize, f64)> = Vec::new();
        for (a, ta) in vec_thetas.iter().enumerate() {
            for (b, tb) in vec_thetas.iter().enumerate() {
                let (r, c) = row_of(ta, tb);
                updates.push((r, 0, c * gram[(a, b)]));
            }
            for (g, tg) in op_thetas.iter().enumerate() {
                let (r, c) = row_of(ta, tg);
                for j in 0..l {
                    updates.push((r, 1 + j, -2.0 * c * gram[(a, nv + g * l + j)]));
                }
            }
        }
        for (g, tg) in op_thetas.iter().enumerate() {
            for (h, th) in op_thetas.iter().enumerate() {
                let (r, c) = row_of(tg, th);
                for j in 0..l {
                    for k in j..l {
                        let mut v = gram[(nv + g * l + j, nv + h * l + k)];
                        if k != j {
                            v += gram[(nv + g * l + k, nv + h * l + j)];
                        }
                        updates.push((r, 1 + l + packed(l, j, k), c * v));
                    }
                }
            }
        }
        for (r, col, v) in updates {
            rows[r][col] += v;
        }
        let mut monomials = vec![
            Monomial {
                coeff: 1.0,
                components: Vec::new()
            };
            rows.len()
        ];
        for (key, r) in index {
            monomials[r].components = key;
        }
        let table = DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]);
        QuadraticForm { monomials, table }
    }

    fn eval(&self, mu: &[f64], u: &[f64]) -> f64 {
        let l = u.len();
        let p = DVector::from_iterator(self.monomials.len(), self.monomials.iter().map(|m| m.eval(mu)));
        let weights = self.table.tr_mul(&p);
        let mut acc = weights[0];
        for j in 0..l {
            acc += weights[1 + j] * u[j];
        }
        let quad = &weights.as_slice()[1 + l..];
        let mut pos = 0;
        for j in 0..l {
            let mut row = 0.0;
            for k in j..l {
                row += quad[pos] * u[k];
                pos += 1;
            }
            acc += u[j] * row;
        }
        acc
    }
}

/// Precomputed grouped affine parts, independent of the basis.
pub struct EstimatorParts {
    pub q_vec: usize,
    pub q_op: usize,
    vectors: Vec<(Monomial, Vec<f64>)>,
    operators: Vec<(Monomial, KronSum)>,
    solver: SpectralKronSolver,
}

impl EstimatorParts {
    pub fn new(problem: &SeparableProblem, reference: &ReferenceData) -> Result<Self> {
        let ops = operator_parts(problem)?;
        let vecs = vector_parts(problem)?;
        let operators = group_operators(&ops)?;
        let vectors = group_vectors(&vecs);
        log::debug!(
            "estimator parts: {} of {} vector and {} of {} operator terms after grouping",
            vectors.len(),
            vecs.len(),
            operators.len(),
            ops.len()
        );
        Ok(EstimatorParts {
            q_vec: vecs.len(),
            q_op: ops.len(),
            vectors,
            operators,
            solver: residual_gram_solver(problem, reference)?,
        })
    }

    /// Number of stored Gram columns for a basis of size `l`.
    pub fn columns(&self, l: usize) -> usize {
        self.vectors.len() + self.operators.len() * l
    }

    pub fn build(&self, basis: &ReducedBasis, max_columns: usize, exec: Execution) -> Result<EstimatorOffline> {
        let l = basis.dim();
        let cols = self.columns(l);
        if cols > max_columns {
            return Err(Error::Budget {
                what: "estimator Gram columns (reduce L or the number of affine terms)",
                required: cols,
                budget: max_columns,
            });
        }
        let nv = self.vectors.len();
        let whitened = exec::try_map_range(exec, cols, |c| -> Result<Vec<f64>> {
            if c < nv {
                self.solver.whiten(&self.vectors[c].1)
            } else {
                let (g, j) = ((c - nv) / l, (c - nv) % l);
                let col = self.operators[g].1.matvec(basis.bw.column(j).as_slice())?;
                self.solver.whiten(&col)
            }
        })?;
        EstimatorOffline::new(
            (self.q_vec, self.q_op),
            self.vectors.iter().map(|(t, _)| t.clone()).collect(),
            self.operators.iter().map(|(t, _)| t.clone()).collect(),
            l,
            gram_matrix(&whitened, exec),
        )
    }
}

/// `X^T X` for the given columns, filled tile by tile.
fn gram_matrix(cols: &[Vec<f64>], exec: Execution) -> DMatrix<f64> {
    let n = cols.len();
    const TILE: usize = 64;
    let tiles = n.div_ceil(TILE);
    let pairs: Vec<(usize, usize)> = (0..tiles).flat_map(|a| (a..tiles).map(move |b| (a, b))).collect();
    let rows = cols.first().map_or(0, Vec::len);
    let mats: Vec<DMatrix<f64>> = cols
        .chunks(TILE)
        .map(|chunk| DMatrix::from_iterator(rows, chunk.len(), chunk.iter().flatten().copied()))
        .collect();
    let blocks = exec::map(exec, &pairs, |&(a, b)| mats[a].transpose() * &mats[b]);
    let mut g = DMatrix::zeros(n, n);
    for (&(a, b), blk) in pairs.iter().zip(&blocks) {
        let (r0, c0) = (a * TILE, b * TILE);
        g.view_mut((r0, c0), blk.shape()).copy_from(blk);
        if a != b {
            g.view_mut((c0, r0), (blk.ncols(), blk.nrows()))
                .copy_from(&blk.transpose());
        }
    }
    (&g + g.transpose()) * 0.5
}

impl EstimatorOffline {
    /// Reassembles the online tables from a stored Gram matrix.
    pub fn new(
        nominal: (usize, usize),
        vec_thetas: Vec<Monomial>,
        op_thetas: Vec<Monomial>,
        l: usize,
        gram: DMatrix<f64>,
    ) -> Result<Self> {
        let n = vec_thetas.len() + op_thetas.len() * l;
        if gram.nrows() != n || gram.ncols() != n {
            return Err(Error::dims("estimator Gram size", n, gram.nrows()));
        }
        let online = QuadraticForm::new(&vec_thetas, &op_thetas, l, &gram);
        Ok(EstimatorOffline {
            q_vec: nominal.0,
            q_op: nominal.1,
            vec_thetas,
            op_thetas,
            l,
            gram,
            online,
        })
    }

    /// Number of distinct coefficient products in the online evaluation.
    pub fn online_terms(&self) -> usize {
        self.online.monomials.len()
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    /// Coefficient vector `r(mu)` for the stored columns.
    pub fn coefficients(&self, mu: &[f64], u_y: &[f64]) -> DVector<f64> {
        let nv = self.vec_thetas.len();
        let mut r = DVector::zeros(self.dim());
        for (k, t) in self.vec_thetas.iter().enumerate() {
            r[k] = t.eval(mu);
        }
        for (g, t) in self.op_thetas.iter().enumerate() {
            let th = t.eval(mu);
            for (j, u) in u_y.iter().enumerate() {
                r[nv + g * self.l + j] = -th * u;
            }
        }
        r
    }

    /// `sqrt(max(0, r^T G r))`.
    pub fn residual_bound(&self, mu: &[f64], u_y: &[f64]) -> Result<f64> {
        if u_y.len() != self.l {
            return Err(Error::dims("reduced coefficients", self.l, u_y.len()));
        }
        Ok(self.online.eval(mu, u_y).max(0.0).sqrt())
    }

    /// [`Self::residual_bound`] through the full Gram matrix.
    pub fn residual_bound_full(&self, mu: &[f64], u_y: &[f64]) -> Result<f64> {
        if u_y.len() != self.l {
            return Err(Error::dims("reduced coefficients", self.l, u_y.len()));
        }
        let r = self.coefficients(mu, u_y);
        let q = r.dot(&(&self.gram * &r));
        Ok(q.max(0.0).sqrt())
    }
}

/// Value of a relative or absolute estimator with its certification flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub abs: f64,
    pub rel: f64,
    pub certified: bool,
    pub c_c_lb: f64,
    pub alpha_lb: f64,
}

fn relative(abs_num: f64, denom_scale: f64, y_rb_norm: f64) -> (f64, bool) {
    if abs_num == 0.0 {
        return (0.0, true);
    }
    if y_rb_norm == 0.0 {
        return (f64::INFINITY, false);
    }
    let rel = 2.0 * abs_num / (denom_scale * y_rb_norm);
    (rel, rel <= 1.0)
}

/// Offline-online decomposable estimator.
pub fn eta_c(model: &ReducedModel, offline: &EstimatorOffline, mu: &[f64], sol: &OnlineSolution) -> Result<Estimate> {
    eta_c_inflated(model, offline, mu, sol, 1.0)
}

/// [`eta_c`] with the coercivity bound scaled by `inflate` (fault injection).
pub fn eta_c_inflated(
    model: &ReducedModel,
    offline: &EstimatorOffline,
    mu: &[f64],
    sol: &OnlineSolution,
    inflate: f64,
) -> Result<Estimate> {
    let b = model.constant_bounds(mu)?;
    let alpha = b.alpha_lb * inflate;
    let num = offline.residual_bound(mu, &sol.u_y)?;
    let scale = b.c_c_lb * alpha;
    let (rel, certified) = relative(num, scale, sol.y_rb_norm);
    Ok(Estimate {
        abs: num / scale,
        rel,
        certified,
        c_c_lb: b.c_c_lb,
        alpha_lb: alpha,
    })
}

/// Exact-residual estimator; `y_rb` is the reconstructed trial vector.
pub fn eta_star(gram: &WGram, mu: &[f64], y_rb: &[f64], y_rb_norm: f64, inflate: f64) -> Result<Estimate> {
    let b = gram.problem().min_theta_bounds(mu)?;
    let alpha = b.alpha_lb * inflate;
    let num = gram.residual_riesz_norm(mu, y_rb)?;
    let (rel, certified) = relative(num, alpha, y_rb_norm);
    Ok(Estimate {
        abs: num / alpha,
        rel,
        certified,
        c_c_lb: b.c_c_lb,
        alpha_lb: alpha,
    })
}

/// `sqrt(r_hat^T K^-1 r_hat) / (c_c alpha)` with `r_hat = s(mu) - S(mu) y`
/// assembled directly and `K` solved by the generic SPD solver.
pub fn eta_c_direct(problem: &SeparableProblem, mu: &[f64], y_rb: &[f64], opts: &SolverOptions) -> Result<f64> {
    let (op, s) = scaled_residual_system(problem, mu)?;
    let mut r = s;
    op.apply_add(-1.0, y_rb, &mut r)?;
    let k = residual_gram_operator(problem)?;
    let (x, _) = solve_spd(SpdOperator::Kron(&k), &r, opts)?;
    let b = problem.min_theta_bounds(mu)?;
    Ok(dot(&r, &x).max(0.0).sqrt() / (b.c_c_lb * b.alpha_lb))
}

/// `(eps_abs, eps_rel)` between a high-fidelity and a reduced trajectory.
pub fn true_error(gram: &WGram, y_d: &[f64], lift_d: &[f64], y_rb: &[f64], lift_rb: &[f64]) -> Result<(f64, f64)> {
    let e: Vec<f64> = y_d.iter().zip(y_rb).map(|(a, b)| a - b).collect();
    let eh: Vec<f64> = lift_d.iter().zip(lift_rb).map(|(a, b)| a - b).collect();
    let abs = gram.w_norm(&e, &eh)?;
    let nrm = gram.w_norm(y_d, lift_d)?;
    let rel = if nrm > 0.0 {
        abs / nrm
    } else if abs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok((abs, rel))
}

/// Counts of the affine residual decomposition before grouping.
pub fn affine_counts(problem: &SeparableProblem) -> (usize, usize) {
    let qa = problem.q_a();
    (
        qa * problem.q_y() + qa * problem.q_f() + problem.q_f(),
        1 + qa * qa + qa,
    )
}
