//! Reduced spaces, projected affine operators and the online solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::hifi::assemble_system;
use crate::kron_ops::KronSum;
use crate::pod::PodResult;
use crate::problem::{ConstantBounds, ParameterBox, ParameterVector, SeparableProblem, Theta};

/// Trial basis `B_W` and its lifted companion `B_Q`, stored column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedBasis {
    pub bw: DMatrix<f64>,
    pub bq: DMatrix<f64>,
}

impl ReducedBasis {
    pub fn new(bw: DMatrix<f64>, bq: DMatrix<f64>) -> Result<Self> {
        if bw.ncols() != bq.ncols() {
            return Err(Error::dims("basis columns", bw.ncols(), bq.ncols()));
        }
        Ok(ReducedBasis { bw, bq })
    }

    pub fn from_columns(y: &[Vec<f64>], lifts: &[Vec<f64>]) -> Result<Self> {
        let (Some(y0), Some(h0)) = (y.first(), lifts.first()) else {
            return Err(Error::InvalidArgument("reduced basis needs at least one column".into()));
        };
        if y.iter().any(|c| c.len() != y0.len()) || lifts.iter().any(|c| c.len() != h0.len()) {
            return Err(Error::InvalidArgument("basis columns have inconsistent lengths".into()));
        }
        let bw = DMatrix::from_iterator(y0.len(), y.len(), y.iter().flatten().copied());
        let bq = DMatrix::from_iterator(h0.len(), lifts.len(), lifts.iter().flatten().copied());
        ReducedBasis::new(bw, bq)
    }

    pub fn from_pod(pod: &PodResult) -> Result<Self> {
        ReducedBasis::from_columns(&pod.basis, &pod.lifts)
    }

    pub fn dim(&self) -> usize {
        self.bw.ncols()
    }

    /// `(B_W u_y, B_Q u_p, B_Q u_y)`.
    pub fn reconstruct(&self, u_y: &[f64], u_p: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if u_y.len() != self.dim() || u_p.len() != self.dim() {
            return Err(Error::dims(
                "reduced coefficients",
                self.dim(),
                u_y.len().max(u_p.len()),
            ));
        }
        let uy = DVector::from_column_slice(u_y);
        let up = DVector::from_column_slice(u_p);
        Ok((
            (&self.bw * &uy).as_slice().to_vec(),
            (&self.bq * &up).as_slice().to_vec(),
            (&self.bq * &uy).as_slice().to_vec(),
        ))
    }
}

/// `B_l^T op B_r`, with `op` applied column by column.
pub fn project(op: &KronSum, left: &DMatrix<f64>, right: &DMatrix<f64>, exec: Execution) -> Result<DMatrix<f64>> {
    let images = apply_columns(op, right, exec)?;
    Ok(left.transpose() * images)
}

/// `op B` column by column.
pub fn apply_columns(op: &KronSum, cols: &DMatrix<f64>, exec: Execution) -> Result<DMatrix<f64>> {
    if cols.nrows() != op.ncols() {
        return Err(Error::dims("projected operator", op.ncols(), cols.nrows()));
    }
    let out = exec::try_map_range(exec, cols.ncols(), |j| op.matvec(cols.column(j).as_slice()))?;
    Ok(DMatrix::from_iterator(
        op.nrows(),
        cols.ncols(),
        out.into_iter().flatten(),
    ))
}

fn block_matrix(tl: &DMatrix<f64>, tr: &DMatrix<f64>, bl: &DMatrix<f64>, br: &DMatrix<f64>) -> DMatrix<f64> {
    let l = tl.nrows();
    let mut s = DMatrix::zeros(2 * l, 2 * l);
    s.view_mut((0, 0), (l, l)).copy_from(tl);
    s.view_mut((0, l), (l, l)).copy_from(tr);
    s.view_mut((l, 0), (l, l)).copy_from(bl);
    s.view_mut((l, l), (l, l)).copy_from(br);
    s
}

/// Reduced solution and its energy norm.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineSolution {
    pub u_y: Vec<f64>,
    pub u_p: Vec<f64>,
    pub y_rb_norm: f64,
}

/// Affine reduced operators, reduced energy Gram and parameter metadata.
#[derive(Clone, Debug)]
pub struct ReducedModel {
    pub l: usize,
    /// `Q_A + 1` blocks of size `2L x 2L`.
    pub s_parts: Vec<DMatrix<f64>>,
    pub theta_s: Vec<Theta>,
    /// `Q_y + Q_f` vectors of length `2L`.
    pub rhs_parts: Vec<DVector<f64>>,
    pub theta_rhs: Vec<Theta>,
    pub gram: DMatrix<f64>,
    pub theta_a: Vec<Theta>,
    pub parameter_box: ParameterBox,
    pub reference: ParameterVector,
}

impl ReducedModel {
    pub fn build(problem: &SeparableProblem, basis: &ReducedBasis, exec: Execution) -> Result<Self> {
        let (n, m, p) = (problem.space_dim(), problem.num_nodes(), problem.num_elements());
        if basis.bw.nrows() != n * m || basis.bq.nrows() != n * p {
            return Err(Error::dims("basis rows", n * m, basis.bw.nrows()));
        }
        let tm = &problem.time;
        let mass = problem.space.mass_matrix();
        let l = basis.dim();
        let (bw, bq) = (&basis.bw, &basis.bq);
        let mut s_parts = Vec::with_capacity(problem.q_a() + 1);
        let zero = DMatrix::zeros(l, l);
        for a in problem.stiffness_parts() {
            let tl = project(&KronSum::single(1.0, tm.mass.clone(), a.clone()), bw, bw, exec)?;
            let br = project(&KronSum::single(-1.0, tm.mass_test.clone(), a.clone()), bq, bq, exec)?;
            s_parts.push(block_matrix(&tl, &zero, &zero, &br));
        }
        let tl = project(&KronSum::single(1.0, tm.terminal.clone(), mass.clone()), bw, bw, exec)?;
        let bl = project(&KronSum::single(1.0, tm.coupling.clone(), mass.clone()), bq, bw, exec)?;
        s_parts.push(block_matrix(&tl, &bl.transpose(), &bl, &zero));
        let mut theta_s = problem.theta_a.clone();
        theta_s.push(Theta::Constant(1.0));

        let mut rhs_parts = Vec::with_capacity(problem.q_y() + problem.q_f());
        for y0 in &problem.y0_parts {
            let v: Vec<f64> = tm
                .initial
                .iter()
                .flat_map(|&t| y0.iter().map(move |&x| t * x))
                .collect();
            let mut r = DVector::zeros(2 * l);
            r.rows_mut(0, l).copy_from(&(bw.transpose() * DVector::from_vec(v)));
            rhs_parts.push(r);
        }
        for (f1, f2) in problem.f1_parts.iter().zip(&problem.f2_parts) {
            let mut r = DVector::zeros(2 * l);
            r.rows_mut(0, l)
                .copy_from(&(bw.transpose() * DVector::from_column_slice(f1)));
            r.rows_mut(l, l)
                .copy_from(&(bq.transpose() * DVector::from_column_slice(f2)));
            rhs_parts.push(r);
        }
        let mut theta_rhs = problem.theta_y0.clone();
        theta_rhs.extend(problem.theta_f.iter().copied());

        let (op, _, _) = assemble_system(problem, &problem.reference)?;
        let gram = project(&op.a, bw, bw, exec)? + project(&op.c, bq, bq, exec)?;
        let gram = (&gram + gram.transpose()) * 0.5;
        Ok(ReducedModel {
            l,
            s_parts,
            theta_s,
            rhs_parts,
            theta_rhs,
            gram,
            theta_a: problem.theta_a.clone(),
            parameter_box: problem.parameter_box.clone(),
            reference: problem.reference.clone(),
        })
    }

    pub fn q_s(&self) -> usize {
        self.s_parts.len()
    }

    /// `sum_q theta_S^q(mu) S_rb^q` and `sum_q theta_s^q(mu) s_rb^q`.
    pub fn assemble(&self, mu: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let mut s = DMatrix::zeros(2 * self.l, 2 * self.l);
        for (t, part) in self.theta_s.iter().zip(&self.s_parts) {
            let c = t.eval(mu);
            s.zip_apply(part, |a, b| *a += c * b);
        }
        let mut r = DVector::zeros(2 * self.l);
        for (t, part) in self.theta_rhs.iter().zip(&self.rhs_parts) {
            r.axpy(t.eval(mu), part, 1.0);
        }
        (s, r)
    }

    pub fn check_parameter(&self, mu: &[f64]) -> Result<()> {
        self.parameter_box.check(mu)
    }

    pub fn solve_online(&self, mu: &[f64]) -> Result<OnlineSolution> {
        self.check_parameter(mu)?;
        let (s, r) = self.assemble(mu);
        let l = self.l;
        if r.iter().all(|&v| v == 0.0) {
            return Ok(OnlineSolution {
                u_y: vec![0.0; l],
                u_p: vec![0.0; l],
                y_rb_norm: 0.0,
            });
        }
        let x = s
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Singular(format!("reduced system of size {} is singular", 2 * l)))?;
        let u_y = x.rows(0, l).into_owned();
        let norm = (u_y.transpose() * &self.gram * &u_y)[(0, 0)].max(0.0).sqrt();
        Ok(OnlineSolution {
            u_y: u_y.as_slice().to_vec(),
            u_p: x.rows(l, l).as_slice().to_vec(),
            y_rb_norm: norm,
        })
    }

    /// Min-theta constants evaluated from the stored coefficient table.
    pub fn constant_bounds(&self, mu: &[f64]) -> Result<ConstantBounds> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (q, t) in self.theta_a.iter().enumerate() {
            let (a, b) = (t.eval(mu), t.eval(&self.reference));
            if !(a > 0.0) || !(b > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "stiffness coefficient {q} is not positive"
                )));
            }
            lo = lo.min(a / b);
            hi = hi.max(a / b);
        }
        Ok(ConstantBounds {
            c_c_lb: lo,
            c_s_ub: hi,
            alpha_lb: lo.min(1.0 / hi),
        })
    }
}

/// Direct projection `diag(B_W, B_Q)^T S_d(mu) diag(B_W, B_Q)` and the
/// projected right-hand side.
pub fn project_system(
    problem: &SeparableProblem,
    basis: &ReducedBasis,
    mu: &[f64],
    exec: Execution,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (op, f1, f2) = assemble_system(problem, mu)?;
    let (bw, bq) = (&basis.bw, &basis.bq);
    let tl = project(&op.a, bw, bw, exec)?;
    let bl = project(&op.b, bq, bw, exec)?;
    let br = project(&op.c, bq, bq, exec)? * -1.0;
    let tr = project(&op.b.transpose(), bw, bq, exec)?;
    let l = basis.dim();
    let mut r = DVector::zeros(2 * l);
    r.rows_mut(0, l).copy_from(&(bw.transpose() * DVector::from_vec(f1)));
    r.rows_mut(l, l).copy_from(&(bq.transpose() * DVector::from_vec(f2)));
    Ok((block_matrix(&tl, &tr, &bl, &br), r))
}

/// `max |a - b| / max |b|` over matching entries.
pub fn relative_max_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
