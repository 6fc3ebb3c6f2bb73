//! Parameter-separable space-time problems and the thermal-block instance.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron_ops::CsrMatrix;
use crate::space_fem::{build_thermal_block_mesh, BoundaryTag, SpaceMatrices, SpaceMesh};
use crate::time_disc::{TimeGrid, TimeMatrices};

pub type ParameterVector = Vec<f64>;

/// Scalar coefficient function of an affine term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theta {
    Constant(f64),
    /// The zero-based parameter component.
    Component(usize),
}

impl Theta {
    pub fn eval(&self, mu: &[f64]) -> f64 {
        match *self {
            Theta::Constant(c) => c,
            Theta::Component(i) => mu[i],
        }
    }
}

/// A product of coefficient functions, normalized so that equal products
/// compare equal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    /// Sorted parameter components with multiplicity.
    pub components: Vec<usize>,
}

impl Monomial {
    pub fn product(factors: &[Theta]) -> Monomial {
        let mut coeff = 1.0;
        let mut components = Vec::new();
        for f in factors {
            match *f {
                Theta::Constant(c) => coeff *= c,
                Theta::Component(i) => components.push(i),
            }
        }
        components.sort_unstable();
        Monomial { coeff, components }
    }

    pub fn eval(&self, mu: &[f64]) -> f64 {
        self.components.iter().fold(self.coeff, |acc, &i| acc * mu[i])
    }
}

/// Axis-aligned admissible parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Components sampled on a logarithmic scale.
    pub log_scale: Vec<bool>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, log_scale: Vec<bool>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != log_scale.len() || lower.is_empty() {
            return Err(Error::InvalidArgument(
                "parameter box bounds must have equal nonzero length".into(),
            ));
        }
        for i in 0..lower.len() {
            if !(lower[i] <= upper[i]) || !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "parameter component {i}: invalid bounds [{}, {}]",
                    lower[i], upper[i]
                )));
            }
            if log_scale[i] && !(lower[i] > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "parameter component {i}: log-scaled bounds must be positive"
                )));
            }
        }
        Ok(ParameterBox {
            lower,
            upper,
            log_scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && mu
                .iter()
                .enumerate()
                .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    pub fn check(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.dim() {
            return Err(Error::dims("parameter vector", self.dim(), mu.len()));
        }
        for (i, &v) in mu.iter().enumerate() {
            if !(v >= self.lower[i] && v <= self.upper[i]) {
                return Err(Error::OutOfBounds(format!(
                    "parameter component {i} = {v} outside [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    /// Geometric midpoint on log-scaled components, arithmetic otherwise.
    pub fn midpoint(&self) -> ParameterVector {
        (0..self.dim())
            .map(|i| {
                if self.log_scale[i] {
                    (self.lower[i] * self.upper[i]).sqrt()
                } else {
                    0.5 * (self.lower[i] + self.upper[i])
                }
            })
            .collect()
    }
}

/// Lower and upper bounds of the coercivity and continuity constants
/// relative to the reference norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantBounds {
    pub c_c_lb: f64,
    pub c_s_ub: f64,
    pub alpha_lb: f64,
}

/// Per-term extreme ratios `theta_q(mu) / theta_q(mu_ref)` over the box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Parameter-evaluated data of a separable problem.
#[derive(Clone, Debug)]
pub struct EvaluatedProblem {
    pub stiffness: CsrMatrix,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub initial: Vec<f64>,
}

/// Affinely parameterized parabolic problem on a fixed space-time grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeparableProblem {
    pub name: String,
    pub grid: TimeGrid,
    pub time: TimeMatrices,
    pub space: SpaceMatrices,
    pub theta_a: Vec<Theta>,
    pub theta_f: Vec<Theta>,
    pub theta_y0: Vec<Theta>,
    /// Space-time load parts against trial functions, length `N M` each.
    pub f1_parts: Vec<Vec<f64>>,
    /// Space-time load parts against test functions, length `N P` each.
    pub f2_parts: Vec<Vec<f64>>,
    /// Spatial initial-value parts, length `N` each.
    pub y0_parts: Vec<Vec<f64>>,
    pub parameter_box: ParameterBox,
    pub reference: ParameterVector,
    #[serde(skip)]
    reference_stiffness: Option<Arc<CsrMatrix>>,
}

impl SeparableProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        grid: TimeGrid,
        space: SpaceMatrices,
        theta_a: Vec<Theta>,
        theta_f: Vec<Theta>,
        theta_y0: Vec<Theta>,
        f1_parts: Vec<Vec<f64>>,
        f2_parts: Vec<Vec<f64>>,
        y0_parts: Vec<Vec<f64>>,
        parameter_box: ParameterBox,
        reference: ParameterVector,
    ) -> Result<Self> {
        let time = TimeMatrices::assemble(&grid);
        let mut p = SeparableProblem {
            name: name.into(),
            grid,
            time,
            space,
            theta_a,
            theta_f,
            theta_y0,
            f1_parts,
            f2_parts,
            y0_parts,
            parameter_box,
            reference,
            reference_stiffness: None,
        };
        p.validate()?;
        p.reference_stiffness = Some(Arc::new(p.stiffness(&p.reference.clone())?));
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let (n, m, pp) = (self.space.dim(), self.time.num_nodes(), self.time.num_elements());
        if self.theta_a.len() != self.space.stiffness.len() {
            return Err(Error::dims(
                "stiffness terms",
                self.space.stiffness.len(),
                self.theta_a.len(),
            ));
        }
        if self.theta_f.len() != self.f1_parts.len() || self.theta_f.len() != self.f2_parts.len() {
            return Err(Error::dims("load terms", self.theta_f.len(), self.f1_parts.len()));
        }
        if self.theta_y0.len() != self.y0_parts.len() {
            return Err(Error::dims(
                "initial-value terms",
                self.theta_y0.len(),
                self.y0_parts.len(),
            ));
        }
        for f in &self.f1_parts {
            if f.len() != n * m {
                return Err(Error::dims("F1 part", n * m, f.len()));
            }
        }
        for f in &self.f2_parts {
            if f.len() != n * pp {
                return Err(Error::dims("F2 part", n * pp, f.len()));
            }
        }
        for y in &self.y0_parts {
            if y.len() != n {
                return Err(Error::dims("initial-value part", n, y.len()));
            }
        }
        self.parameter_box.check(&self.reference)?;
        for (q, t) in self.theta_a.iter().enumerate() {
            let positive = match *t {
                Theta::Constant(c) => c > 0.0,
                Theta::Component(i) => i < self.parameter_box.dim() && self.parameter_box.lower[i] > 0.0,
            };
            if !positive {
                return Err(Error::InvalidArgument(format!(
                    "stiffness coefficient {q} is not positive on the parameter box"
                )));
            }
        }
        for t in self.theta_f.iter().chain(&self.theta_y0) {
            if let Theta::Component(i) = *t {
                if i >= self.parameter_box.dim() {
                    return Err(Error::OutOfBounds(format!(
                        "coefficient refers to parameter component {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Replaces the admissible set and the reference parameter.
    pub fn with_parameters(mut self, parameter_box: ParameterBox, reference: ParameterVector) -> Result<Self> {
        self.parameter_box = parameter_box;
        self.reference = reference;
        self.validate()?;
        self.reference_stiffness = Some(Arc::new(self.stiffness(&self.reference.clone())?));
        Ok(self)
    }

    pub fn space_dim(&self) -> usize {
        self.space.dim()
    }

    pub fn num_nodes(&self) -> usize {
        self.time.num_nodes()
    }

    pub fn num_elements(&self) -> usize {
        self.time.num_elements()
    }

    pub fn q_a(&self) -> usize {
        self.theta_a.len()
    }

    pub fn q_f(&self) -> usize {
        self.theta_f.len()
    }

    pub fn q_y(&self) -> usize {
        self.theta_y0.len()
    }

    pub fn mass(&self) -> &[f64] {
        &self.space.mass
    }

    pub fn stiffness_parts(&self) -> &[CsrMatrix] {
        &self.space.stiffness
    }

    /// `A_x(mu_ref)`.
    pub fn reference_stiffness(&self) -> &CsrMatrix {
        self.reference_stiffness.as_ref().expect("set at construction")
    }

    /// Restores caches skipped by serialization.
    pub fn rebuild_caches(&mut self) -> Result<()> {
        self.validate()?;
        self.reference_stiffness = Some(Arc::new(self.stiffness(&self.reference.clone())?));
        Ok(())
    }

    pub fn theta_a_values(&self, mu: &[f64]) -> Vec<f64> {
        self.theta_a.iter().map(|t| t.eval(mu)).collect()
    }

    /// `sum_q theta_A^q(mu) A_x^q`.
    pub fn stiffness(&self, mu: &[f64]) -> Result<CsrMatrix> {
        if mu.len() != self.parameter_box.dim() {
            return Err(Error::dims("parameter vector", self.parameter_box.dim(), mu.len()));
        }
        let th = self.theta_a_values(mu);
        let parts: Vec<(f64, &CsrMatrix)> = th.iter().copied().zip(&self.space.stiffness).collect();
        CsrMatrix::linear_combination(&parts)
    }

    pub fn evaluate(&self, mu: &[f64]) -> Result<EvaluatedProblem> {
        self.parameter_box.check(mu)?;
        let combine = |thetas: &[Theta], parts: &[Vec<f64>], len: usize| {
            let mut out = vec![0.0; len];
            for (t, part) in thetas.iter().zip(parts) {
                let w = t.eval(mu);
                if w != 0.0 {
                    for (o, v) in out.iter_mut().zip(part) {
                        *o += w * v;
                    }
                }
            }
            out
        };
        let n = self.space_dim();
        Ok(EvaluatedProblem {
            stiffness: self.stiffness(mu)?,
            f1: combine(&self.theta_f, &self.f1_parts, n * self.num_nodes()),
            f2: combine(&self.theta_f, &self.f2_parts, n * self.num_elements()),
            initial: combine(&self.theta_y0, &self.y0_parts, n),
        })
    }

    /// Min/max-theta bounds of the coercivity and continuity constants.
    pub fn min_theta_bounds(&self, mu: &[f64]) -> Result<ConstantBounds> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (q, t) in self.theta_a.iter().enumerate() {
            let (a, b) = (t.eval(mu), t.eval(&self.reference));
            if !(a > 0.0) || !(b > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "stiffness coefficient {q} is not positive ({a} at mu, {b} at reference)"
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

    /// Extreme coefficient ratios over the whole parameter box.
    pub fn theta_bounds(&self) -> ThetaBounds {
        let (mut min, mut max) = (Vec::new(), Vec::new());
        for t in &self.theta_a {
            let r = t.eval(&self.reference);
            match *t {
                Theta::Constant(_) => {
                    min.push(1.0);
                    max.push(1.0);
                }
                Theta::Component(i) => {
                    min.push(self.parameter_box.lower[i] / r);
                    max.push(self.parameter_box.upper[i] / r);
                }
            }
        }
        ThetaBounds { min, max }
    }
}

/// Setup of the thermal-block benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalBlockSpec {
    pub vertices_per_side: usize,
    pub time_elements: usize,
    pub final_time: f64,
}

/// Nine-block heat conduction on the unit square: eight parameterized
/// conductivities, the top-right block fixed to one, homogeneous Dirichlet
/// data on the top edge and a parameter-scaled flux through the bottom edge.
pub fn make_thermal_block(vertices_per_side: usize, time_elements: usize, final_time: f64) -> Result<SeparableProblem> {
    let mesh = build_thermal_block_mesh(vertices_per_side)?;
    make_thermal_block_on(&mesh, time_elements, final_time)
}

pub fn make_thermal_block_on(mesh: &SpaceMesh, time_elements: usize, final_time: f64) -> Result<SeparableProblem> {
    let grid = TimeGrid::uniform(final_time, time_elements)?;
    let space = SpaceMatrices::assemble(mesh)?;
    if space.stiffness.len() != 9 {
        return Err(Error::InvalidArgument(format!(
            "thermal block needs 9 subdomains, mesh has {}",
            space.stiffness.len()
        )));
    }
    let time = TimeMatrices::assemble(&grid);
    let g = space.boundary_load(mesh, BoundaryTag::Bottom);
    let outer = |t: &[f64]| -> Vec<f64> { t.iter().flat_map(|&w| g.iter().map(move |&x| w * x)).collect() };
    let f1 = outer(&time.trial_integrals);
    let f2 = outer(&time.widths);
    let mut theta_a: Vec<Theta> = (0..8).map(Theta::Component).collect();
    theta_a.push(Theta::Constant(1.0));
    let mut lower = vec![0.1; 8];
    let mut upper = vec![10.0; 8];
    let mut log_scale = vec![true; 8];
    lower.push(-1.0);
    upper.push(1.0);
    log_scale.push(false);
    let pbox = ParameterBox::new(lower, upper, log_scale)?;
    log::info!(
        "thermal block: {} vertices ({} free), {} time nodes",
        mesh.num_vertices(),
        space.dim(),
        grid.num_nodes()
    );
    SeparableProblem::new(
        "thermal_block",
        grid,
        space,
        theta_a,
        vec![Theta::Component(8)],
        Vec::new(),
        vec![f1],
        vec![f2],
        Vec::new(),
        pbox,
        vec![1.0; 9],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space_fem::assemble_weighted_stiffness;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mu(rng: &mut ChaCha8Rng, b: &ParameterBox) -> Vec<f64> {
        (0..b.dim())
            .map(|i| rng.random_range(b.lower[i]..=b.upper[i]))
            .collect()
    }

    #[test]
    fn thermal_block_shape() {
        let p = make_thermal_block(7, 4, 1.0).unwrap();
        assert_eq!(p.parameter_box.dim(), 9);
        assert_eq!((p.q_a(), p.q_f(), p.q_y()), (9, 1, 0));
        assert_eq!(p.parameter_box.lower[..8], [0.1; 8]);
        assert_eq!(p.parameter_box.upper[..8], [10.0; 8]);
        assert_eq!((p.parameter_box.lower[8], p.parameter_box.upper[8]), (-1.0, 1.0));
        assert_eq!(p.reference, vec![1.0; 9]);
    }

    #[test]
    fn reference_stiffness_is_laplacian() {
        let mesh = build_thermal_block_mesh(7).unwrap();
        let p = make_thermal_block_on(&mesh, 3, 1.0).unwrap();
        let full = assemble_weighted_stiffness(&mesh, &[1.0; 9]).unwrap();
        let lap = full.submatrix(&p.space.free_vertices, &p.space.free_vertices);
        let diff = lap.add(1.0, p.reference_stiffness(), -1.0).unwrap();
        assert!(diff.max_abs() < 1e-13);
    }

    #[test]
    fn affine_sum_matches_direct_assembly() {
        let mesh = build_thermal_block_mesh(7).unwrap();
        let p = make_thermal_block_on(&mesh, 3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mu = random_mu(&mut rng, &p.parameter_box);
            let mut kappa = mu[..8].to_vec();
            kappa.push(1.0);
            let direct = assemble_weighted_stiffness(&mesh, &kappa)
                .unwrap()
                .submatrix(&p.space.free_vertices, &p.space.free_vertices);
            let affine = p.stiffness(&mu).unwrap();
            let diff = affine.add(1.0, &direct, -1.0).unwrap();
            assert!(diff.max_abs() <= 1e-12 * direct.max_abs());
        }
    }

    #[test]
    fn load_vectors() {
        let p = make_thermal_block(7, 4, 2.0).unwrap();
        let n = p.space_dim();
        let mut mu = p.reference.clone();
        let ev = p.evaluate(&mu).unwrap();
        let g = &p.f2_parts[0][..n];
        // F1 block m = (int chi_m) g
        for m in 0..p.num_nodes() {
            let w = if m == 0 || m + 1 == p.num_nodes() { 0.25 } else { 0.5 };
            for i in 0..n {
                assert!((ev.f1[m * n + i] - w * g[i] / 0.5).abs() < 1e-14);
            }
        }
        assert!((ev.f2.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(ev.initial.iter().all(|&v| v == 0.0));
        mu[8] = 0.0;
        let ev = p.evaluate(&mu).unwrap();
        assert!(ev.f1.iter().chain(&ev.f2).all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_box_rejected() {
        let p = make_thermal_block(4, 2, 1.0).unwrap();
        let mut mu = p.reference.clone();
        mu[0] = 20.0;
        assert!(matches!(p.evaluate(&mu), Err(Error::OutOfBounds(_))));
        assert!(p.evaluate(&[1.0; 3]).is_err());
    }

    #[test]
    fn min_theta_examples() {
        let p = make_thermal_block(4, 2, 1.0).unwrap();
        let b = p.min_theta_bounds(&p.reference).unwrap();
        assert_eq!((b.c_c_lb, b.c_s_ub, b.alpha_lb), (1.0, 1.0, 1.0));
        let mut mu = vec![1.0; 9];
        mu[0] = 0.5;
        mu[1] = 2.0;
        let b = p.min_theta_bounds(&mu).unwrap();
        assert_eq!((b.c_c_lb, b.c_s_ub, b.alpha_lb), (0.5, 2.0, 0.5));
        let tb = p.theta_bounds();
        assert_eq!(tb.min[0], 0.1);
        assert_eq!(tb.max[8], 1.0);
    }

    #[test]
    fn midpoint_is_geometric_on_log_components() {
        let p = make_thermal_block(4, 2, 1.0).unwrap();
        let mid = p.parameter_box.midpoint();
        assert!((mid[0] - 1.0).abs() < 1e-15);
        assert_eq!(mid[8], 0.0);
    }

    #[test]
    fn monomials_normalize() {
        let a = Monomial::product(&[Theta::Component(3), Theta::Constant(2.0), Theta::Component(1)]);
        let b = Monomial::product(&[Theta::Component(1), Theta::Component(3), Theta::Constant(2.0)]);
        assert_eq!(a, b);
        assert_eq!(a.eval(&[0.0, 2.0, 0.0, 5.0]), 20.0);
    }
}
