//! Piecewise-linear (trial) and piecewise-constant (test) temporal spaces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kron_ops::CsrMatrix;

/// Temporal grid `0 = t_0 < ... < t_{M-1} = T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `num_elements` intervals.
    pub fn uniform(final_time: f64, num_elements: usize) -> Result<Self> {
        if !(final_time > 0.0) || !final_time.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "final time must be positive, got {final_time}"
            )));
        }
        if num_elements == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one element".into()));
        }
        let k = final_time / num_elements as f64;
        let mut nodes: Vec<f64> = (0..=num_elements).map(|i| i as f64 * k).collect();
        nodes[num_elements] = final_time;
        Ok(TimeGrid { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument("time grid needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidArgument("time grid must start at 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "time nodes must be finite and strictly increasing".into(),
            ));
        }
        Ok(TimeGrid { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn final_time(&self) -> f64 {
        *self.nodes.last().expect("grid has nodes")
    }

    /// Number of trial functions `M`.
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of test functions `P = M - 1`.
    pub fn num_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn widths(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// All temporal matrices of the space-time discretization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeMatrices {
    /// `chi_j(T) chi_i(T)`, M x M.
    pub terminal: CsrMatrix,
    /// Hat-function mass, M x M.
    pub mass: CsrMatrix,
    /// Indicator mass `diag(k_p)`, P x P.
    pub mass_test: CsrMatrix,
    /// `int psi_p (chi_m)_t`, P x M.
    pub coupling: CsrMatrix,
    /// `chi_m(0)`, length M.
    pub initial: Vec<f64>,
    /// `int chi_m`, length M.
    pub trial_integrals: Vec<f64>,
    /// `int psi_p = k_p`, length P.
    pub widths: Vec<f64>,
}

impl TimeMatrices {
    pub fn assemble(grid: &TimeGrid) -> Self {
        let m = grid.num_nodes();
        let k = grid.widths();
        let p = k.len();
        let mut mass = Vec::with_capacity(3 * m);
        let mut trial_integrals = vec![0.0; m];
        for (e, &ke) in k.iter().enumerate() {
            mass.push((e, e, ke / 3.0));
            mass.push((e + 1, e + 1, ke / 3.0));
            mass.push((e, e + 1, ke / 6.0));
            mass.push((e + 1, e, ke / 6.0));
            trial_integrals[e] += ke / 2.0;
            trial_integrals[e + 1] += ke / 2.0;
        }
        let coupling = (0..p).flat_map(|e| [(e, e, -1.0), (e, e + 1, 1.0)]);
        let mut initial = vec![0.0; m];
        initial[0] = 1.0;
        TimeMatrices {
            terminal: CsrMatrix::from_triplets(m, m, [(m - 1, m - 1, 1.0)]).expect("valid index"),
            mass: CsrMatrix::from_triplets(m, m, mass).expect("valid indices"),
            mass_test: CsrMatrix::from_diagonal(&k),
            coupling: CsrMatrix::from_triplets(p, m, coupling).expect("valid indices"),
            initial,
            trial_integrals,
            widths: k,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.initial.len()
    }

    pub fn num_elements(&self) -> usize {
        self.widths.len()
    }

    /// `Z^T (M^psi)^-1 Z`, the 1D hat-function stiffness.
    pub fn stiffness(&self) -> CsrMatrix {
        let inv: Vec<f64> = self.widths.iter().map(|k| 1.0 / k).collect();
        self.coupling
            .transpose()
            .scale_rows_cols(None, Some(&inv))
            .matmul(&self.coupling)
            .expect("conforming shapes")
    }
}
