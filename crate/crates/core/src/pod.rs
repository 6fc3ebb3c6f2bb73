//! Proper orthogonal decomposition by the method of snapshots.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::hifi::Snapshot;
use crate::kron_ops::sparse::dot;
use crate::wspace::WGram;

/// Relative eigenvalue cutoff below which modes are discarded.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PodResult {
    /// Energy-orthonormal modes (trial coefficients).
    pub basis: Vec<Vec<f64>>,
    /// Reference lifts of the modes.
    pub lifts: Vec<Vec<f64>>,
    /// All correlation eigenvalues, nonincreasing and nonnegative.
    pub eigenvalues: Vec<f64>,
}

impl PodResult {
    pub fn retained(&self) -> usize {
        self.basis.len()
    }
}

/// POD of `snapshots` in the energy inner product, keeping at most `l`
/// modes.
pub fn pod(gram: &WGram, snapshots: &[Snapshot], l: usize, exec: Execution) -> Result<PodResult> {
    let pairs: Vec<(&[f64], &[f64])> = snapshots.iter().map(|s| (s.y.as_slice(), s.lift.as_slice())).collect();
    pod_vectors(gram, &pairs, l, exec)
}

/// Same as [`pod`] on bare `(y, lift)` pairs.
pub fn pod_vectors(gram: &WGram, vectors: &[(&[f64], &[f64])], l: usize, exec: Execution) -> Result<PodResult> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("POD needs at least one snapshot".into()));
    }
    if l == 0 {
        return Err(Error::InvalidArgument("POD needs a positive retain count".into()));
    }
    let images = exec::try_map_range(exec, vectors.len(), |i| -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((gram.direct.matvec(vectors[i].0)?, gram.lift.matvec(vectors[i].1)?))
    })?;
    let n = vectors.len();
    let entries = exec::map_range(exec, n * n, |k| {
        let (i, j) = (k / n, k % n);
        if j < i {
            return 0.0;
        }
        dot(vectors[i].0, &images[j].0) + dot(vectors[i].1, &images[j].1)
    });
    let mut corr = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = entries[i * n + j] / n as f64;
            corr[(i, j)] = v;
            corr[(j, i)] = v;
        }
    }
    pod_from_correlation(corr, vectors, l)
}

fn pod_from_correlation(corr: DMatrix<f64>, vectors: &[(&[f64], &[f64])], l: usize) -> Result<PodResult> {
    let n = vectors.len();
    let eig = SymmetricEigen::new(corr);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    if !(top > 0.0) {
        return Err(Error::InvalidArgument("POD snapshots are all zero".into()));
    }
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&k| {
            let v = eig.eigenvalues[k];
            if v < -RANK_TOL * top {
                log::warn!("POD correlation eigenvalue {v:.3e} is negative beyond round-off");
            }
            v.max(0.0)
        })
        .collect();
    let (dy, dl) = (vectors[0].0.len(), vectors[0].1.len());
    let mut basis = Vec::new();
    let mut lifts = Vec::new();
    for (rank, &k) in order.iter().enumerate().take(l) {
        let lambda = eigenvalues[rank];
        if lambda <= RANK_TOL * top {
            break;
        }
        let scale = 1.0 / (n as f64 * lambda).sqrt();
        let mut y = vec![0.0; dy];
        let mut h = vec![0.0; dl];
        for (i, (s, sh)) in vectors.iter().enumerate() {
            let c = eig.eigenvectors[(i, k)] * scale;
            for (a, b) in y.iter_mut().zip(*s) {
                *a += c * b;
            }
            for (a, b) in h.iter_mut().zip(*sh) {
                *a += c * b;
            }
        }
        basis.push(y);
        lifts.push(h);
    }
    if basis.len() < l {
        log::debug!("POD kept {} of {} requested modes", basis.len(), l);
    }
    Ok(PodResult {
        basis,
        lifts,
        eigenvalues,
    })
}
