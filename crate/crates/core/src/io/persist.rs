//! Model, basis and greedy checkpoint files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::archive::Archive;
use crate::bench::TrainedModel;
use crate::error::{Error, Result};
use crate::estimators::EstimatorOffline;
use crate::greedy::{GreedyState, RoundRecord};
use crate::hifi::Snapshot;
use crate::problem::{Monomial, ParameterBox, ParameterVector, Theta};
use crate::rb_core::{ReducedBasis, ReducedModel};

pub const MODEL_KIND: &str = "strb.model";
pub const BASIS_KIND: &str = "strb.basis";
pub const CHECKPOINT_KIND: &str = "strb.checkpoint";

fn meta_err(path: &Path, e: serde_json::Error) -> Error {
    Error::Integrity {
        path: path.to_path_buf(),
        reason: format!("malformed metadata: {e}"),
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    problem: Value,
    l: usize,
    theta_s: Vec<Theta>,
    theta_rhs: Vec<Theta>,
    theta_a: Vec<Theta>,
    parameter_box: ParameterBox,
    reference: ParameterVector,
    estimator_nominal: (usize, usize),
    vec_thetas: Vec<Monomial>,
    op_thetas: Vec<Monomial>,
}

/// Reduced operators and estimator tables; all the online phase reads.
pub fn save_model(path: &Path, model: &ReducedModel, offline: &EstimatorOffline, problem: &Value) -> Result<()> {
    let meta = ModelMeta {
        problem: problem.clone(),
        l: model.l,
        theta_s: model.theta_s.clone(),
        theta_rhs: model.theta_rhs.clone(),
        theta_a: model.theta_a.clone(),
        parameter_box: model.parameter_box.clone(),
        reference: model.reference.clone(),
        estimator_nominal: (offline.q_vec, offline.q_op),
        vec_thetas: offline.vec_thetas.clone(),
        op_thetas: offline.op_thetas.clone(),
    };
    let mut a = Archive::new(MODEL_KIND, serde_json::to_value(&meta).expect("serializable metadata"));
    for (q, s) in model.s_parts.iter().enumerate() {
        a.push_matrix(format!("s_{q}"), s)?;
    }
    for (q, r) in model.rhs_parts.iter().enumerate() {
        a.push_vector(format!("rhs_{q}"), r.as_slice())?;
    }
    a.push_matrix("gram", &model.gram)?;
    a.push_matrix("estimator_gram", &offline.gram)?;
    a.write(path)
}

/// Returns the model, its estimator and the stored problem description.
pub fn load_model(path: &Path) -> Result<(ReducedModel, EstimatorOffline, Value)> {
    let a = Archive::read_kind(path, MODEL_KIND)?;
    let wrap = |e: Error| match e {
        Error::Integrity { reason, .. } => Error::Integrity {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    };
    let meta: ModelMeta = serde_json::from_value(a.metadata.clone()).map_err(|e| meta_err(path, e))?;
    let s_parts = (0..meta.theta_s.len())
        .map(|q| a.matrix(&format!("s_{q}")))
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;
    let rhs_parts = (0..meta.theta_rhs.len())
        .map(|q| a.vector(&format!("rhs_{q}")))
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;
    let gram = a.matrix("gram").map_err(wrap)?;
    let n = 2 * meta.l;
    if s_parts.iter().any(|s| s.shape() != (n, n))
        || rhs_parts.iter().any(|r| r.len() != n)
        || gram.shape() != (meta.l, meta.l)
    {
        return Err(Error::Integrity {
            path: path.to_path_buf(),
            reason: "reduced operator sizes disagree with L".into(),
        });
    }
    let offline = EstimatorOffline::new(
        meta.estimator_nominal,
        meta.vec_thetas,
        meta.op_thetas,
        meta.l,
        a.matrix("estimator_gram").map_err(wrap)?,
    )
    .map_err(|e| Error::Integrity {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let model = ReducedModel {
        l: meta.l,
        s_parts,
        theta_s: meta.theta_s,
        rhs_parts,
        theta_rhs: meta.theta_rhs,
        gram,
        theta_a: meta.theta_a,
        parameter_box: meta.parameter_box,
        reference: meta.reference,
    };
    Ok((model, offline, meta.problem))
}

pub fn save_basis(path: &Path, basis: &ReducedBasis, problem: &Value) -> Result<()> {
    let mut a = Archive::new(BASIS_KIND, json!({ "problem": problem }));
    a.push_matrix("bw", &basis.bw)?;
    a.push_matrix("bq", &basis.bq)?;
    a.write(path)
}

pub fn load_basis(path: &Path) -> Result<(ReducedBasis, Value)> {
    let a = Archive::read_kind(path, BASIS_KIND)?;
    let bad = |reason: String| Error::Integrity {
        path: path.to_path_buf(),
        reason,
    };
    let basis = ReducedBasis::new(
        a.matrix("bw").map_err(|e| bad(e.to_string()))?,
        a.matrix("bq").map_err(|e| bad(e.to_string()))?,
    )
    .map_err(|e| bad(e.to_string()))?;
    Ok((basis, a.metadata["problem"].clone()))
}

/// Saves model and basis as `model.strb` and `basis.strb` under `dir`.
pub fn save_trained(dir: &Path, trained: &TrainedModel, problem: &Value) -> Result<()> {
    save_model(&dir.join("model.strb"), &trained.model, &trained.offline, problem)?;
    save_basis(&dir.join("basis.strb"), &trained.basis, problem)
}

pub fn load_trained(dir: &Path) -> Result<(TrainedModel, Value)> {
    let (model, offline, problem) = load_model(&dir.join("model.strb"))?;
    let (basis, p2) = load_basis(&dir.join("basis.strb"))?;
    if p2 != problem || basis.dim() != model.l {
        return Err(Error::Integrity {
            path: dir.to_path_buf(),
            reason: "model and basis files belong to different runs".into(),
        });
    }
    Ok((TrainedModel { basis, model, offline }, problem))
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    problem: Value,
    training: Vec<ParameterVector>,
    remaining: Vec<usize>,
    l: usize,
    rounds: usize,
    history: Vec<RoundRecord>,
    finished: bool,
    snapshot_mu: Vec<ParameterVector>,
    snapshot_residual: Vec<f64>,
}

pub fn save_checkpoint(path: &Path, state: &GreedyState, problem: &Value) -> Result<()> {
    let meta = CheckpointMeta {
        problem: problem.clone(),
        training: state.training.clone(),
        remaining: state.remaining.clone(),
        l: state.l,
        rounds: state.rounds,
        history: state.history.clone(),
        finished: state.finished,
        snapshot_mu: state.archive.iter().map(|s| s.mu.clone()).collect(),
        snapshot_residual: state.archive.iter().map(|s| s.residual).collect(),
    };
    let mut a = Archive::new(
        CHECKPOINT_KIND,
        serde_json::to_value(&meta).expect("serializable metadata"),
    );
    for (k, s) in state.archive.iter().enumerate() {
        a.push_vector(format!("y_{k}"), &s.y)?;
        a.push_vector(format!("p_{k}"), &s.p)?;
        a.push_vector(format!("lift_{k}"), &s.lift)?;
    }
    a.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(GreedyState, Value)> {
    let a = Archive::read_kind(path, CHECKPOINT_KIND)?;
    let meta: CheckpointMeta = serde_json::from_value(a.metadata.clone()).map_err(|e| meta_err(path, e))?;
    if meta.snapshot_mu.len() != meta.snapshot_residual.len() {
        return Err(Error::Integrity {
            path: path.to_path_buf(),
            reason: "snapshot tables disagree".into(),
        });
    }
    let data = |name: String| -> Result<Vec<f64>> {
        a.get(&name).map(|v| v.data.clone()).map_err(|e| Error::Integrity {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    };
    let mut archive = Vec::with_capacity(meta.snapshot_mu.len());
    for (k, (mu, residual)) in meta.snapshot_mu.into_iter().zip(meta.snapshot_residual).enumerate() {
        archive.push(Snapshot {
            mu,
            y: data(format!("y_{k}"))?,
            p: data(format!("p_{k}"))?,
            lift: data(format!("lift_{k}"))?,
            residual,
        });
    }
    let state = GreedyState {
        training: meta.training,
        remaining: meta.remaining,
        archive,
        l: meta.l,
        rounds: meta.rounds,
        history: meta.history,
        finished: meta.finished,
    };
    Ok((state, meta.problem))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;
    use crate::greedy::{run_greedy, GreedyConfig};
    use crate::hifi::{HifiOptions, HifiSolver};
    use crate::problem::make_thermal_block;
    use std::sync::Arc;

    #[test]
    fn model_and_checkpoint_roundtrip() {
        let problem = Arc::new(make_thermal_block(4, 3, 1.0).unwrap());
        let hifi = HifiSolver::new(problem.clone(), HifiOptions::default()).unwrap();
        let mut training = vec![problem.reference.clone(); 3];
        training[1][0] = 5.0;
        training[2][3] = 0.2;
        let mut cfg = GreedyConfig::new(training);
        cfg.max_rounds = 1;
        cfg.tol = 1e-14;
        let out = run_greedy(&hifi, &cfg, None, Execution::Sequential, |_, _| Ok(())).unwrap();
        let desc = json!({"kind": "thermal_block", "n": 4});
        let dir = tempfile::tempdir().unwrap();

        let trained = out.trained.clone();
        save_trained(dir.path(), &trained, &desc).unwrap();
        let (back, d2) = load_trained(dir.path()).unwrap();
        assert_eq!(d2, desc);
        assert_eq!(back.basis.bw, trained.basis.bw);
        let mu = vec![2.0, 0.3, 1.0, 1.0, 4.0, 1.0, 1.0, 0.5, 0.7];
        let s1 = trained.model.solve_online(&mu).unwrap();
        let s2 = back.model.solve_online(&mu).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(
            trained.offline.residual_bound(&mu, &s1.u_y).unwrap(),
            back.offline.residual_bound(&mu, &s2.u_y).unwrap()
        );

        let cp = dir.path().join("checkpoint.strb");
        save_checkpoint(&cp, &out.state, &desc).unwrap();
        let (state, _) = load_checkpoint(&cp).unwrap();
        assert_eq!(state, out.state);

        // truncation surfaces as an integrity error
        let bytes = std::fs::read(dir.path().join("basis.strb")).unwrap();
        std::fs::write(dir.path().join("basis.strb"), &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_trained(dir.path()), Err(Error::Integrity { .. })));
        assert!(matches!(
            load_checkpoint(&dir.path().join("basis.strb")),
            Err(Error::Integrity { .. })
        ));
    }
}
