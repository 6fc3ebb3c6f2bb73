//! POD-greedy basis construction.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{eta_c, eta_star, Estimate, EstimatorOffline, EstimatorParts, DEFAULT_MAX_COLUMNS};
use crate::exec::{self, Execution};
use crate::hifi::{HifiSolver, Snapshot};
use crate::pod::pod;
use crate::problem::{ParameterVector, SeparableProblem};
use crate::rb_core::{ReducedBasis, ReducedModel};
use crate::wspace::WGram;

/// Training sets larger than this trigger a warning when selecting with the
/// exact-residual estimator.
const LARGE_TRAINING_SET: usize = 200;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    EtaCAbs,
    EtaCRel,
    EtaStarAbs,
    EtaStarRel,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::EtaCAbs => "eta_c_abs",
            EstimatorKind::EtaCRel => "eta_c_rel",
            EstimatorKind::EtaStarAbs => "eta_star_abs",
            EstimatorKind::EtaStarRel => "eta_star_rel",
        }
    }

    /// Whether evaluation avoids any high-fidelity work.
    pub fn is_decomposable(self) -> bool {
        matches!(self, EstimatorKind::EtaCAbs | EstimatorKind::EtaCRel)
    }

    pub fn is_relative(self) -> bool {
        matches!(self, EstimatorKind::EtaCRel | EstimatorKind::EtaStarRel)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "eta_c_abs" => EstimatorKind::EtaCAbs,
            "eta_c_rel" => EstimatorKind::EtaCRel,
            "eta_star_abs" => EstimatorKind::EtaStarAbs,
            "eta_star_rel" => EstimatorKind::EtaStarRel,
            other => return Err(Error::Config(format!("unknown estimator '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreedyConfig {
    pub training: Vec<ParameterVector>,
    pub tol: f64,
    /// Basis growth per round.
    pub l1: usize,
    /// Snapshots added per round.
    pub l2: usize,
    pub max_rounds: usize,
    pub selection: EstimatorKind,
    pub certification: EstimatorKind,
    /// First parameter; the box midpoint when absent.
    pub initial: Option<ParameterVector>,
    pub max_columns: usize,
}

impl GreedyConfig {
    pub fn new(training: Vec<ParameterVector>) -> Self {
        GreedyConfig {
            training,
            tol: 1e-4,
            l1: 1,
            l2: 2,
            max_rounds: 19,
            selection: EstimatorKind::EtaCAbs,
            certification: EstimatorKind::EtaCAbs,
            initial: None,
            max_columns: DEFAULT_MAX_COLUMNS,
        }
    }

    pub fn validate(&self, problem: &SeparableProblem) -> Result<()> {
        if self.training.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        if self.l1 == 0 || self.l2 == 0 {
            return Err(Error::Config(
                "basis growth and snapshots per round must be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!(
                "greedy tolerance must be positive, got {}",
                self.tol
            )));
        }
        for mu in self.training.iter().chain(self.initial.as_ref()) {
            problem.parameter_box.check(mu)?;
        }
        if !self.selection.is_decomposable() && self.training.len() > LARGE_TRAINING_SET {
            log::warn!(
                "selecting with {} over {} training parameters needs one high-fidelity residual per parameter and round",
                self.selection,
                self.training.len()
            );
        }
        Ok(())
    }
}

/// Per-round bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Basis dimension the estimator was evaluated with.
    pub l: usize,
    pub max_estimator: f64,
    pub argmax: Option<usize>,
    /// Training indices selected in this round, in selection order.
    pub selected: Vec<usize>,
    pub selected_mu: Vec<ParameterVector>,
    /// Number of leading archive snapshots the basis was compressed from.
    pub archive_len: usize,
    pub offline_secs: f64,
    pub estimate_secs: f64,
    pub hifi_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyState {
    pub training: Vec<ParameterVector>,
    /// Training indices not yet selected.
    pub remaining: Vec<usize>,
    pub archive: Vec<Snapshot>,
    /// Target basis dimension.
    pub l: usize,
    pub rounds: usize,
    pub history: Vec<RoundRecord>,
    pub finished: bool,
}

impl GreedyState {
    fn start(config: &GreedyConfig, first: Snapshot) -> Self {
        GreedyState {
            training: config.training.clone(),
            remaining: (0..config.training.len()).collect(),
            archive: vec![first],
            l: 1,
            rounds: 0,
            history: Vec::new(),
            finished: false,
        }
    }

    pub fn selected_parameters(&self) -> Vec<&ParameterVector> {
        self.archive.iter().map(|s| &s.mu).collect()
    }

    fn check(&self, config: &GreedyConfig) -> Result<()> {
        if self.training != config.training {
            return Err(Error::Config(
                "checkpoint was produced with a different training set".into(),
            ));
        }
        if self.archive.is_empty() || self.l != 1 + self.rounds * config.l1 {
            return Err(Error::Config("checkpoint state is inconsistent".into()));
        }
        Ok(())
    }
}

/// Everything the online phase and the validation need.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub basis: ReducedBasis,
    pub model: ReducedModel,
    pub offline: EstimatorOffline,
}

/// Result of a finished run.
pub struct GreedyOutcome {
    pub trained: TrainedModel,
    pub state: GreedyState,
}

/// Estimator values of one kind over a parameter list.
pub fn evaluate_estimator(
    kind: EstimatorKind,
    model: &ReducedModel,
    offline: &EstimatorOffline,
    basis: &ReducedBasis,
    gram: &WGram,
    params: &[&ParameterVector],
    exec: Execution,
) -> Result<Vec<Estimate>> {
    exec::try_map_range(exec, params.len(), |k| {
        let mu = params[k];
        let sol = model.solve_online(mu)?;
        if kind.is_decomposable() {
            eta_c(model, offline, mu, &sol)
        } else {
            let (y, _, _) = basis.reconstruct(&sol.u_y, &sol.u_p)?;
            eta_star(gram, mu, &y, sol.y_rb_norm, 1.0)
        }
    })
}

fn value(kind: EstimatorKind, e: &Estimate) -> f64 {
    let v = if kind.is_relative() { e.rel } else { e.abs };
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Positions of the `k` largest values, ties broken by lower position.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

struct Driver<'a> {
    problem: &'a Arc<SeparableProblem>,
    hifi: &'a HifiSolver,
    gram: &'a WGram,
    parts: EstimatorParts,
    config: &'a GreedyConfig,
    exec: Execution,
}

/// Basis, reduced model and estimator from the first `archive_len`
/// snapshots, retaining at most `l` modes.
pub fn build_trained(
    problem: &SeparableProblem,
    gram: &WGram,
    parts: &EstimatorParts,
    archive: &[Snapshot],
    l: usize,
    max_columns: usize,
    exec: Execution,
) -> Result<TrainedModel> {
    let modes = pod(gram, archive, l, exec)?;
    let basis = ReducedBasis::from_pod(&modes)?;
    let model = ReducedModel::build(problem, &basis, exec)?;
    let offline = parts.build(&basis, max_columns, exec)?;
    Ok(TrainedModel { basis, model, offline })
}

/// Rebuilds the model that was evaluated in `record`'s round.
pub fn rebuild_round(
    problem: &SeparableProblem,
    gram: &WGram,
    parts: &EstimatorParts,
    state: &GreedyState,
    record: &RoundRecord,
    max_columns: usize,
    exec: Execution,
) -> Result<TrainedModel> {
    if record.archive_len == 0 || record.archive_len > state.archive.len() {
        return Err(Error::InvalidArgument(format!(
            "round {} refers to {} snapshots",
            record.round, record.archive_len
        )));
    }
    // the recorded dimension already reflects any rank truncation
    build_trained(
        problem,
        gram,
        parts,
        &state.archive[..record.archive_len],
        record.l,
        max_columns,
        exec,
    )
}

impl Driver<'_> {
    /// Snapshot at the configured first parameter, else at the box midpoint.
    /// A midpoint with vanishing data falls back to the reference parameter.
    fn first_snapshot(&self) -> Result<Snapshot> {
        if let Some(mu) = &self.config.initial {
            return self.hifi.solve(mu);
        }
        let snap = self.hifi.solve(&self.problem.parameter_box.midpoint())?;
        if snap.y.iter().any(|&v| v != 0.0) {
            return Ok(snap);
        }
        log::warn!("box midpoint gives a zero trajectory; starting from the reference parameter");
        self.hifi.solve(&self.problem.reference)
    }

    fn build(&self, state: &GreedyState) -> Result<(TrainedModel, f64)> {
        let t = Instant::now();
        let trained = build_trained(
            self.problem,
            self.gram,
            &self.parts,
            &state.archive,
            state.l,
            self.config.max_columns,
            self.exec,
        )?;
        Ok((trained, t.elapsed().as_secs_f64()))
    }
}

/// Runs the POD-greedy loop, optionally resuming from `resume`.
/// `checkpoint` is called after every round with the updated state.
pub fn run_greedy<F>(
    hifi: &HifiSolver,
    config: &GreedyConfig,
    resume: Option<GreedyState>,
    exec: Execution,
    mut checkpoint: F,
) -> Result<GreedyOutcome>
where
    F: FnMut(&GreedyState, &TrainedModel) -> Result<()>,
{
    let problem = hifi.problem();
    config.validate(problem)?;
    let gram = WGram::new(hifi)?;
    let driver = Driver {
        problem,
        hifi,
        gram: &gram,
        parts: EstimatorParts::new(problem, hifi.reference())?,
        config,
        exec,
    };

    let mut state = match resume {
        Some(s) => {
            s.check(config)?;
            s
        }
        None => GreedyState::start(config, driver.first_snapshot()?),
    };

    if state.finished {
        let (trained, _) = driver.build(&state)?;
        checkpoint(&state, &trained)?;
        return Ok(GreedyOutcome { trained, state });
    }

    loop {
        let (trained, offline_secs) = driver.build(&state)?;
        let TrainedModel { basis, model, offline } = &trained;
        let t = Instant::now();
        let params: Vec<&ParameterVector> = state.remaining.iter().map(|&i| &state.training[i]).collect();
        let est = evaluate_estimator(config.selection, model, offline, basis, &gram, &params, exec)?;
        let values: Vec<f64> = est.iter().map(|e| value(config.selection, e)).collect();
        let estimate_secs = t.elapsed().as_secs_f64();
        let order = top_k(&values, config.l2);
        let max = order.first().map_or(0.0, |&k| values[k]);
        let mut record = RoundRecord {
            round: state.rounds,
            l: basis.dim(),
            max_estimator: max,
            argmax: order.first().map(|&k| state.remaining[k]),
            selected: Vec::new(),
            selected_mu: Vec::new(),
            archive_len: state.archive.len(),
            offline_secs,
            estimate_secs,
            hifi_secs: 0.0,
        };
        log::info!(
            "round {}: L = {}, max {} = {max:.3e}",
            state.rounds,
            basis.dim(),
            config.selection
        );

        let done = max <= config.tol || state.remaining.is_empty() || state.rounds >= config.max_rounds;
        if done {
            state.history.push(record);
            state.finished = true;
            checkpoint(&state, &trained)?;
            return Ok(GreedyOutcome { trained, state });
        }

        let picked: Vec<usize> = order.iter().map(|&k| state.remaining[k]).collect();
        state.remaining.retain(|i| !picked.contains(i));
        let fresh: Vec<usize> = picked
            .iter()
            .copied()
            .filter(|&i| !state.archive.iter().any(|s| s.mu == state.training[i]))
            .collect();
        let t = Instant::now();
        let snaps = exec::try_map_range(exec, fresh.len(), |k| driver.hifi.solve(&state.training[fresh[k]]));
        record.hifi_secs = t.elapsed().as_secs_f64();
        record.selected_mu = picked.iter().map(|&i| state.training[i].clone()).collect();
        record.selected = picked;
        let snaps = match snaps {
            Ok(s) => s,
            Err(e) => {
                // leave a resumable checkpoint for the last consistent state
                log::error!("high-fidelity solve failed in round {}: {e}", state.rounds);
                return Err(e);
            }
        };
        state.archive.extend(snaps);
        state.history.push(record);
        state.rounds += 1;
        state.l += config.l1;
        checkpoint(&state, &trained)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hifi::HifiOptions;
    use crate::problem::make_thermal_block;

    fn solver() -> HifiSolver {
        let problem = Arc::new(make_thermal_block(4, 3, 1.0).unwrap());
        HifiSolver::new(problem, HifiOptions::default()).unwrap()
    }

    fn training(problem: &SeparableProblem, n: usize) -> Vec<ParameterVector> {
        let b = &problem.parameter_box;
        (0..n)
            .map(|k| {
                (0..b.dim())
                    .map(|i| {
                        let s = ((k * 7 + i * 3) % 11) as f64 / 10.0;
                        if b.log_scale[i] {
                            b.lower[i] * (b.upper[i] / b.lower[i]).powf(s)
                        } else {
                            b.lower[i] + s * (b.upper[i] - b.lower[i])
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn kind_roundtrip() {
        for k in [
            EstimatorKind::EtaCAbs,
            EstimatorKind::EtaCRel,
            EstimatorKind::EtaStarAbs,
            EstimatorKind::EtaStarRel,
        ] {
            assert_eq!(k.as_str().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("eta".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn top_k_ties_prefer_lower_index() {
        assert_eq!(top_k(&[1.0, 3.0, 3.0, 2.0], 2), vec![1, 2]);
        assert_eq!(top_k(&[1.0, f64::INFINITY], 5), vec![1, 0]);
        assert!(top_k(&[], 2).is_empty());
    }

    #[test]
    fn rounds_follow_counting_formulas() {
        let hifi = solver();
        let mut config = GreedyConfig::new(training(hifi.problem(), 12));
        config.tol = 1e-14;
        config.max_rounds = 3;
        let mut calls = 0;
        let out = run_greedy(&hifi, &config, None, Execution::Parallel, |_, _| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        let s = &out.state;
        let again = rebuild_round(
            hifi.problem(),
            &WGram::new(&hifi).unwrap(),
            &EstimatorParts::new(hifi.problem(), hifi.reference()).unwrap(),
            s,
            &s.history[3],
            config.max_columns,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(again.basis.bw, out.trained.basis.bw);
        assert_eq!(
            s.history.iter().map(|r| r.archive_len).collect::<Vec<_>>(),
            vec![1, 3, 5, 7]
        );
        assert_eq!(s.rounds, 3);
        assert_eq!(s.archive.len(), 1 + 2 * 3);
        assert_eq!(s.l, 4);
        assert_eq!(out.trained.basis.dim(), 4);
        assert_eq!(s.history.len(), 4);
        assert_eq!(s.remaining.len(), 12 - 6);
        assert_eq!(calls, 4);
        let mut all: Vec<usize> = s.history.iter().flat_map(|r| r.selected.clone()).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 6);

        // deterministic across execution modes
        let seq = run_greedy(&hifi, &config, None, Execution::Sequential, |_, _| Ok(())).unwrap();
        let a: Vec<_> = s.history.iter().map(|r| r.selected.clone()).collect();
        let b: Vec<_> = seq.state.history.iter().map(|r| r.selected.clone()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let hifi = solver();
        let mut config = GreedyConfig::new(training(hifi.problem(), 10));
        config.tol = 1e-14;
        config.max_rounds = 3;
        let full = run_greedy(&hifi, &config, None, Execution::Parallel, |_, _| Ok(())).unwrap();
        let mut saved = None;
        let mut short = config.clone();
        short.max_rounds = 1;
        run_greedy(&hifi, &short, None, Execution::Parallel, |s, _| {
            if s.rounds == 1 && !s.finished {
                saved = Some(s.clone());
            }
            Ok(())
        })
        .unwrap();
        let resumed = run_greedy(&hifi, &config, saved, Execution::Parallel, |_, _| Ok(())).unwrap();
        let a: Vec<_> = full.state.history.iter().map(|r| r.selected.clone()).collect();
        let b: Vec<_> = resumed.state.history.iter().map(|r| r.selected.clone()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn reference_only_training_set_stops_at_once() {
        let hifi = solver();
        let mu = hifi.problem().reference.clone();
        let mut config = GreedyConfig::new(vec![mu.clone()]);
        config.initial = Some(mu);
        let data = hifi
            .problem()
            .f1_parts
            .iter()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        config.tol = 1e-2 * data;
        let out = run_greedy(&hifi, &config, None, Execution::Sequential, |_, _| Ok(())).unwrap();
        assert_eq!(out.state.rounds, 0);
        assert!(out.state.history[0].max_estimator < config.tol);
    }

    #[test]
    fn invalid_configs() {
        let hifi = solver();
        let mut c = GreedyConfig::new(vec![]);
        assert!(matches!(
            run_greedy(&hifi, &c, None, Execution::Sequential, |_, _| Ok(())),
            Err(Error::Config(_))
        ));
        c.training = training(hifi.problem(), 2);
        c.l2 = 0;
        assert!(c.validate(hifi.problem()).is_err());
        c.l2 = 1;
        c.tol = 0.0;
        assert!(c.validate(hifi.problem()).is_err());
        c.tol = 1.0;
        c.training[0][0] = 100.0;
        assert!(matches!(c.validate(hifi.problem()), Err(Error::OutOfBounds(..))));
    }
}
