//! Run configuration: a built-in profile overlaid with an optional TOML file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greedy::EstimatorKind;
use crate::hifi::{HifiOptions, HifiPreconditioner};
use crate::kron_ops::{SaddleMethod, SolverOptions};
use crate::problem::{make_thermal_block, make_thermal_block_on, SeparableProblem};
use crate::space_fem::SpaceMesh;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!(
                "unknown profile '{other}' (expected desk or paper)"
            ))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Only `thermal_block` is built in.
    pub kind: String,
    pub vertices_per_side: usize,
    pub time_elements: usize,
    pub final_time: f64,
    /// Mesh in the text format; overrides `vertices_per_side` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub size: usize,
    pub seed: u64,
    pub tol: f64,
    pub l1: usize,
    pub l2: usize,
    pub max_rounds: usize,
    pub selection: EstimatorKind,
    pub certification: EstimatorKind,
    pub max_columns: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub size: usize,
    pub seed: u64,
    /// Relative slack of the guarantee-chain check.
    pub slack: f64,
    /// Also evaluate every intermediate basis of the greedy run.
    pub decay: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub saddle: SaddleMethod,
    pub preconditioner: HifiPreconditioner,
    /// Largest banded factor (in entries) attempted by direct solves.
    pub direct_budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub training: TrainingConfig,
    pub validation: ValidationConfig,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let desk = RunConfig {
            problem: ProblemConfig {
                kind: "thermal_block".into(),
                vertices_per_side: 13,
                time_elements: 30,
                final_time: 3.0,
                mesh: None,
            },
            training: TrainingConfig {
                size: 500,
                seed: 1,
                tol: 1e-3,
                l1: 1,
                l2: 2,
                max_rounds: 19,
                selection: EstimatorKind::EtaCAbs,
                certification: EstimatorKind::EtaCAbs,
                max_columns: crate::estimators::DEFAULT_MAX_COLUMNS,
            },
            validation: ValidationConfig {
                size: 20,
                seed: 2,
                slack: 1e-8,
                decay: true,
            },
            solver: SolverConfig {
                tol: crate::kron_ops::DEFAULT_TOL,
                max_iter: 5000,
                saddle: SaddleMethod::Schur,
                preconditioner: HifiPreconditioner::Reference,
                direct_budget: 1 << 24,
            },
        };
        match profile {
            Profile::Desk => desk,
            Profile::Paper => RunConfig {
                problem: ProblemConfig {
                    vertices_per_side: 22,
                    time_elements: 60,
                    ..desk.problem
                },
                training: TrainingConfig {
                    size: 5000,
                    max_rounds: 29,
                    ..desk.training
                },
                ..desk
            },
        }
    }

    /// Profile defaults overlaid with the tables of the TOML file at `path`.
    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        let base = RunConfig::profile(profile);
        let Some(path) = path else { return Ok(base) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        let mut cfg =
            RunConfig::from_toml(&text, base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // relative mesh paths are taken relative to the config file
        if let (Some(mesh), Some(dir)) = (cfg.problem.mesh.as_mut(), path.parent()) {
            if mesh.is_relative() {
                *mesh = dir.join(&*mesh);
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str, base: RunConfig) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.problem.kind != "thermal_block" {
            return bad(format!("unknown problem kind '{}'", self.problem.kind));
        }
        if self.problem.time_elements == 0 || !(self.problem.final_time > 0.0) {
            return bad("time grid needs at least one element and a positive final time".into());
        }
        if self.training.size == 0 || self.validation.size == 0 {
            return bad("training and validation sets must be nonempty".into());
        }
        if self.training.l1 == 0 || self.training.l2 == 0 {
            return bad("training.l1 and training.l2 must be at least 1".into());
        }
        if !(self.training.tol > 0.0) || !(self.solver.tol > 0.0) || !(self.validation.slack >= 0.0) {
            return bad("tolerances must be positive".into());
        }
        Ok(())
    }

    pub fn solver_options(&self) -> HifiOptions {
        HifiOptions {
            solver: SolverOptions {
                tol: self.solver.tol,
                max_iter: self.solver.max_iter,
                direct_budget: self.solver.direct_budget,
                saddle: self.solver.saddle,
            },
            preconditioner: self.solver.preconditioner,
        }
    }

    pub fn build_problem(&self) -> Result<SeparableProblem> {
        let p = &self.problem;
        let wrap = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        match &p.mesh {
            Some(path) => {
                let mesh = SpaceMesh::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
                    .map_err(|e| Error::Config(format!("mesh {}: {e}", path.display())))?;
                make_thermal_block_on(&mesh, p.time_elements, p.final_time).map_err(wrap)
            }
            None => make_thermal_block(p.vertices_per_side, p.time_elements, p.final_time).map_err(wrap),
        }
    }

    /// Description stored with model files to detect mismatched inputs.
    pub fn problem_fingerprint(&self) -> serde_json::Value {
        serde_json::to_value(&self.problem).expect("serializable problem config")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable config")
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
