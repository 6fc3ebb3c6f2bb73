//! Thermal block benchmark: parameter sampling and validation runs.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{eta_c_inflated, eta_star, true_error};
use crate::exec::{self, Execution};
pub use crate::greedy::TrainedModel;
use crate::hifi::{HifiSolver, Snapshot};
use crate::problem::{ParameterBox, ParameterVector};
use crate::wspace::WGram;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Uniform,
    LogUniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub distributions: Vec<Distribution>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub count: usize,
    pub seed: u64,
}

impl SamplingSpec {
    /// Log-uniform on log-scaled box components, uniform elsewhere.
    pub fn from_box(pbox: &ParameterBox, count: usize, seed: u64) -> Self {
        SamplingSpec {
            distributions: pbox
                .log_scale
                .iter()
                .map(|&l| {
                    if l {
                        Distribution::LogUniform
                    } else {
                        Distribution::Uniform
                    }
                })
                .collect(),
            lower: pbox.lower.clone(),
            upper: pbox.upper.clone(),
            count,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.distributions.len();
        if self.lower.len() != d || self.upper.len() != d {
            return Err(Error::dims(
                "sampling bounds",
                d,
                self.lower.len().min(self.upper.len()),
            ));
        }
        for (k, dist) in self.distributions.iter().enumerate() {
            let (a, b) = (self.lower[k], self.upper[k]);
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidArgument(format!(
                    "component {k}: empty interval [{a}, {b}]"
                )));
            }
            if *dist == Distribution::LogUniform && a <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "component {k}: log-uniform bounds must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic samples for a fixed seed.
pub fn sample_parameters(spec: &SamplingSpec) -> Result<Vec<ParameterVector>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.count)
        .map(|_| {
            spec.distributions
                .iter()
                .enumerate()
                .map(|(k, d)| match d {
                    Distribution::Uniform => rng.random_range(spec.lower[k]..spec.upper[k]),
                    Distribution::LogUniform => rng.random_range(spec.lower[k].ln()..spec.upper[k].ln()).exp(),
                })
                .collect()
        })
        .collect())
}

/// High-fidelity reference solutions with their wall times in seconds.
pub fn solve_truths(
    hifi: &HifiSolver,
    params: &[ParameterVector],
    exec: Execution,
) -> Result<(Vec<Snapshot>, Vec<f64>)> {
    let out = exec::try_map_range(exec, params.len(), |k| -> Result<(Snapshot, f64)> {
        let t = Instant::now();
        let s = hifi.solve(&params[k])?;
        Ok((s, t.elapsed().as_secs_f64()))
    })?;
    Ok(out.into_iter().unzip())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub index: usize,
    pub mu: ParameterVector,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eta_star_abs: f64,
    pub eta_star_rel: f64,
    pub eta_c_abs: f64,
    pub eta_c_rel: f64,
    pub certified: bool,
    pub online_secs: f64,
}

impl ValidationRow {
    pub fn eff_star(&self) -> f64 {
        self.eta_star_abs / self.eps_abs
    }

    pub fn eff_c(&self) -> f64 {
        self.eta_c_abs / self.eps_abs
    }

    /// Whether `eps <= eta_star <= eta_c` holds up to relative `slack`.
    pub fn chain_holds(&self, slack: f64) -> bool {
        self.eps_abs <= self.eta_star_abs * (1.0 + slack) && self.eta_star_abs <= self.eta_c_abs * (1.0 + slack)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Aggregate {
        if values.is_empty() {
            return Aggregate {
                mean: f64::NAN,
                median: f64::NAN,
                max: f64::NAN,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Aggregate {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            max: v[n - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub l: usize,
    pub rows: Vec<ValidationRow>,
    pub hifi_secs: Vec<f64>,
    pub offline_secs: f64,
}

impl ValidationReport {
    fn column(&self, f: impl Fn(&ValidationRow) -> f64) -> Aggregate {
        Aggregate::of(&self.rows.iter().map(f).collect::<Vec<_>>())
    }

    pub fn eps_abs(&self) -> Aggregate {
        self.column(|r| r.eps_abs)
    }

    pub fn eff_star(&self) -> Aggregate {
        self.column(ValidationRow::eff_star)
    }

    pub fn eff_c(&self) -> Aggregate {
        self.column(ValidationRow::eff_c)
    }

    pub fn online_secs(&self) -> Aggregate {
        self.column(|r| r.online_secs)
    }

    pub fn hifi_secs(&self) -> Aggregate {
        Aggregate::of(&self.hifi_secs)
    }

    /// Rows whose guarantee chain fails beyond `slack`.
    pub fn violations(&self, slack: f64) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| !r.chain_holds(slack))
            .map(|r| r.index)
            .collect()
    }
}

/// Reduced solve, both estimators and the true error for each truth.
/// `inflate` scales the coercivity lower bound and exists for fault
/// injection; pass `1.0` otherwise.
pub fn run_validation(
    gram: &WGram,
    trained: &TrainedModel,
    truths: &[Snapshot],
    inflate: f64,
    exec: Execution,
) -> Result<ValidationReport> {
    let rows = exec::try_map_range(exec, truths.len(), |k| -> Result<ValidationRow> {
        let truth = &truths[k];
        let mu = &truth.mu;
        let t = Instant::now();
        let sol = trained.model.solve_online(mu)?;
        let c = eta_c_inflated(&trained.model, &trained.offline, mu, &sol, inflate)?;
        let online_secs = t.elapsed().as_secs_f64();
        let (y, _, lift) = trained.basis.reconstruct(&sol.u_y, &sol.u_p)?;
        let star = eta_star(gram, mu, &y, sol.y_rb_norm, inflate)?;
        let (eps_abs, eps_rel) = true_error(gram, &truth.y, &truth.lift, &y, &lift)?;
        Ok(ValidationRow {
            index: k,
            mu: mu.clone(),
            eps_abs,
            eps_rel,
            eta_star_abs: star.abs,
            eta_star_rel: star.rel,
            eta_c_abs: c.abs,
            eta_c_rel: c.rel,
            certified: c.certified,
            online_secs,
        })
    })?;
    Ok(ValidationReport {
        l: trained.basis.dim(),
        rows,
        hifi_secs: Vec::new(),
        offline_secs: 0.0,
    })
}

/// One point of an error decay curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub l: usize,
    pub mean_eps_abs: f64,
    pub mean_eps_rel: f64,
    pub mean_eff_star: f64,
    pub mean_eff_c: f64,
}

impl DecayPoint {
    pub fn from_report(r: &ValidationReport) -> DecayPoint {
        DecayPoint {
            l: r.l,
            mean_eps_abs: r.eps_abs().mean,
            mean_eps_rel: r.column(|x| x.eps_rel).mean,
            mean_eff_star: r.eff_star().mean,
            mean_eff_c: r.eff_c().mean,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{EstimatorParts, DEFAULT_MAX_COLUMNS};
    use crate::hifi::HifiOptions;
    use crate::problem::make_thermal_block;
    use crate::rb_core::{ReducedBasis, ReducedModel};
    use std::sync::Arc;

    fn thermal_spec(count: usize, seed: u64) -> SamplingSpec {
        let mut d = vec![Distribution::LogUniform; 8];
        d.push(Distribution::Uniform);
        let mut lower = vec![0.1; 8];
        lower.push(-1.0);
        let mut upper = vec![10.0; 8];
        upper.push(1.0);
        SamplingSpec {
            distributions: d,
            lower,
            upper,
            count,
            seed,
        }
    }

    #[test]
    fn sampling_is_deterministic_and_in_bounds() {
        let a = sample_parameters(&thermal_spec(50, 7)).unwrap();
        assert_eq!(a, sample_parameters(&thermal_spec(50, 7)).unwrap());
        assert_ne!(a, sample_parameters(&thermal_spec(50, 8)).unwrap());
        for mu in &a {
            assert!(mu[..8].iter().all(|&v| (0.1..=10.0).contains(&v)));
            assert!((-1.0..=1.0).contains(&mu[8]));
        }
    }

    #[test]
    fn sampling_statistics() {
        let n = 10_000;
        let s = sample_parameters(&thermal_spec(n, 3)).unwrap();
        let mut c0: Vec<f64> = s.iter().map(|m| m[0]).collect();
        c0.sort_by(f64::total_cmp);
        assert!((c0[n / 2] - 1.0).abs() < 0.1, "median {}", c0[n / 2]);
        // uniform on [-1, 1] has standard deviation 1/sqrt(3)
        let mean = s.iter().map(|m| m[8]).sum::<f64>() / n as f64;
        let sigma = (1.0f64 / 3.0).sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn invalid_specs() {
        let mut s = thermal_spec(3, 0);
        s.lower[0] = 0.0;
        assert!(sample_parameters(&s).is_err());
        let mut s = thermal_spec(3, 0);
        s.upper[8] = -2.0;
        assert!(sample_parameters(&s).is_err());
        let mut s = thermal_spec(3, 0);
        s.lower.pop();
        assert!(sample_parameters(&s).is_err());
    }

    #[test]
    fn aggregates() {
        let a = Aggregate::of(&[3.0, 1.0, 2.0, 10.0]);
        assert_eq!(a.median, 2.5);
        assert_eq!(a.max, 10.0);
        assert_eq!(a.mean, 4.0);
        assert!(Aggregate::of(&[]).mean.is_nan());
    }

    #[test]
    fn validation_chain_on_small_block() {
        let problem = Arc::new(make_thermal_block(4, 3, 1.0).unwrap());
        let hifi = HifiSolver::new(problem.clone(), HifiOptions::default()).unwrap();
        let gram = WGram::new(&hifi).unwrap();
        let spec = SamplingSpec::from_box(&problem.parameter_box, 4, 11);
        let train = sample_parameters(&spec).unwrap();
        let (mut snaps, _) = solve_truths(&hifi, &train, Execution::Parallel).unwrap();
        snaps.push(hifi.solve(&problem.reference).unwrap());
        let modes = crate::pod::pod(&gram, &snaps, 5, Execution::Parallel).unwrap();
        let basis = ReducedBasis::from_pod(&modes).unwrap();
        let model = ReducedModel::build(&problem, &basis, Execution::Parallel).unwrap();
        let offline = EstimatorParts::new(&problem, hifi.reference())
            .unwrap()
            .build(&basis, DEFAULT_MAX_COLUMNS, Execution::Parallel)
            .unwrap();
        let trained = TrainedModel { basis, model, offline };
        let mut vals = sample_parameters(&SamplingSpec::from_box(&problem.parameter_box, 5, 12)).unwrap();
        vals.push(problem.reference.clone());
        let (truths, secs) = solve_truths(&hifi, &vals, Execution::Sequential).unwrap();
        assert_eq!(secs.len(), 6);
        let rep = run_validation(&gram, &trained, &truths, 1.0, Execution::Parallel).unwrap();
        assert!(rep.violations(1e-8).is_empty());
        // the reference snapshot is reproduced by a basis containing it
        let norm = gram.w_norm(&truths[5].y, &truths[5].lift).unwrap();
        assert!(rep.rows[5].eps_abs < 1e-6 * norm);
        let bad = run_validation(&gram, &trained, &truths[..5], 1e4, Execution::Parallel).unwrap();
        assert!(!bad.violations(1e-8).is_empty());
    }
}
