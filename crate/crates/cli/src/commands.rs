use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use strb_core::bench::{run_validation, sample_parameters, solve_truths, DecayPoint, SamplingSpec};
use strb_core::config::RunConfig;
use strb_core::estimators::{eta_c, EstimatorParts};
use strb_core::greedy::{rebuild_round, run_greedy, GreedyConfig};
use strb_core::hifi::HifiSolver;
use strb_core::io::csv_out::{self, join};
use strb_core::io::persist;
use strb_core::space_fem::build_thermal_block_mesh;
use strb_core::wspace::WGram;
use strb_core::{Error, Execution};

use crate::{Failure, GlobalArgs};

type CmdResult = Result<(), Failure>;

const CHECKPOINT: &str = "checkpoint.strb";

fn config(args: &GlobalArgs) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(args.profile, args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.training.seed = seed;
        cfg.validation.seed = seed.wrapping_add(1);
    }
    if let Some(tol) = args.tol {
        cfg.training.tol = tol;
    }
    if let Some(e) = args.estimator {
        cfg.training.selection = e;
    }
    cfg.validate()?;
    if args.inflate_alpha.is_nan() || args.inflate_alpha <= 0.0 {
        return Err(Error::Config("--inflate-alpha must be positive".into()));
    }
    Ok(cfg)
}

fn out_dir(args: &GlobalArgs) -> Result<&Path, Error> {
    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    Ok(&args.out)
}

fn hifi_solver(cfg: &RunConfig) -> Result<HifiSolver, Error> {
    HifiSolver::new(Arc::new(cfg.build_problem()?), cfg.solver_options())
}

fn check_fingerprint(cfg: &RunConfig, stored: &serde_json::Value, what: &Path) -> Result<(), Error> {
    if *stored != cfg.problem_fingerprint() {
        return Err(Error::Config(format!(
            "{} was produced for a different problem configuration",
            what.display()
        )));
    }
    Ok(())
}

pub fn offline(args: &GlobalArgs) -> CmdResult {
    let cfg = config(args)?;
    let out = out_dir(args)?;
    let hifi = hifi_solver(&cfg)?;
    let problem = hifi.problem().clone();
    let fingerprint = cfg.problem_fingerprint();
    let training = sample_parameters(&SamplingSpec::from_box(
        &problem.parameter_box,
        cfg.training.size,
        cfg.training.seed,
    ))?;
    let greedy = GreedyConfig {
        training,
        tol: cfg.training.tol,
        l1: cfg.training.l1,
        l2: cfg.training.l2,
        max_rounds: cfg.training.max_rounds,
        selection: cfg.training.selection,
        certification: cfg.training.certification,
        initial: None,
        max_columns: cfg.training.max_columns,
    };
    let resume = match &args.resume {
        Some(path) => {
            let (state, stored) = persist::load_checkpoint(path)?;
            check_fingerprint(&cfg, &stored, path)?;
            log::info!("resuming after round {} from {}", state.rounds, path.display());
            Some(state)
        }
        None => None,
    };
    fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| Error::Io {
        path: out.join("config.toml"),
        source: e,
    })?;
    let t = Instant::now();
    let outcome = run_greedy(&hifi, &greedy, resume, Execution::Parallel, |state, trained| {
        persist::save_checkpoint(&out.join(CHECKPOINT), state, &fingerprint)?;
        persist::save_trained(out, trained, &fingerprint)?;
        csv_out::write_training_log(&out.join("training.csv"), &state.history)?;
        csv_out::write_timings(&out.join("timings.csv"), &state.history)
    })?;
    let last = outcome.state.history.last().expect("at least one round");
    println!(
        "offline: L = {}, {} snapshots, max {} = {:.3e}, {:.2}s",
        outcome.trained.basis.dim(),
        outcome.state.archive.len(),
        greedy.selection,
        last.max_estimator,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn online(args: &GlobalArgs, mu: &[String], params: Option<&Path>) -> CmdResult {
    let mut list = Vec::new();
    for m in mu {
        list.push(csv_out::parse_parameter(m)?);
    }
    if let Some(p) = params {
        list.extend(csv_out::read_parameters(p)?);
    }
    if list.is_empty() {
        return Err(Error::Config("online needs at least one --mu or a --params file".into()).into());
    }
    let path = args.out.join("model.strb");
    let (model, offline, _) = persist::load_model(&path)?;
    let mut rows = Vec::with_capacity(list.len());
    let mut flagged = 0;
    for (k, mu) in list.iter().enumerate() {
        let t = Instant::now();
        let result = model
            .solve_online(mu)
            .and_then(|sol| eta_c(&model, &offline, mu, &sol).map(|e| (sol, e)));
        let secs = t.elapsed().as_secs_f64();
        let row = match result {
            Ok((sol, e)) => vec![
                k.to_string(),
                join(mu),
                "true".into(),
                join(&sol.u_y),
                e.abs.to_string(),
                e.rel.to_string(),
                e.certified.to_string(),
                secs.to_string(),
            ],
            Err(e @ (Error::OutOfBounds(_) | Error::DimensionMismatch { .. })) => {
                flagged += 1;
                log::warn!("parameter {k}: {e}");
                vec![
                    k.to_string(),
                    join(mu),
                    "false".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "false".into(),
                    secs.to_string(),
                ]
            }
            Err(e) => return Err(e.into()),
        };
        rows.push(row);
    }
    let dest = out_dir(args)?.join("online.csv");
    csv_out::write_csv(
        &dest,
        csv_out::ONLINE_SCHEMA,
        &[
            "index",
            "mu",
            "in_box",
            "u_y",
            "eta_c_abs",
            "eta_c_rel",
            "certified",
            "wall_secs",
        ],
        &rows,
    )?;
    if flagged > 0 {
        eprintln!("warning: {flagged} parameter(s) outside the admissible box were flagged");
    }
    println!("online: {} parameter(s) written to {}", rows.len(), dest.display());
    Ok(())
}

pub fn validate(args: &GlobalArgs) -> CmdResult {
    let cfg = config(args)?;
    let out = out_dir(args)?;
    let (trained, stored) = persist::load_trained(out)?;
    check_fingerprint(&cfg, &stored, &out.join("model.strb"))?;
    let hifi = hifi_solver(&cfg)?;
    let problem = hifi.problem().clone();
    let gram = WGram::new(&hifi)?;
    let params = sample_parameters(&SamplingSpec::from_box(
        &problem.parameter_box,
        cfg.validation.size,
        cfg.validation.seed,
    ))?;
    let (truths, hifi_secs) = solve_truths(&hifi, &params, Execution::Parallel)?;
    let mut report = run_validation(&gram, &trained, &truths, args.inflate_alpha, Execution::Parallel)?;
    report.hifi_secs = hifi_secs;

    let checkpoint = out.join(CHECKPOINT);
    if cfg.validation.decay && checkpoint.exists() {
        let (state, stored) = persist::load_checkpoint(&checkpoint)?;
        check_fingerprint(&cfg, &stored, &checkpoint)?;
        report.offline_secs = state
            .history
            .iter()
            .map(|r| r.offline_secs + r.estimate_secs + r.hifi_secs)
            .sum();
        let parts = EstimatorParts::new(&problem, hifi.reference())?;
        let mut points: Vec<DecayPoint> = Vec::new();
        for record in &state.history {
            if points.last().is_some_and(|p| p.l >= record.l) {
                continue;
            }
            let model = rebuild_round(
                &problem,
                &gram,
                &parts,
                &state,
                record,
                cfg.training.max_columns,
                Execution::Parallel,
            )?;
            let r = run_validation(&gram, &model, &truths, args.inflate_alpha, Execution::Parallel)?;
            points.push(DecayPoint::from_report(&r));
        }
        csv_out::write_decay(&out.join("decay.csv"), &points)?;
    }

    csv_out::write_validation(&out.join("validation.csv"), &report, cfg.validation.slack)?;
    csv_out::write_validation_summary(&out.join("validation_summary.csv"), &report)?;
    let bad = report.violations(cfg.validation.slack);
    println!(
        "validate: L = {}, mean eps = {:.3e}, median eff(eta_star) = {:.2}, median eff(eta_c) = {:.2}, violations = {}",
        report.l,
        report.eps_abs().mean,
        report.eff_star().median,
        report.eff_c().median,
        bad.len()
    );
    if !bad.is_empty() {
        return Err(Failure {
            code: 4,
            message: format!("guarantee chain violated for validation rows {bad:?}"),
        });
    }
    Ok(())
}

pub fn mesh_export(args: &GlobalArgs, path: Option<&Path>) -> CmdResult {
    let cfg = config(args)?;
    let mesh = match &cfg.problem.mesh {
        Some(p) => strb_core::space_fem::SpaceMesh::from_text(&fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?)?,
        None => build_thermal_block_mesh(cfg.problem.vertices_per_side).map_err(|e| Error::Config(e.to_string()))?,
    };
    let dest = match path {
        Some(p) => p.to_path_buf(),
        None => out_dir(args)?.join("mesh.txt"),
    };
    fs::write(&dest, mesh.to_text()).map_err(|e| Error::Io {
        path: dest.clone(),
        source: e,
    })?;
    println!(
        "mesh: {} vertices, {} triangles written to {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        dest.display()
    );
    Ok(())
}
