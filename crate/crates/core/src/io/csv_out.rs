//! Versioned CSV outputs. Each file starts with a `# schema: <name>/<version>`
//! line followed by a regular CSV header.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::bench::{DecayPoint, ValidationReport};
use crate::error::{Error, Result};
use crate::greedy::RoundRecord;
use crate::problem::ParameterVector;

pub const TRAINING_SCHEMA: &str = "strb.training/1";
pub const TIMINGS_SCHEMA: &str = "strb.timings/1";
pub const VALIDATION_SCHEMA: &str = "strb.validation/1";
pub const SUMMARY_SCHEMA: &str = "strb.validation_summary/1";
pub const DECAY_SCHEMA: &str = "strb.decay/1";
pub const ONLINE_SCHEMA: &str = "strb.online/1";

/// Semicolon-joined list, used for vector-valued cells.
pub fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn join_idx(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// Writes the schema line, the header and all rows.
pub fn write_csv(path: &Path, schema: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "# schema: {schema}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Returns the schema and the records of a file written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(String, Vec<String>, Vec<Vec<String>>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let schema = first
        .trim()
        .strip_prefix("# schema: ")
        .ok_or_else(|| Error::Integrity {
            path: path.to_path_buf(),
            reason: "missing schema line".into(),
        })?
        .to_string();
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((schema, header, rows))
}

pub fn write_training_log(path: &Path, history: &[RoundRecord]) -> Result<()> {
    let rows = history
        .iter()
        .map(|r| {
            vec![
                r.round.to_string(),
                r.l.to_string(),
                r.max_estimator.to_string(),
                r.argmax.map_or(String::new(), |i| i.to_string()),
                join_idx(&r.selected),
            ]
        })
        .collect::<Vec<_>>();
    write_csv(
        path,
        TRAINING_SCHEMA,
        &["round", "l", "max_estimator", "argmax", "selected"],
        &rows,
    )
}

pub fn write_timings(path: &Path, history: &[RoundRecord]) -> Result<()> {
    let rows = history
        .iter()
        .map(|r| {
            vec![
                r.round.to_string(),
                r.l.to_string(),
                r.offline_secs.to_string(),
                r.estimate_secs.to_string(),
                r.hifi_secs.to_string(),
            ]
        })
        .collect::<Vec<_>>();
    write_csv(
        path,
        TIMINGS_SCHEMA,
        &["round", "l", "offline_secs", "estimate_secs", "hifi_secs"],
        &rows,
    )
}

pub fn write_validation(path: &Path, report: &ValidationReport, slack: f64) -> Result<()> {
    let rows = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.index.to_string(),
                join(&r.mu),
                r.eps_abs.to_string(),
                r.eps_rel.to_string(),
                r.eta_star_abs.to_string(),
                r.eta_star_rel.to_string(),
                r.eta_c_abs.to_string(),
                r.eta_c_rel.to_string(),
                r.eff_star().to_string(),
                r.eff_c().to_string(),
                r.certified.to_string(),
                r.chain_holds(slack).to_string(),
            ]
        })
        .collect::<Vec<_>>();
    write_csv(
        path,
        VALIDATION_SCHEMA,
        &[
            "index",
            "mu",
            "eps_abs",
            "eps_rel",
            "eta_star_abs",
            "eta_star_rel",
            "eta_c_abs",
            "eta_c_rel",
            "eff_star",
            "eff_c",
            "certified",
            "chain_ok",
        ],
        &rows,
    )
}

pub fn write_validation_summary(path: &Path, report: &ValidationReport) -> Result<()> {
    let agg = [
        ("eps_abs", report.eps_abs()),
        ("eff_star", report.eff_star()),
        ("eff_c", report.eff_c()),
        ("online_secs", report.online_secs()),
        ("hifi_secs", report.hifi_secs()),
    ];
    let mut rows: Vec<Vec<String>> = agg
        .iter()
        .map(|(n, a)| {
            vec![
                n.to_string(),
                report.l.to_string(),
                a.mean.to_string(),
                a.median.to_string(),
                a.max.to_string(),
            ]
        })
        .collect();
    let off = report.offline_secs.to_string();
    rows.push(vec![
        "offline_secs".into(),
        report.l.to_string(),
        off.clone(),
        off.clone(),
        off,
    ]);
    write_csv(path, SUMMARY_SCHEMA, &["quantity", "l", "mean", "median", "max"], &rows)
}

pub fn write_decay(path: &Path, points: &[DecayPoint]) -> Result<()> {
    let rows = points
        .iter()
        .map(|p| {
            vec![
                p.l.to_string(),
                p.mean_eps_abs.to_string(),
                p.mean_eps_rel.to_string(),
                p.mean_eff_star.to_string(),
                p.mean_eff_c.to_string(),
            ]
        })
        .collect::<Vec<_>>();
    write_csv(
        path,
        DECAY_SCHEMA,
        &["l", "mean_eps_abs", "mean_eps_rel", "mean_eff_star", "mean_eff_c"],
        &rows,
    )
}

/// Parameters from a text file: one comma- or whitespace-separated vector
/// per line; blank lines and `#` comments are skipped.
pub fn read_parameters(path: &Path) -> Result<Vec<ParameterVector>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(k, l)| (k, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(k, l)| parse_parameter(l).map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), k + 1))))
        .collect()
}

pub fn parse_parameter(s: &str) -> Result<ParameterVector> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Config(format!("not a number: '{t}'")))
        })
        .collect()
}
