//! CSV and JSON artifacts written by the command-line tool.
//!
//! Numbers are written with `f64`'s `Display`, which round-trips exactly.

use std::fs::File;
use std::path::Path;

use nalgebra::DVector;

use crate::cost::Objective;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::metrics::{MetricSeries, Summary};
use crate::optimality::VerifyRow;
use crate::pronto::IterationRecord;
use crate::sim::SimRecord;
use crate::topology::FormationSpec;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ESTIMATOR_FILE: &str = "estimator.csv";
pub const COSTATE_FILE: &str = "costate.csv";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const VERIFY_FILE: &str = "verify.csv";

const AXES: [&str; 3] = ["x", "y", "z"];

/// Column names `p_1x, ..., p_nz` for a stacked vector, 1-based.
pub fn stacked_columns(prefix: &str, n: usize, dim: usize) -> Vec<String> {
    (0..n)
        .flat_map(|i| (0..dim).map(move |c| format!("{prefix}_{}{}", i + 1, AXES[c])))
        .collect()
}

pub fn trajectory_header(n: usize, dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["p", "v", "u"] {
        h.extend(stacked_columns(prefix, n, dim));
    }
    h
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn push_all(row: &mut Vec<String>, v: impl IntoIterator<Item = f64>) {
    row.extend(v.into_iter().map(|x| x.to_string()));
}

pub fn write_trajectory(
    path: impl AsRef<Path>,
    traj: &Trajectory,
    n: usize,
    dim: usize,
) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(trajectory_header(n, dim))?;
    for (k, (x, u)) in traj.states.iter().zip(&traj.inputs).enumerate() {
        let mut row = vec![traj.time(k).to_string()];
        push_all(&mut row, x.iter().copied());
        push_all(&mut row, u.iter().copied());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory`] for `n` agents in dimension `dim`.
pub fn read_trajectory(path: impl AsRef<Path>, n: usize, dim: usize) -> Result<Trajectory> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let expected = trajectory_header(n, dim);
    if header != expected {
        return Err(Error::Config(format!(
            "{} does not have the trajectory columns for {n} agents in dimension {dim}",
            path.display()
        )));
    }
    let big = n * dim;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("row {}: {e}", line + 2)))?;
        times.push(vals[0]);
        states.push(DVector::from_column_slice(&vals[1..1 + 2 * big]));
        inputs.push(DVector::from_column_slice(&vals[1 + 2 * big..]));
    }
    if times.len() < 2 {
        return Err(Error::Config(format!(
            "{} holds fewer than two samples",
            path.display()
        )));
    }
    let dt = times[1] - times[0];
    let traj = Trajectory { dt, states, inputs };
    let tol = 1e-9 * traj.time(times.len() - 1).abs().max(1.0);
    if times
        .iter()
        .enumerate()
        .any(|(k, &t)| (t - traj.time(k)).abs() > tol)
    {
        return Err(Error::Config(format!(
            "{} is not on a uniform grid starting at 0",
            path.display()
        )));
    }
    Ok(traj)
}

pub fn write_metrics(path: impl AsRef<Path>, m: &MetricSeries) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["t", "l_tr", "l_fo1", "l_fo2", "l_in", "l_tf"])?;
    for k in 0..m.t.len() {
        w.write_record([
            m.t[k].to_string(),
            m.l_tr[k].to_string(),
            m.l_fo1[k].to_string(),
            m.l_fo2[k].to_string(),
            m.l_in[k].to_string(),
            m.l_tf[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: impl AsRef<Path>, s: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(s).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Summary> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn write_iterations(path: impl AsRef<Path>, history: &[IterationRecord]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["iter", "cost", "dtheta", "gamma"])?;
    for r in history {
        w.write_record([
            r.iter.to_string(),
            r.cost.to_string(),
            r.dtheta.to_string(),
            r.gamma.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per sample and agent, agents 1-based.
pub fn write_estimator(path: impl AsRef<Path>, record: &SimRecord) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["t", "i", "e_pc", "e_vc"])?;
    for (k, per_agent) in record.estimates.iter().enumerate() {
        let t = record.trajectory.time(k).to_string();
        for (i, e) in per_agent.iter().enumerate() {
            w.write_record([
                t.clone(),
                (i + 1).to_string(),
                e.e_pc.to_string(),
                e.e_vc.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Costate samples with position-block columns `lp_*` and velocity-block columns `lv_*`.
pub fn write_costate(
    path: impl AsRef<Path>,
    traj: &Trajectory,
    costate: &[DVector<f64>],
    n: usize,
    dim: usize,
) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    let mut header = vec!["t".to_string()];
    header.extend(stacked_columns("lp", n, dim));
    header.extend(stacked_columns("lv", n, dim));
    w.write_record(&header)?;
    for (k, lam) in costate.iter().enumerate() {
        let mut row = vec![traj.time(k).to_string()];
        push_all(&mut row, lam.iter().copied());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_verify(path: impl AsRef<Path>, rows: &[VerifyRow]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["t", "residual", "min_eig_Hxx", "sufficient_flag"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.residual.to_string(),
            r.min_eig.to_string(),
            u8::from(r.sufficient).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Metrics series and summary of a trajectory.
pub fn evaluate(
    traj: &Trajectory,
    obj: &Objective,
    spec: &FormationSpec,
) -> Result<(MetricSeries, Summary)> {
    let series = MetricSeries::compute(traj, obj)?;
    let summary = Summary::compute(&series, traj, spec, &obj.weights.r_full());
    Ok((series, summary))
}

/// Writes the trajectory, metrics and summary of a run, plus the estimator
/// and costate logs when present.
pub fn save_record(dir: impl AsRef<Path>, record: &SimRecord, obj: &Objective) -> Result<Summary> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let spec = obj.spec;
    let (n, dim) = (spec.n(), spec.dim());
    write_trajectory(dir.join(TRAJECTORY_FILE), &record.trajectory, n, dim)?;
    let (series, summary) = evaluate(&record.trajectory, obj, spec)?;
    write_metrics(dir.join(METRICS_FILE), &series)?;
    write_summary(dir.join(SUMMARY_FILE), &summary)?;
    if !record.estimates.is_empty() {
        write_estimator(dir.join(ESTIMATOR_FILE), record)?;
    }
    if !record.costate.is_empty() {
        write_costate(
            dir.join(COSTATE_FILE),
            &record.trajectory,
            &record.costate,
            n,
            dim,
        )?;
    }
    Ok(summary)
}
