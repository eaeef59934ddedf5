//! End-to-end runs of a scenario: the online distributed loop and the
//! offline optimizer, both logged as a [`SimRecord`].

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::controller::{
    control_agent, costate_reconstruct, saturate, AgentView, GradientTerms, NeighborState,
};
use crate::cost::{CentroidTarget, ReferencePath};
use crate::dynamics::{step_exact, Trajectory};
use crate::error::{Error, Result};
use crate::estimator::{check_step, init_estimators, step_estimators, EstimatorState};
use crate::optimality::costate_backward;
use crate::pronto::{optimize, ProntoReport};
use crate::scenario::Scenario;

/// Centroid estimation errors of one agent at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateError {
    pub e_pc: f64,
    pub e_vc: f64,
}

/// Everything logged by a run.
#[derive(Debug, Clone)]
pub struct SimRecord {
    pub trajectory: Trajectory,
    /// `estimates[k][i]`; empty for the optimizer.
    pub estimates: Vec<Vec<EstimateError>>,
    /// Costate samples, exact for the optimizer and reconstructed from the
    /// gradient terms for the distributed law. Empty unless requested.
    pub costate: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub parallel: bool,
    pub log_costate: bool,
}

fn agent_view<'a>(
    i: usize,
    x: &'a DVector<f64>,
    scn: &Scenario,
    est: &EstimatorState,
) -> AgentView<'a> {
    let dim = scn.spec.dim();
    let big = scn.spec.big_n();
    let neighbors = scn
        .spec
        .graph()
        .incident(i)
        .iter()
        .map(|&(j, edge)| NeighborState {
            edge,
            p: x.rows(j * dim, dim),
            v: x.rows(big + j * dim, dim),
        })
        .collect();
    let (pc_hat, vc_hat) = est.centroid_estimate(i);
    AgentView {
        i,
        p: x.rows(i * dim, dim),
        v: x.rows(big + i * dim, dim),
        neighbors,
        pc_hat,
        vc_hat,
    }
}

/// Inputs of all agents from their local views, saturated when configured.
pub fn distributed_inputs(
    x: &DVector<f64>,
    est: &EstimatorState,
    target: &CentroidTarget,
    scn: &Scenario,
    parallel: bool,
) -> (DVector<f64>, Vec<GradientTerms>) {
    let gains = scn.controller();
    let one = |i: usize| {
        let view = agent_view(i, x, scn, est);
        control_agent(&view, target, &scn.spec, &scn.weights, gains)
    };
    let per_agent: Vec<_> = if parallel {
        (0..scn.spec.n()).into_par_iter().map(one).collect()
    } else {
        (0..scn.spec.n()).map(one).collect()
    };
    let dim = scn.spec.dim();
    let mut u = DVector::zeros(scn.spec.big_n());
    let mut terms = Vec::with_capacity(per_agent.len());
    for (i, (ui, ti)) in per_agent.into_iter().enumerate() {
        u.rows_mut(i * dim, dim).copy_from(&ui);
        terms.push(ti);
    }
    if let Some(bound) = gains.saturation {
        u = saturate(&u, bound);
    }
    (u, terms)
}

fn estimate_errors(est: &EstimatorState, x: &DVector<f64>) -> Vec<EstimateError> {
    (0..est.n())
        .map(|i| {
            let (e_pc, e_vc) = est.centroid_error_norms(i, x);
            EstimateError { e_pc, e_vc }
        })
        .collect()
}

/// Closed loop of the distributed controller and the centroid estimators.
///
/// Each step computes every agent's input from its own view, steps the
/// plant exactly under the held input, then steps the estimators with the
/// same snapshot.
pub fn run_distributed(scn: &Scenario, opts: RunOptions) -> Result<SimRecord> {
    let dt = scn.dt();
    let steps = scn.steps;
    let reference = scn.sample_reference()?;
    let graph = scn.spec.graph();
    let dim = scn.spec.dim();
    let egains = scn.estimator();
    check_step(egains, dt);

    let mut x = scn.x0.clone();
    let mut est = init_estimators(&x, graph, dim, egains.init);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut estimates = Vec::with_capacity(steps + 1);
    let mut costate = Vec::new();
    for k in 0..=steps {
        let (u, terms) = distributed_inputs(&x, &est, reference.at(k), scn, opts.parallel);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(k));
        }
        estimates.push(estimate_errors(&est, &x));
        if opts.log_costate {
            costate.push(costate_reconstruct(&terms, scn.controller()));
        }
        if k < steps {
            let next = step_exact(&x, &u, dt);
            est = step_estimators(&est, &x, &u, graph, egains, dt, opts.parallel);
            if next.iter().any(|v| !v.is_finite())
                || est.agents.iter().any(|a| a.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::NonFinite(k + 1));
            }
            states.push(std::mem::replace(&mut x, next));
        } else {
            states.push(x.clone());
        }
        inputs.push(u);
    }
    info!(
        "distributed run finished: {} steps, final estimation error {:.3e}",
        steps,
        est.max_error(&x)
    );
    Ok(SimRecord {
        trajectory: Trajectory { dt, states, inputs },
        estimates,
        costate,
    })
}

/// Optimizer run on the scenario grid, or on the optimizer's own step when set.
pub fn run_pronto(scn: &Scenario, opts: RunOptions) -> Result<(SimRecord, ProntoReport)> {
    let owned;
    let scn = match scn.pronto().dt {
        Some(dt) if dt != scn.dt() => {
            info!("optimizer uses its own step {dt} s");
            owned = scn.with_dt(dt)?;
            &owned
        }
        _ => scn,
    };
    let reference = scn.sample_reference()?;
    let obj = scn.objective(&reference)?;
    let report = optimize(&scn.x0, scn.steps, scn.dt(), &obj, scn.pronto())?;
    if report.history.windows(2).any(|w| w[1].cost > w[0].cost) {
        warn!("optimizer cost increased between iterations");
    }
    let costate = if opts.log_costate {
        costate_backward(&report.trajectory, &obj).lambda
    } else {
        Vec::new()
    };
    let record = SimRecord {
        trajectory: report.trajectory.clone(),
        estimates: Vec::new(),
        costate,
    };
    Ok((record, report))
}

/// Reference sampled on the grid of a logged trajectory.
pub fn reference_for(scn: &Scenario, traj: &Trajectory) -> Result<(Scenario, ReferencePath)> {
    let scn = scn.with_dt(traj.dt)?;
    if scn.steps != traj.steps() {
        return Err(Error::Config(format!(
            "trajectory has {} steps, scenario grid has {}",
            traj.steps(),
            scn.steps
        )));
    }
    let reference = scn.sample_reference()?;
    Ok((scn, reference))
}
