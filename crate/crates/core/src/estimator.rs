//! Distributed second-order centroid estimation.
//!
//! Every agent keeps a full copy `[p_hat; v_hat]` of the stacked positions
//! and velocities, corrects it by consensus with its neighbors and by its own
//! measured block, and feeds forward the inputs it can observe (its own and
//! its neighbors'). The local centroid estimate is the block mean.

use log::warn;
use nalgebra::{DVector, DVectorView};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{centroid, step_exact};
use crate::error::{Error, Result};
use crate::topology::Graph;

/// Above this value of `dt * gain` the RK4 step is flagged as too coarse.
pub const STEP_WARN_RATIO: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorGains {
    /// Position consensus gain (1/s).
    pub k_py: f64,
    /// Velocity consensus gain (1/s).
    pub k_dy: f64,
    #[serde(default)]
    pub init: EstimatorInit,
}

impl EstimatorGains {
    pub fn new(k_py: f64, k_dy: f64) -> Result<Self> {
        let g = EstimatorGains {
            k_py,
            k_dy,
            init: EstimatorInit::default(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_py > 0.0 && self.k_dy > 0.0 && self.k_py.is_finite() && self.k_dy.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "estimator gains must be positive, got {} and {}",
                self.k_py, self.k_dy
            )));
        }
        Ok(())
    }
}

/// How an agent initializes the blocks of agents it cannot observe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorInit {
    /// Average over the closed neighborhood weighted by `1 + degree`.
    #[default]
    DegreeWeighted,
    /// Plain average over the closed neighborhood.
    Uniform,
}

/// Per-agent estimates, each a `2N` vector `[p_hat; v_hat]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub agents: Vec<DVector<f64>>,
    dim: usize,
}

impl EstimatorState {
    pub fn new(agents: Vec<DVector<f64>>, dim: usize) -> Self {
        EstimatorState { agents, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    /// Agent `i`'s estimate of the centroid position and velocity.
    pub fn centroid_estimate(&self, i: usize) -> (DVector<f64>, DVector<f64>) {
        centroid(&self.agents[i], self.n(), self.dim)
    }

    /// Largest absolute deviation of any agent's estimate from the true state.
    pub fn max_error(&self, x: &DVector<f64>) -> f64 {
        self.agents
            .iter()
            .map(|e| (e - x).amax())
            .fold(0.0, f64::max)
    }

    /// Norms of agent `i`'s centroid position and velocity estimation errors.
    pub fn centroid_error_norms(&self, i: usize, x: &DVector<f64>) -> (f64, f64) {
        let (pc, vc) = centroid(x, self.n(), self.dim);
        let (pe, ve) = self.centroid_estimate(i);
        ((pc - pe).norm(), (vc - ve).norm())
    }
}

pub fn init_estimators(
    x0: &DVector<f64>,
    graph: &Graph,
    dim: usize,
    mode: EstimatorInit,
) -> EstimatorState {
    let n = graph.n();
    let big = n * dim;
    let block_of = |k: usize| -> (DVectorView<f64>, DVectorView<f64>) {
        (x0.rows(k * dim, dim), x0.rows(big + k * dim, dim))
    };
    let agents = (0..n)
        .map(|i| {
            let closed: Vec<usize> = std::iter::once(i)
                .chain(graph.neighbors(i).iter().copied())
                .collect();
            let weight = |k: usize| match mode {
                EstimatorInit::DegreeWeighted => 1.0 + graph.degree(k) as f64,
                EstimatorInit::Uniform => 1.0,
            };
            let total: f64 = closed.iter().map(|&k| weight(k)).sum();
            let mut avg_p = DVector::zeros(dim);
            let mut avg_v = DVector::zeros(dim);
            for &k in &closed {
                let (p, v) = block_of(k);
                avg_p += p * weight(k);
                avg_v += v * weight(k);
            }
            avg_p /= total;
            avg_v /= total;

            let mut est = DVector::zeros(2 * big);
            for j in 0..n {
                if graph.in_closed_neighborhood(i, j) {
                    let (p, v) = block_of(j);
                    est.rows_mut(j * dim, dim).copy_from(&p);
                    est.rows_mut(big + j * dim, dim).copy_from(&v);
                } else {
                    est.rows_mut(j * dim, dim).copy_from(&avg_p);
                    est.rows_mut(big + j * dim, dim).copy_from(&avg_v);
                }
            }
            est
        })
        .collect();
    EstimatorState { agents, dim }
}

/// Everything agent `i` may use to update its estimate.
#[derive(Debug, Clone)]
pub struct LocalEstimatorInput<'a> {
    pub i: usize,
    pub own: &'a DVector<f64>,
    pub neighbor_estimates: Vec<&'a DVector<f64>>,
    /// Agent `i`'s measured position and velocity.
    pub p_i: DVectorView<'a, f64>,
    pub v_i: DVectorView<'a, f64>,
    /// Inputs of agents in the closed neighborhood, with their indices.
    pub visible_inputs: Vec<(usize, DVectorView<'a, f64>)>,
}

/// First-order consensus estimator row:
/// `-k sum_j (y_i - y_j) - k N_i (y_i - y) + w_hat` for one stacked quantity.
pub fn consensus_row(
    own: DVectorView<f64>,
    neighbors: &[DVectorView<f64>],
    i: usize,
    measured: DVectorView<f64>,
    input_hat: &DVector<f64>,
    gain: f64,
    dim: usize,
) -> DVector<f64> {
    let mut d = input_hat.clone();
    for nb in neighbors {
        for k in 0..own.len() {
            d[k] -= gain * (own[k] - nb[k]);
        }
    }
    for c in 0..dim {
        d[i * dim + c] -= gain * (own[i * dim + c] - measured[c]);
    }
    d
}

/// Time derivative of one agent's estimate, computed from local data only.
pub fn agent_derivative(
    local: &LocalEstimatorInput,
    gains: &EstimatorGains,
    dim: usize,
) -> DVector<f64> {
    let big = local.own.len() / 2;
    let mut u_hat = DVector::zeros(big);
    for (j, u) in &local.visible_inputs {
        u_hat.rows_mut(j * dim, dim).copy_from(u);
    }
    let v_hat = local.own.rows(big, big).into_owned();
    let p_nb: Vec<_> = local
        .neighbor_estimates
        .iter()
        .map(|e| e.rows(0, big))
        .collect();
    let v_nb: Vec<_> = local
        .neighbor_estimates
        .iter()
        .map(|e| e.rows(big, big))
        .collect();
    let dp = consensus_row(
        local.own.rows(0, big),
        &p_nb,
        local.i,
        local.p_i,
        &v_hat,
        gains.k_py,
        dim,
    );
    let dv = consensus_row(
        local.own.rows(big, big),
        &v_nb,
        local.i,
        local.v_i,
        &u_hat,
        gains.k_dy,
        dim,
    );
    let mut out = DVector::zeros(2 * big);
    out.rows_mut(0, big).copy_from(&dp);
    out.rows_mut(big, big).copy_from(&dv);
    out
}

fn local_input<'a>(
    i: usize,
    agents: &'a [DVector<f64>],
    x: &'a DVector<f64>,
    u: &'a DVector<f64>,
    graph: &Graph,
    dim: usize,
) -> LocalEstimatorInput<'a> {
    let big = u.len();
    let visible = std::iter::once(i)
        .chain(graph.neighbors(i).iter().copied())
        .map(|j| (j, u.rows(j * dim, dim)))
        .collect();
    LocalEstimatorInput {
        i,
        own: &agents[i],
        neighbor_estimates: graph.neighbors(i).iter().map(|&j| &agents[j]).collect(),
        p_i: x.rows(i * dim, dim),
        v_i: x.rows(big + i * dim, dim),
        visible_inputs: visible,
    }
}

/// Derivative of every agent's estimate against a synchronized snapshot.
pub fn estimator_derivative(
    agents: &[DVector<f64>],
    x: &DVector<f64>,
    u: &DVector<f64>,
    graph: &Graph,
    gains: &EstimatorGains,
    dim: usize,
    parallel: bool,
) -> Vec<DVector<f64>> {
    let one = |i: usize| agent_derivative(&local_input(i, agents, x, u, graph, dim), gains, dim);
    if parallel {
        (0..agents.len()).into_par_iter().map(one).collect()
    } else {
        (0..agents.len()).map(one).collect()
    }
}

fn axpy(base: &[DVector<f64>], k: &[DVector<f64>], s: f64) -> Vec<DVector<f64>> {
    base.iter().zip(k).map(|(b, d)| b + d * s).collect()
}

/// One RK4 step with the inputs held at `u`.
///
/// The measurements follow the plant: each stage sees the state reached
/// from `x` under the held input at that stage's time.
pub fn step_estimators(
    est: &EstimatorState,
    x: &DVector<f64>,
    u: &DVector<f64>,
    graph: &Graph,
    gains: &EstimatorGains,
    dt: f64,
    parallel: bool,
) -> EstimatorState {
    let dim = est.dim;
    let x_mid = step_exact(x, u, 0.5 * dt);
    let x_end = step_exact(x, u, dt);
    let f = |a: &[DVector<f64>], xs: &DVector<f64>| {
        estimator_derivative(a, xs, u, graph, gains, dim, parallel)
    };
    let y = &est.agents;
    let k1 = f(y, x);
    let k2 = f(&axpy(y, &k1, 0.5 * dt), &x_mid);
    let k3 = f(&axpy(y, &k2, 0.5 * dt), &x_mid);
    let k4 = f(&axpy(y, &k3, dt), &x_end);
    let agents = (0..y.len())
        .map(|i| &y[i] + (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (dt / 6.0))
        .collect();
    EstimatorState { agents, dim }
}

/// Warns when the step is coarse relative to the estimator gains.
pub fn check_step(gains: &EstimatorGains, dt: f64) -> bool {
    let ratio = dt * gains.k_py.max(gains.k_dy);
    if ratio > STEP_WARN_RATIO {
        warn!("estimator step dt * gain = {ratio:.3} exceeds {STEP_WARN_RATIO}; RK4 may be inaccurate");
        return false;
    }
    true
}

/// Asymptotic bound on the stacked centroid estimation error
/// `sum_i |e_pc^i|^2 + |e_vc^i|^2` for inputs held at `u`.
pub fn centroid_error_bound(
    graph: &Graph,
    dim: usize,
    gains: &EstimatorGains,
    u: &DVector<f64>,
) -> f64 {
    let n = graph.n();
    let c = graph.topological_constant(dim);
    let mut hidden = 0.0;
    for i in 0..n {
        for j in 0..n {
            if !graph.in_closed_neighborhood(i, j) {
                hidden += u.rows(j * dim, dim).norm_squared();
            }
        }
    }
    let k = gains.k_py.min(gains.k_dy);
    c * c / ((n * n) as f64 * k * k) * hidden
}

/// Stacked centroid estimation error `sum_i |e_pc^i|^2 + |e_vc^i|^2`.
pub fn centroid_error_sq(est: &EstimatorState, x: &DVector<f64>) -> f64 {
    (0..est.n())
        .map(|i| {
            let (ep, ev) = est.centroid_error_norms(i, x);
            ep * ep + ev * ev
        })
        .sum()
}
