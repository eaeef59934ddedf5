//! Evaluation metrics: cost breakdown over time, tracking/formation
//! trade-off, settling times and energy summaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::Objective;
use crate::dynamics::Trajectory;
use crate::error::Result;
use crate::topology::FormationSpec;

/// Settling thresholds reported by default.
pub const DELTA_PRESETS: [f64; 3] = [0.1, 0.01, 0.001];

/// Normalized trade-off `(l_fo - l_tr) / (l_fo + l_tr)`, zero when both vanish.
pub fn tradeoff(l_fo: f64, l_tr: f64) -> f64 {
    let s = l_fo + l_tr;
    if s > 0.0 {
        (l_fo - l_tr) / s
    } else {
        0.0
    }
}

/// First grid time after which `|l_tf| <= delta` holds through the end.
pub fn settling_time(t: &[f64], l_tf: &[f64], delta: f64) -> Option<f64> {
    let mut first = None;
    for k in (0..l_tf.len()).rev() {
        if l_tf[k].abs() <= delta {
            first = Some(k);
        } else {
            break;
        }
    }
    first.map(|k| t[k])
}

/// Input energy normalized by the Frobenius norm of the input weight.
pub fn avg_input_energy(l_in: f64, r: &DMatrix<f64>) -> f64 {
    l_in / r.norm()
}

/// Per-edge formation error record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeError {
    /// Squared distance minus squared desired distance.
    pub distance_sq_error: f64,
    pub sigma: f64,
    pub sigma_d1: f64,
    pub sigma_d2: f64,
    pub velocity_mismatch: f64,
}

pub fn formation_errors(x: &DVector<f64>, spec: &FormationSpec) -> Vec<EdgeError> {
    let dim = spec.dim();
    let big = spec.big_n();
    spec.graph()
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            let s = (x.rows(i * dim, dim) - x.rows(j * dim, dim)).norm_squared();
            let ev = spec.edge_params(e).eval_unchecked(s);
            EdgeError {
                distance_sq_error: s - spec.edge_params(e).d_sq(),
                sigma: ev.value,
                sigma_d1: ev.d1,
                sigma_d2: ev.d2,
                velocity_mismatch: (x.rows(big + i * dim, dim) - x.rows(big + j * dim, dim)).norm(),
            }
        })
        .collect()
}

/// Largest `|s_ij - d_ij^2| / d_ij^2` over all edges.
pub fn max_relative_distance_error(x: &DVector<f64>, spec: &FormationSpec) -> f64 {
    formation_errors(x, spec)
        .iter()
        .enumerate()
        .map(|(e, r)| r.distance_sq_error.abs() / spec.edge_params(e).d_sq())
        .fold(0.0, f64::max)
}

pub fn max_velocity_mismatch(x: &DVector<f64>, spec: &FormationSpec) -> f64 {
    formation_errors(x, spec)
        .iter()
        .map(|r| r.velocity_mismatch)
        .fold(0.0, f64::max)
}

/// Cost terms and derived metrics sampled on the trajectory grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub t: Vec<f64>,
    pub l_tr: Vec<f64>,
    pub l_fo1: Vec<f64>,
    pub l_fo2: Vec<f64>,
    pub l_in: Vec<f64>,
    pub l_tf: Vec<f64>,
    /// Running integral of `l_in` with the held input.
    pub cumulative_energy: Vec<f64>,
}

impl MetricSeries {
    pub fn compute(traj: &Trajectory, obj: &Objective) -> Result<Self> {
        let len = traj.states.len();
        let mut m = MetricSeries {
            t: traj.times(),
            l_tr: Vec::with_capacity(len),
            l_fo1: Vec::with_capacity(len),
            l_fo2: Vec::with_capacity(len),
            l_in: Vec::with_capacity(len),
            l_tf: Vec::with_capacity(len),
            cumulative_energy: Vec::with_capacity(len),
        };
        let mut acc = 0.0;
        for k in 0..len {
            let terms = obj.terms(&traj.states[k], &traj.inputs[k], k)?;
            m.l_tr.push(terms.tr);
            m.l_fo1.push(terms.fo1);
            m.l_fo2.push(terms.fo2);
            m.l_in.push(terms.input);
            m.l_tf.push(tradeoff(terms.formation(), terms.tr));
            m.cumulative_energy.push(acc);
            acc += traj.dt * terms.input;
        }
        Ok(m)
    }

    pub fn settling_time(&self, delta: f64) -> Option<f64> {
        settling_time(&self.t, &self.l_tf, delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlingEntry {
    pub delta: f64,
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub settling_times: Vec<SettlingEntry>,
    /// Integral of the input cost over the horizon.
    pub total_energy: f64,
    /// Time average of the input cost.
    pub mean_energy: f64,
    /// Time average of the input cost normalized by the input weight's Frobenius norm.
    pub mean_avg_energy: f64,
    pub final_max_distance_error: f64,
    pub final_max_velocity_mismatch: f64,
}

impl Summary {
    pub fn compute(
        series: &MetricSeries,
        traj: &Trajectory,
        spec: &FormationSpec,
        r: &DMatrix<f64>,
    ) -> Self {
        let total = series.cumulative_energy.last().copied().unwrap_or(0.0);
        let horizon = traj.horizon();
        let mean = if horizon > 0.0 { total / horizon } else { 0.0 };
        let last = traj.states.last().expect("non-empty trajectory");
        Summary {
            settling_times: DELTA_PRESETS
                .iter()
                .map(|&delta| SettlingEntry {
                    delta,
                    time: series.settling_time(delta),
                })
                .collect(),
            total_energy: total,
            mean_energy: mean,
            mean_avg_energy: avg_input_energy(mean, r),
            final_max_distance_error: max_relative_distance_error(last, spec),
            final_max_velocity_mismatch: max_velocity_mismatch(last, spec),
        }
    }

    pub fn settling(&self, delta: f64) -> Option<f64> {
        self.settling_times
            .iter()
            .find(|s| s.delta == delta)
            .and_then(|s| s.time)
    }
}
