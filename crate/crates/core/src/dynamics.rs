//! Stacked double-integrator plant.
//!
//! The state is `x = [p; v]` with all positions first, agent-major and
//! coordinate-minor, then all velocities in the same order. The input is
//! the stacked acceleration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Continuous-time matrices `(A, B, C)` for `n` agents in dimension `dim`.
///
/// `C` maps the state to the centroid position and velocity.
pub fn system_matrices(n: usize, dim: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let big = n * dim;
    let mut a = DMatrix::zeros(2 * big, 2 * big);
    let mut b = DMatrix::zeros(2 * big, big);
    for k in 0..big {
        a[(k, big + k)] = 1.0;
        b[(big + k, k)] = 1.0;
    }
    let mut c = DMatrix::zeros(2 * dim, 2 * big);
    let w = 1.0 / n as f64;
    for i in 0..n {
        for m in 0..dim {
            c[(m, i * dim + m)] = w;
            c[(dim + m, big + i * dim + m)] = w;
        }
    }
    (a, b, c)
}

/// Positions and velocities of all agents at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub x: DVector<f64>,
}

impl SystemState {
    pub fn new(t: f64, p: &DVector<f64>, v: &DVector<f64>) -> Result<Self> {
        if p.len() != v.len() {
            return Err(Error::InvalidParameter(format!(
                "position length {} differs from velocity length {}",
                p.len(),
                v.len()
            )));
        }
        if p.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "state contains non-finite values".into(),
            ));
        }
        let mut x = DVector::zeros(2 * p.len());
        x.rows_mut(0, p.len()).copy_from(p);
        x.rows_mut(p.len(), v.len()).copy_from(v);
        Ok(SystemState { t, x })
    }

    pub fn big_n(&self) -> usize {
        self.x.len() / 2
    }

    pub fn p(&self) -> DVector<f64> {
        positions(&self.x)
    }

    pub fn v(&self) -> DVector<f64> {
        velocities(&self.x)
    }

    pub fn step(&self, u: &DVector<f64>, dt: f64) -> SystemState {
        SystemState {
            t: self.t + dt,
            x: step_exact(&self.x, u, dt),
        }
    }
}

pub fn positions(x: &DVector<f64>) -> DVector<f64> {
    x.rows(0, x.len() / 2).into_owned()
}

pub fn velocities(x: &DVector<f64>) -> DVector<f64> {
    let h = x.len() / 2;
    x.rows(h, h).into_owned()
}

/// Exact zero-order-hold step of the double integrator.
pub fn step_exact(x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> DVector<f64> {
    let big = u.len();
    let half = 0.5 * dt * dt;
    let mut out = x.clone();
    for k in 0..big {
        out[k] = x[k] + x[big + k] * dt + u[k] * half;
        out[big + k] = x[big + k] + u[k] * dt;
    }
    out
}

/// Centroid position and velocity.
pub fn centroid(x: &DVector<f64>, n: usize, dim: usize) -> (DVector<f64>, DVector<f64>) {
    let big = n * dim;
    let mut pc = DVector::zeros(dim);
    let mut vc = DVector::zeros(dim);
    for i in 0..n {
        for m in 0..dim {
            pc[m] += x[i * dim + m];
            vc[m] += x[big + i * dim + m];
        }
    }
    pc /= n as f64;
    vc /= n as f64;
    (pc, vc)
}

/// State and input samples on a uniform grid starting at `t = 0`.
///
/// `states[k]` and `inputs[k]` belong to `t = k dt`. The input is held
/// constant on `[t_k, t_{k+1})`; the final input sample repeats the last
/// applied input.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    /// Simulates the plant from `x0` under the given inputs (one per interval).
    pub fn simulate(x0: &DVector<f64>, inputs: &[DVector<f64>], dt: f64) -> Trajectory {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x0.clone());
        for u in inputs {
            let next = step_exact(states.last().unwrap(), u, dt);
            states.push(next);
        }
        let mut inputs = inputs.to_vec();
        let last = inputs
            .last()
            .cloned()
            .unwrap_or_else(|| DVector::zeros(x0.len() / 2));
        inputs.push(last);
        Trajectory { dt, states, inputs }
    }

    /// Number of intervals.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|k| self.time(k)).collect()
    }

    /// Largest violation of the discrete dynamics over all intervals.
    pub fn dynamics_defect(&self) -> f64 {
        (0..self.steps())
            .map(|k| {
                (step_exact(&self.states[k], &self.inputs[k], self.dt) - &self.states[k + 1]).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Uniform grid size for horizon `t_final` and step `dt`; `dt` must divide the horizon within 1e-9.
pub fn grid_steps(t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && t_final > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need T > 0 and dt > 0, got T = {t_final}, dt = {dt}"
        )));
    }
    let k = (t_final / dt).round();
    if (k * dt - t_final).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "dt = {dt} does not divide T = {t_final}"
        )));
    }
    Ok(k as usize)
}
