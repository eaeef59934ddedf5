//! Projection-operator Newton method for the formation-tracking problem.
//!
//! Each iteration linearizes the discretized objective around the current
//! feasible trajectory, solves the resulting time-varying LQ problem with a
//! discrete Riccati sweep, and takes an Armijo step along the solution
//! before projecting back onto the dynamics with a PD tracking loop.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{
    grad_input, hess_fo1, hess_fo2, hess_tracking_blocks, trapezoid_weight, Objective,
};
use crate::dynamics::{step_exact, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProntoConfig {
    /// Proportional gain of the projection loop (1/s^2).
    pub k_p: f64,
    /// Derivative gain of the projection loop (1/s).
    pub k_d: f64,
    pub max_iter: usize,
    /// Iteration stops once the descent direction norm drops to this value.
    pub descent_tol: f64,
    pub armijo_alpha: f64,
    pub armijo_beta: f64,
    #[serde(default = "default_backtracks")]
    pub max_backtracks: usize,
    /// Optional grid step for the optimizer, overriding the scenario step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

fn default_backtracks() -> usize {
    40
}

impl Default for ProntoConfig {
    fn default() -> Self {
        ProntoConfig::from_natural_frequency(3.0, 0.7)
    }
}

impl ProntoConfig {
    /// PD projection gains `k_p = w_n^2`, `k_d = 2 xi w_n` with the remaining defaults.
    pub fn from_natural_frequency(omega_n: f64, xi: f64) -> Self {
        ProntoConfig {
            k_p: omega_n * omega_n,
            k_d: 2.0 * xi * omega_n,
            max_iter: 80,
            descent_tol: 1e-6,
            armijo_alpha: 0.4,
            armijo_beta: 0.7,
            max_backtracks: default_backtracks(),
            dt: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.k_p > 0.0 && self.k_d > 0.0) {
            return bad(format!(
                "projection gains must be positive, got {} and {}",
                self.k_p, self.k_d
            ));
        }
        if self.max_iter < 1 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.armijo_alpha > 0.0 && self.armijo_alpha < 0.5) {
            return bad(format!(
                "armijo_alpha must lie in (0, 0.5), got {}",
                self.armijo_alpha
            ));
        }
        if !(self.armijo_beta > 0.0 && self.armijo_beta < 1.0) {
            return bad(format!(
                "armijo_beta must lie in (0, 1), got {}",
                self.armijo_beta
            ));
        }
        if !(self.descent_tol >= 0.0) {
            return bad(format!(
                "descent_tol must be nonnegative, got {}",
                self.descent_tol
            ));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return bad(format!("optimizer dt must be positive, got {dt}"));
            }
        }
        Ok(())
    }
}

/// Simulates the plant from `x0` while tracking the (possibly infeasible)
/// curve with the PD loop `u = mu + K (alpha - x)`.
pub fn project(curve: &Trajectory, x0: &DVector<f64>, cfg: &ProntoConfig) -> Trajectory {
    let big = x0.len() / 2;
    let steps = curve.steps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    for k in 0..steps {
        let x = &states[k];
        let alpha = &curve.states[k];
        let mut u = curve.inputs[k].clone();
        for c in 0..big {
            u[c] += cfg.k_p * (alpha[c] - x[c]) + cfg.k_d * (alpha[big + c] - x[big + c]);
        }
        let next = step_exact(x, &u, curve.dt);
        inputs.push(u);
        states.push(next);
    }
    let last = inputs
        .last()
        .cloned()
        .unwrap_or_else(|| DVector::zeros(big));
    inputs.push(last);
    Trajectory {
        dt: curve.dt,
        states,
        inputs,
    }
}

/// State and input perturbation curves solving the local LQ problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub z: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    /// Directional derivative of the objective along `(z, v)`.
    pub dtheta: f64,
    /// `sqrt(sum dt (|z|^2 + |v|^2))`.
    pub norm: f64,
}

/// Affine feedback `v_k = -gain_k z_k - feedforward_k` produced by the Riccati sweep.
#[derive(Debug, Clone)]
pub struct LqPolicy {
    pub gain: Vec<DMatrix<f64>>,
    pub feedforward: Vec<DVector<f64>>,
    /// Value function Hessian and gradient at the initial time.
    pub p0: DMatrix<f64>,
    pub r0: DVector<f64>,
}

fn finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Backward Riccati sweep for the discretized LQ subproblem.
///
/// Stage weights are the safe state Hessian scaled by the trapezoid weight
/// and `dt R` on the input; the terminal value function adds the terminal
/// cost. The exact zero-order-hold matrices `A_d = [[I, h I], [0, I]]` and
/// `B_d = [[h^2/2 I], [h I]]` are applied blockwise.
pub fn riccati_sweep(traj: &Trajectory, obj: &Objective) -> Result<LqPolicy> {
    let spec = obj.spec;
    let w = obj.weights;
    let big = spec.big_n();
    let steps = traj.steps();
    let h = traj.dt;
    let c = 0.5 * h * h;

    let (ht_p, ht_v) = hess_tracking_blocks(w);
    let hv = ht_v + hess_fo2(spec, w);
    let r_full = w.r_full();

    let qo_pos = |k: usize| -> DMatrix<f64> {
        let p = traj.states[k].rows(0, big).into_owned();
        &ht_p + hess_fo1(&p, spec, w, true)
    };

    // value function blocks
    let wk = trapezoid_weight(steps, steps, h) + 1.0;
    let mut p11 = qo_pos(steps) * wk;
    let mut p12 = DMatrix::<f64>::zeros(big, big);
    let mut p22 = &hv * wk;
    let mut r = obj.grad_state(&traj.states[steps], steps) * wk;
    if !finite(&p11) || r.iter().any(|x| !x.is_finite()) {
        return Err(Error::RiccatiBreakdown { index: steps });
    }

    let mut gain = vec![DMatrix::zeros(0, 0); steps];
    let mut feedforward = vec![DVector::zeros(0); steps];

    for k in (0..steps).rev() {
        let wk = trapezoid_weight(k, steps, h);
        let p21 = p12.transpose();
        let r1 = r.rows(0, big).into_owned();
        let r2 = r.rows(big, big).into_owned();

        // B^T P B, B^T P A, B^T r
        let x1 = &p11 * c + &p21 * h;
        let huu = &r_full * h + &x1 * c + (&p12 * c + &p22 * h) * h;
        let mut hux = DMatrix::zeros(big, 2 * big);
        hux.view_mut((0, 0), (big, big)).copy_from(&x1);
        hux.view_mut((0, big), (big, big))
            .copy_from(&(&x1 * h + &p12 * c + &p22 * h));
        let b = grad_input(&traj.inputs[k], w);
        let hu = &b * h + &r1 * c + &r2 * h;

        let chol = huu
            .clone()
            .cholesky()
            .ok_or(Error::RiccatiBreakdown { index: k })?;
        let kk = chol.solve(&hux);
        let kff = chol.solve(&hu);

        // A^T P A
        let a12 = &p11 * h + &p12;
        let a22 = &p11 * (h * h) + (&p12 + &p21) * h + &p22;
        let correction = hux.transpose() * &kk;
        let mut np11 = &p11 - correction.view((0, 0), (big, big)) + qo_pos(k) * wk;
        let mut np12 = a12 - correction.view((0, big), (big, big));
        let mut np22 = a22 - correction.view((big, big), (big, big)) + &hv * wk;
        symmetrize(&mut np11);
        symmetrize(&mut np22);

        let a = obj.grad_state(&traj.states[k], k);
        let mut nr = DVector::zeros(2 * big);
        let corr_r = hux.transpose() * &kff;
        for i in 0..big {
            nr[i] = r1[i] + wk * a[i] - corr_r[i];
            nr[big + i] = h * r1[i] + r2[i] + wk * a[big + i] - corr_r[big + i];
        }

        if !finite(&np11) || !finite(&np12) || !finite(&np22) || nr.iter().any(|x| !x.is_finite()) {
            return Err(Error::RiccatiBreakdown { index: k });
        }
        std::mem::swap(&mut p11, &mut np11);
        std::mem::swap(&mut p12, &mut np12);
        std::mem::swap(&mut p22, &mut np22);
        r = nr;
        gain[k] = kk;
        feedforward[k] = kff;
    }

    let mut p0 = DMatrix::zeros(2 * big, 2 * big);
    p0.view_mut((0, 0), (big, big)).copy_from(&p11);
    p0.view_mut((0, big), (big, big)).copy_from(&p12);
    p0.view_mut((big, 0), (big, big))
        .copy_from(&p12.transpose());
    p0.view_mut((big, big), (big, big)).copy_from(&p22);
    Ok(LqPolicy {
        gain,
        feedforward,
        p0,
        r0: r,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Newton-like descent direction at a feasible trajectory.
pub fn search_direction(traj: &Trajectory, obj: &Objective) -> Result<Direction> {
    let policy = riccati_sweep(traj, obj)?;
    let big = obj.spec.big_n();
    let steps = traj.steps();
    let dt = traj.dt;
    let mut z = Vec::with_capacity(steps + 1);
    let mut v = Vec::with_capacity(steps + 1);
    z.push(DVector::zeros(2 * big));
    for k in 0..steps {
        let vk = -(&policy.gain[k] * &z[k]) - &policy.feedforward[k];
        let next = step_exact(&z[k], &vk, dt);
        v.push(vk);
        z.push(next);
    }
    v.push(v.last().cloned().unwrap_or_else(|| DVector::zeros(big)));

    let mut dtheta = 0.0;
    let mut sq = 0.0;
    for k in 0..=steps {
        let a = obj.grad_state(&traj.states[k], k);
        dtheta +=
            (trapezoid_weight(k, steps, dt) + if k == steps { 1.0 } else { 0.0 }) * a.dot(&z[k]);
        if k < steps {
            dtheta += dt * grad_input(&traj.inputs[k], obj.weights).dot(&v[k]);
            sq += dt * (z[k].norm_squared() + v[k].norm_squared());
        }
    }
    Ok(Direction {
        z,
        v,
        dtheta,
        norm: sq.sqrt(),
    })
}

/// Backtracking step along a descent direction.
///
/// Returns the accepted step, the projected trajectory and its cost.
pub fn armijo_search(
    traj: &Trajectory,
    cost: f64,
    dir: &Direction,
    obj: &Objective,
    cfg: &ProntoConfig,
) -> Result<(f64, Trajectory, f64)> {
    let x0 = &traj.states[0];
    let mut gamma = 1.0;
    for _ in 0..=cfg.max_backtracks {
        let candidate = Trajectory {
            dt: traj.dt,
            states: traj
                .states
                .iter()
                .zip(&dir.z)
                .map(|(x, z)| x + z * gamma)
                .collect(),
            inputs: traj
                .inputs
                .iter()
                .zip(&dir.v)
                .map(|(u, v)| u + v * gamma)
                .collect(),
        };
        let projected = project(&candidate, x0, cfg);
        let new_cost = obj.cost(&projected)?;
        if new_cost.is_finite() && new_cost <= cost + cfg.armijo_alpha * gamma * dir.dtheta {
            return Ok((gamma, projected, new_cost));
        }
        gamma *= cfg.armijo_beta;
    }
    Err(Error::LineSearchFailed(cfg.max_backtracks))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Descent direction norm fell below the tolerance.
    Flat,
    MaxIterations,
}

/// One row of the optimizer log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Cost after the iteration's update (the initial cost for row 0).
    pub cost: f64,
    pub dtheta: f64,
    pub norm: f64,
    /// Accepted step, 0 when no step was taken.
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct ProntoReport {
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub trajectory: Trajectory,
    pub termination: Termination,
}

impl ProntoReport {
    pub fn costs(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.cost).collect()
    }

    pub fn final_cost(&self) -> f64 {
        self.history.last().map(|r| r.cost).unwrap_or(f64::NAN)
    }
}

/// Initial guess: hold `x0` with zero input, then project.
pub fn initial_guess(x0: &DVector<f64>, steps: usize, dt: f64, cfg: &ProntoConfig) -> Trajectory {
    let big = x0.len() / 2;
    let held = Trajectory {
        dt,
        states: vec![x0.clone(); steps + 1],
        inputs: vec![DVector::zeros(big); steps + 1],
    };
    project(&held, x0, cfg)
}

pub fn optimize(
    x0: &DVector<f64>,
    steps: usize,
    dt: f64,
    obj: &Objective,
    cfg: &ProntoConfig,
) -> Result<ProntoReport> {
    cfg.validate()?;
    if obj.reference.len() != steps + 1 {
        return Err(Error::InvalidParameter(format!(
            "reference has {} samples, expected {}",
            obj.reference.len(),
            steps + 1
        )));
    }
    let traj = initial_guess(x0, steps, dt, cfg);
    optimize_from(traj, obj, cfg)
}

/// Runs the iteration from a feasible starting trajectory.
pub fn optimize_from(
    mut traj: Trajectory,
    obj: &Objective,
    cfg: &ProntoConfig,
) -> Result<ProntoReport> {
    cfg.validate()?;
    let mut cost = obj.cost(&traj)?;
    let mut history = vec![IterationRecord {
        iter: 0,
        cost,
        dtheta: 0.0,
        norm: 0.0,
        gamma: 0.0,
    }];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    for iter in 1..=cfg.max_iter {
        iterations = iter;
        let dir = search_direction(&traj, obj)?;
        debug!(
            "iteration {iter}: cost {cost}, dtheta {}, norm {}",
            dir.dtheta, dir.norm
        );
        if dir.norm <= cfg.descent_tol || dir.dtheta >= 0.0 {
            history.push(IterationRecord {
                iter,
                cost,
                dtheta: dir.dtheta,
                norm: dir.norm,
                gamma: 0.0,
            });
            termination = Termination::Flat;
            break;
        }
        let (gamma, next, next_cost) = armijo_search(&traj, cost, &dir, obj, cfg)?;
        traj = next;
        cost = next_cost;
        history.push(IterationRecord {
            iter,
            cost,
            dtheta: dir.dtheta,
            norm: dir.norm,
            gamma,
        });
    }
    info!("optimizer stopped after {iterations} iterations ({termination:?}), cost {cost}");
    Ok(ProntoReport {
        iterations,
        history,
        trajectory: traj,
        termination,
    })
}
