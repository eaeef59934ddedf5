//! Necessary and sufficient optimality diagnostics: Hamiltonian, costate
//! integration, input stationarity and curvature of the state cost.

use nalgebra::DVector;

use crate::cost::{cost_input, grad_input, hess_state_blocks, CostWeights, Objective};
use crate::dynamics::Trajectory;
use crate::error::Result;
use crate::topology::FormationSpec;

/// Curvature below this value counts as negative in the sufficiency check.
pub const SUFFICIENCY_TOL: f64 = -1e-9;

/// Costate samples on the trajectory grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateCurve {
    pub lambda: Vec<DVector<f64>>,
}

/// `lambda^T (A x + B u) + l_st(x) + l_in(u)` at sample `k`.
pub fn hamiltonian(
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    u: &DVector<f64>,
    k: usize,
    obj: &Objective,
) -> Result<f64> {
    let big = u.len();
    let mut flow = 0.0;
    for i in 0..big {
        flow += lambda[i] * x[big + i] + lambda[big + i] * u[i];
    }
    Ok(flow + obj.state_cost(x, k)? + cost_input(u, obj.weights))
}

/// `A^T lambda + g` for the double integrator: the velocity block receives the position block.
fn adjoint_rhs(lambda: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    let big = lambda.len() / 2;
    let mut out = g.clone();
    for i in 0..big {
        out[big + i] += lambda[i];
    }
    out
}

/// Integrates `-lambda' = A^T lambda + f(t)` backward from `terminal`, with the
/// forcing `f` sampled on the grid and interpolated linearly in between.
pub fn integrate_adjoint(
    terminal: &DVector<f64>,
    forcing: &[DVector<f64>],
    dt: f64,
) -> Vec<DVector<f64>> {
    let steps = forcing.len() - 1;
    let mut lambda = vec![DVector::zeros(terminal.len()); steps + 1];
    lambda[steps] = terminal.clone();
    for k in (0..steps).rev() {
        // march in reversed time s = t_{k+1} - t
        let g0 = &forcing[k + 1];
        let g1 = &forcing[k];
        let gmid = (g0 + g1) * 0.5;
        let y = &lambda[k + 1];
        let k1 = adjoint_rhs(y, g0);
        let k2 = adjoint_rhs(&(y + &k1 * (0.5 * dt)), &gmid);
        let k3 = adjoint_rhs(&(y + &k2 * (0.5 * dt)), &gmid);
        let k4 = adjoint_rhs(&(y + &k3 * dt), g1);
        lambda[k] = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    lambda
}

/// Costate along a trajectory, ending at the terminal-cost gradient.
pub fn costate_backward(traj: &Trajectory, obj: &Objective) -> CostateCurve {
    let forcing: Vec<_> = traj
        .states
        .iter()
        .enumerate()
        .map(|(k, x)| obj.grad_state(x, k))
        .collect();
    let terminal = forcing[traj.steps()].clone();
    CostateCurve {
        lambda: integrate_adjoint(&terminal, &forcing, traj.dt),
    }
}

/// Per-sample stationarity residual `|R u + B^T lambda|_inf`.
///
/// The input is held on each interval, so the residual of interval `k`
/// uses the interval mean of the costate, `(lambda_k + lambda_{k+1}) / 2`.
/// The final sample repeats the last interval.
pub fn stationarity_residual(
    traj: &Trajectory,
    costate: &CostateCurve,
    w: &CostWeights,
) -> Vec<f64> {
    let steps = traj.steps();
    let big = traj.inputs[0].len();
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        let ru = grad_input(&traj.inputs[k], w);
        let lv_mean =
            (costate.lambda[k].rows(big, big) + costate.lambda[k + 1].rows(big, big)) * 0.5;
        out.push((ru + lv_mean).amax());
    }
    let last = out.last().copied().unwrap_or(0.0);
    out.push(last);
    out
}

/// Smallest eigenvalue of the exact state-cost Hessian at every sample, and
/// whether it is nonnegative within [`SUFFICIENCY_TOL`].
pub fn sufficiency_check(
    traj: &Trajectory,
    spec: &FormationSpec,
    w: &CostWeights,
) -> Vec<(f64, bool)> {
    let velocity_min = {
        let (_, hv) = hess_state_blocks(&traj.states[0], spec, w, false);
        hv.symmetric_eigen().eigenvalues.min()
    };
    traj.states
        .iter()
        .map(|x| {
            let (hp, _) = hess_state_blocks(x, spec, w, false);
            let m = hp.symmetric_eigen().eigenvalues.min().min(velocity_min);
            (m, m >= SUFFICIENCY_TOL)
        })
        .collect()
}

/// Verification table row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyRow {
    pub t: f64,
    pub residual: f64,
    pub min_eig: f64,
    pub sufficient: bool,
}

pub fn verify(traj: &Trajectory, obj: &Objective) -> Vec<VerifyRow> {
    let lam = costate_backward(traj, obj);
    let res = stationarity_residual(traj, &lam, obj.weights);
    let suff = sufficiency_check(traj, obj.spec, obj.weights);
    res.iter()
        .zip(&suff)
        .enumerate()
        .map(|(k, (&residual, &(min_eig, sufficient)))| VerifyRow {
            t: traj.time(k),
            residual,
            min_eig,
            sufficient,
        })
        .collect()
}
