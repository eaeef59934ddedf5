//! Distributed feedback law built from local gradient terms.
//!
//! Agent `i` combines centroid tracking gradients, evaluated on its own
//! centroid estimate, with potential and relative-velocity gradients over
//! its incident edges. The same terms give an approximation of the costate,
//! from which the input follows as `u = -R^{-1} B^T lambda_hat`.

use nalgebra::{DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::cost::{chi_nonneg, CentroidTarget, CostWeights};
use crate::error::{Error, Result};
use crate::topology::FormationSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    pub kp_tr1: f64,
    pub kd_tr1: f64,
    pub kp_fo1: f64,
    pub kd_fo1: f64,
    pub kp_tr2: f64,
    pub kp_fo2: f64,
    /// Componentwise input bound (m/s^2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation: Option<f64>,
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.kp_tr1,
            self.kd_tr1,
            self.kp_fo1,
            self.kd_fo1,
            self.kp_tr2,
            self.kp_fo2,
        ];
        if all.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "controller gains must be nonnegative, got {all:?}"
            )));
        }
        if let Some(u) = self.saturation {
            if !(u > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "saturation bound must be positive, got {u}"
                )));
            }
        }
        Ok(())
    }

    /// Gains with the tracking terms switched off.
    pub fn formation_only(&self) -> Self {
        ControllerGains {
            kp_tr1: 0.0,
            kd_tr1: 0.0,
            kp_tr2: 0.0,
            ..*self
        }
    }

    pub fn zero() -> Self {
        ControllerGains {
            kp_tr1: 0.0,
            kd_tr1: 0.0,
            kp_fo1: 0.0,
            kd_fo1: 0.0,
            kp_tr2: 0.0,
            kp_fo2: 0.0,
            saturation: None,
        }
    }
}

/// State of one neighbor as seen over the connecting edge.
#[derive(Debug, Clone)]
pub struct NeighborState<'a> {
    pub edge: usize,
    pub p: DVectorView<'a, f64>,
    pub v: DVectorView<'a, f64>,
}

/// Everything agent `i` may use to compute its input.
#[derive(Debug, Clone)]
pub struct AgentView<'a> {
    pub i: usize,
    pub p: DVectorView<'a, f64>,
    pub v: DVectorView<'a, f64>,
    pub neighbors: Vec<NeighborState<'a>>,
    /// Agent `i`'s own estimate of the centroid position and velocity.
    pub pc_hat: DVector<f64>,
    pub vc_hat: DVector<f64>,
}

/// Gradient terms agent `i` evaluates locally, each an `M`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTerms {
    pub tr1: DVector<f64>,
    pub tr1_dot: DVector<f64>,
    pub fo1: DVector<f64>,
    /// Time derivative of `fo1` with negative `sigma'` identity terms dropped.
    pub fo1_dot_safe: DVector<f64>,
    pub tr2: DVector<f64>,
    pub fo2: DVector<f64>,
}

impl GradientTerms {
    pub fn zeros(dim: usize) -> Self {
        let z = DVector::zeros(dim);
        GradientTerms {
            tr1: z.clone(),
            tr1_dot: z.clone(),
            fo1: z.clone(),
            fo1_dot_safe: z.clone(),
            tr2: z.clone(),
            fo2: z,
        }
    }
}

pub fn gradient_terms(
    view: &AgentView,
    target: &CentroidTarget,
    spec: &FormationSpec,
    w: &CostWeights,
) -> GradientTerms {
    let dim = spec.dim();
    let inv_n = 1.0 / spec.n() as f64;
    let tr1 = w.q_c_total() * (&view.pc_hat - &target.p) * inv_n;
    let tr1_dot = w.q_c_total() * (&view.vc_hat - &target.v) * inv_n;
    let tr2 = w.q_cdot_total() * (&view.vc_hat - &target.v) * inv_n;

    let mut fo1 = DVector::zeros(dim);
    let mut fo1_dot_safe = DVector::zeros(dim);
    let mut fo2 = DVector::zeros(dim);
    for nb in &view.neighbors {
        let e = view.p - nb.p;
        let de = view.v - nb.v;
        let ev = spec.edge_params(nb.edge).eval_unchecked(e.norm_squared());
        fo1 += &e * (w.k_f * ev.d1);
        let radial = 2.0 * ev.d2 * e.dot(&de);
        fo1_dot_safe += (&e * radial + &de * (chi_nonneg(ev.d1) * ev.d1)) * w.k_f;
        fo2 += (&w.theta[nb.edge] * &de) * w.k_a;
    }
    GradientTerms {
        tr1,
        tr1_dot,
        fo1,
        fo1_dot_safe,
        tr2,
        fo2,
    }
}

/// Costate approximation blocks `(lambda_i, lambda_{i+n})` for one agent.
pub fn costate_blocks(t: &GradientTerms, g: &ControllerGains) -> (DVector<f64>, DVector<f64>) {
    let lp =
        &t.tr1 * g.kp_tr1 + &t.tr1_dot * g.kd_tr1 + &t.fo1 * g.kp_fo1 + &t.fo1_dot_safe * g.kd_fo1;
    let lv = &lp + &t.tr2 * g.kp_tr2 + &t.fo2 * g.kp_fo2;
    (lp, lv)
}

/// Unsaturated input of agent `i` and the gradient terms it was built from.
pub fn control_agent(
    view: &AgentView,
    target: &CentroidTarget,
    spec: &FormationSpec,
    w: &CostWeights,
    gains: &ControllerGains,
) -> (DVector<f64>, GradientTerms) {
    let terms = gradient_terms(view, target, spec, w);
    let (_, lv) = costate_blocks(&terms, gains);
    (-(w.r_inv(view.i) * lv), terms)
}

/// Stacks per-agent costate blocks into a `2N` vector laid out like the state.
pub fn costate_reconstruct(terms: &[GradientTerms], gains: &ControllerGains) -> DVector<f64> {
    let dim = terms.first().map(|t| t.tr1.len()).unwrap_or(0);
    let big = terms.len() * dim;
    let mut lam = DVector::zeros(2 * big);
    for (i, t) in terms.iter().enumerate() {
        let (lp, lv) = costate_blocks(t, gains);
        lam.rows_mut(i * dim, dim).copy_from(&lp);
        lam.rows_mut(big + i * dim, dim).copy_from(&lv);
    }
    lam
}

/// Input `-R^{-1} B^T lambda` for a stacked costate.
pub fn input_from_costate(lam: &DVector<f64>, w: &CostWeights) -> DVector<f64> {
    let dim = w.dim();
    let big = lam.len() / 2;
    let mut u = DVector::zeros(big);
    for i in 0..w.n() {
        let lv = lam.rows(big + i * dim, dim);
        u.rows_mut(i * dim, dim).copy_from(&(-(w.r_inv(i) * lv)));
    }
    u
}

/// Componentwise clamp to `[-bound, bound]`.
pub fn saturate(u: &DVector<f64>, bound: f64) -> DVector<f64> {
    u.map(|x| x.clamp(-bound, bound))
}

/// Sup-norm residuals of the costate approximation conditions at one time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostateResiduals {
    pub tr1: f64,
    pub fo1: f64,
    pub tr2: f64,
    pub fo2: f64,
}

/// Residuals of `grad + k_d grad'' + k_p grad'` (position terms) and
/// `grad + k_p grad'` (velocity terms) along logged gradient series, with
/// time derivatives taken by finite differences on the uniform grid.
///
/// `series[k][i]` holds agent `i`'s gradient terms at sample `k`.
pub fn costate_approx_residual(
    series: &[Vec<GradientTerms>],
    dt: f64,
    gains: &ControllerGains,
) -> Vec<CostateResiduals> {
    let len = series.len();
    if len < 3 {
        return vec![CostateResiduals::default(); len];
    }
    let idx = |k: usize| k.clamp(1, len - 2);
    let sup = |f: &dyn Fn(&GradientTerms) -> &DVector<f64>, k: usize, kd: f64, kp: f64| -> f64 {
        let c = idx(k);
        let mut worst: f64 = 0.0;
        for i in 0..series[k].len() {
            let g = f(&series[k][i]);
            let gm = f(&series[c - 1][i]);
            let g0 = f(&series[c][i]);
            let gp = f(&series[c + 1][i]);
            let first = (gp - gm) / (2.0 * dt);
            let second = (gp - g0 * 2.0 + gm) / (dt * dt);
            let r = g + second * kd + first * kp;
            worst = worst.max(r.amax());
        }
        worst
    };
    (0..len)
        .map(|k| CostateResiduals {
            tr1: sup(&|t| &t.tr1, k, gains.kd_tr1, gains.kp_tr1),
            fo1: sup(&|t| &t.fo1, k, gains.kd_fo1, gains.kp_fo1),
            tr2: sup(&|t| &t.tr2, k, 0.0, gains.kp_tr2),
            fo2: sup(&|t| &t.fo2, k, 0.0, gains.kp_fo2),
        })
        .collect()
}
