//! Formation-tracking cost: centroid tracking, input energy, distance
//! potential and relative-velocity terms, with analytic derivatives.
//!
//! The stage cost on states is `l_st = l_tr + l_fo1 + l_fo2`; the input term
//! is `l_in`. The terminal cost equals `l_st` at the final time.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{centroid, Trajectory};
use crate::error::{Error, Result};
use crate::topology::FormationSpec;

/// Desired centroid position and velocity at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTarget {
    pub p: DVector<f64>,
    pub v: DVector<f64>,
}

impl CentroidTarget {
    pub fn zero(dim: usize) -> Self {
        CentroidTarget {
            p: DVector::zeros(dim),
            v: DVector::zeros(dim),
        }
    }
}

/// Desired centroid sampled on the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub samples: Vec<CentroidTarget>,
}

impl ReferencePath {
    pub fn constant(target: CentroidTarget, len: usize) -> Self {
        ReferencePath {
            samples: vec![target; len],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn at(&self, k: usize) -> &CentroidTarget {
        &self.samples[k]
    }
}

/// Weights of the cost functional.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q_c: Vec<DMatrix<f64>>,
    pub q_cdot: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub k_f: f64,
    pub k_a: f64,
    /// One matrix per edge, aligned with the graph's edge list.
    pub theta: Vec<DMatrix<f64>>,
    q_c_total: DMatrix<f64>,
    q_cdot_total: DMatrix<f64>,
    r_inv: Vec<DMatrix<f64>>,
}

const PSD_TOL: f64 = 1e-12;

fn check_square(name: &str, m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.shape() != (dim, dim) {
        return Err(Error::InvalidParameter(format!(
            "{name} must be {dim}x{dim}, got {:?}",
            m.shape()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{name} has non-finite entries"
        )));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidParameter(format!("{name} must be symmetric")));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

impl CostWeights {
    pub fn new(
        q_c: Vec<DMatrix<f64>>,
        q_cdot: Vec<DMatrix<f64>>,
        r: Vec<DMatrix<f64>>,
        k_f: f64,
        k_a: f64,
        theta: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = r.len();
        if n == 0 || q_c.len() != n || q_cdot.len() != n {
            return Err(Error::InvalidParameter(format!(
                "per-agent weight counts differ: q_c {}, q_cdot {}, r {}",
                q_c.len(),
                q_cdot.len(),
                n
            )));
        }
        let dim = r[0].nrows();
        for (i, ((qc, qd), ri)) in q_c.iter().zip(&q_cdot).zip(&r).enumerate() {
            check_square(&format!("Q_c[{i}]"), qc, dim)?;
            check_square(&format!("Q_cdot[{i}]"), qd, dim)?;
            check_square(&format!("R[{i}]"), ri, dim)?;
            if min_eigenvalue(qc) < -PSD_TOL || min_eigenvalue(qd) < -PSD_TOL {
                return Err(Error::InvalidParameter(format!(
                    "tracking weights of agent {i} are not PSD"
                )));
            }
            if min_eigenvalue(ri) <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "R[{i}] is not positive definite"
                )));
            }
        }
        for (e, th) in theta.iter().enumerate() {
            check_square(&format!("Theta[{e}]"), th, dim)?;
            if min_eigenvalue(th) < -PSD_TOL {
                return Err(Error::InvalidParameter(format!("Theta[{e}] is not PSD")));
            }
        }
        if !(k_f.is_finite() && k_f >= 0.0 && k_a.is_finite() && k_a >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "k_F and k_A must be nonnegative, got {k_f}, {k_a}"
            )));
        }
        let q_c_total = q_c.iter().fold(DMatrix::zeros(dim, dim), |acc, m| acc + m);
        let q_cdot_total = q_cdot
            .iter()
            .fold(DMatrix::zeros(dim, dim), |acc, m| acc + m);
        let r_inv = r
            .iter()
            .map(|m| {
                m.clone()
                    .cholesky()
                    .expect("checked positive definite")
                    .inverse()
            })
            .collect();
        Ok(CostWeights {
            q_c,
            q_cdot,
            r,
            k_f,
            k_a,
            theta,
            q_c_total,
            q_cdot_total,
            r_inv,
        })
    }

    /// Identical scalar weights on every agent and identity edge weights.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        n: usize,
        dim: usize,
        num_edges: usize,
        q_p: f64,
        q_d: f64,
        r: f64,
        k_f: f64,
        k_a: f64,
    ) -> Result<Self> {
        let eye = DMatrix::<f64>::identity(dim, dim);
        CostWeights::new(
            vec![&eye * q_p; n],
            vec![&eye * q_d; n],
            vec![&eye * r; n],
            k_f,
            k_a,
            vec![eye.clone(); num_edges],
        )
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn dim(&self) -> usize {
        self.r[0].nrows()
    }

    pub fn q_c_total(&self) -> &DMatrix<f64> {
        &self.q_c_total
    }

    pub fn q_cdot_total(&self) -> &DMatrix<f64> {
        &self.q_cdot_total
    }

    pub fn r_inv(&self, i: usize) -> &DMatrix<f64> {
        &self.r_inv[i]
    }

    /// Block-diagonal input weight.
    pub fn r_full(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let big = self.n() * dim;
        let mut out = DMatrix::zeros(big, big);
        for (i, ri) in self.r.iter().enumerate() {
            out.view_mut((i * dim, i * dim), (dim, dim)).copy_from(ri);
        }
        out
    }

    /// Whether every input weight is the same multiple of the identity.
    pub fn scalar_r(&self) -> Option<f64> {
        let dim = self.dim();
        let c = self.r[0][(0, 0)];
        let eye = DMatrix::<f64>::identity(dim, dim) * c;
        self.r.iter().all(|m| *m == eye).then_some(c)
    }

    pub fn check_against(&self, spec: &FormationSpec) -> Result<()> {
        if self.n() != spec.n()
            || self.dim() != spec.dim()
            || self.theta.len() != spec.graph().num_edges()
        {
            return Err(Error::InvalidParameter(format!(
                "weights sized for n = {}, M = {}, {} edges do not match the formation (n = {}, M = {}, {} edges)",
                self.n(),
                self.dim(),
                self.theta.len(),
                spec.n(),
                spec.dim(),
                spec.graph().num_edges()
            )));
        }
        Ok(())
    }
}

fn block(x: &DVector<f64>, i: usize, dim: usize) -> DVector<f64> {
    x.rows(i * dim, dim).into_owned()
}

/// Centroid error `(p_c - p_des, v_c - v_des)`.
pub fn centroid_error(
    x: &DVector<f64>,
    target: &CentroidTarget,
    n: usize,
    dim: usize,
) -> (DVector<f64>, DVector<f64>) {
    let (pc, vc) = centroid(x, n, dim);
    (pc - &target.p, vc - &target.v)
}

pub fn cost_tracking(x: &DVector<f64>, target: &CentroidTarget, w: &CostWeights) -> f64 {
    let (ep, ev) = centroid_error(x, target, w.n(), w.dim());
    0.5 * (ep.dot(&(w.q_c_total() * &ep)) + ev.dot(&(w.q_cdot_total() * &ev)))
}

pub fn cost_input(u: &DVector<f64>, w: &CostWeights) -> f64 {
    let dim = w.dim();
    (0..w.n())
        .map(|i| {
            let ui = block(u, i, dim);
            0.5 * ui.dot(&(&w.r[i] * &ui))
        })
        .sum()
}

/// Distance-potential term over stacked positions.
pub fn cost_fo1(p: &DVector<f64>, spec: &FormationSpec, w: &CostWeights) -> Result<f64> {
    let dim = spec.dim();
    let g = spec.graph();
    let mut total = 0.0;
    // double sum over ordered neighbor pairs, each edge visited twice
    for i in 0..g.n() {
        for &(j, e) in g.incident(i) {
            let s = (block(p, i, dim) - block(p, j, dim)).norm_squared();
            total += spec.edge_params(e).sigma(s)?;
        }
    }
    Ok(0.25 * w.k_f * total)
}

/// Relative-velocity term over stacked velocities.
pub fn cost_fo2(v: &DVector<f64>, spec: &FormationSpec, w: &CostWeights) -> f64 {
    let dim = spec.dim();
    let g = spec.graph();
    let mut total = 0.0;
    for i in 0..g.n() {
        for &(j, e) in g.incident(i) {
            let de = block(v, i, dim) - block(v, j, dim);
            total += de.dot(&(&w.theta[e] * &de));
        }
    }
    0.25 * w.k_a * total
}

/// Breakdown of the instantaneous cost at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostTerms {
    pub tr: f64,
    pub fo1: f64,
    pub fo2: f64,
    pub input: f64,
}

impl CostTerms {
    pub fn state(&self) -> f64 {
        self.tr + self.fo1 + self.fo2
    }

    pub fn formation(&self) -> f64 {
        self.fo1 + self.fo2
    }
}

pub fn cost_terms(
    x: &DVector<f64>,
    u: &DVector<f64>,
    target: &CentroidTarget,
    spec: &FormationSpec,
    w: &CostWeights,
) -> Result<CostTerms> {
    let big = spec.big_n();
    Ok(CostTerms {
        tr: cost_tracking(x, target, w),
        fo1: cost_fo1(&x.rows(0, big).into_owned(), spec, w)?,
        fo2: cost_fo2(&x.rows(big, big).into_owned(), spec, w),
        input: cost_input(u, w),
    })
}

/// State part of the stage cost, also used as the terminal cost.
pub fn stage_state_cost(
    x: &DVector<f64>,
    target: &CentroidTarget,
    spec: &FormationSpec,
    w: &CostWeights,
) -> Result<f64> {
    let big = spec.big_n();
    Ok(cost_tracking(x, target, w)
        + cost_fo1(&x.rows(0, big).into_owned(), spec, w)?
        + cost_fo2(&x.rows(big, big).into_owned(), spec, w))
}

/// Quadrature weight of sample `k` out of `steps + 1` for the state cost.
pub fn trapezoid_weight(k: usize, steps: usize, dt: f64) -> f64 {
    if k == 0 || k == steps {
        0.5 * dt
    } else {
        dt
    }
}

/// Discretized objective of a sampled trajectory.
///
/// The state cost is integrated with the trapezoidal rule. The input cost
/// is integrated exactly for the held input, i.e. `dt * l_in(u_k)` on each
/// interval; the final held input sample does not contribute. The terminal
/// cost is the state cost at the last sample.
pub fn cost_total(
    traj: &Trajectory,
    reference: &ReferencePath,
    spec: &FormationSpec,
    w: &CostWeights,
) -> Result<f64> {
    let steps = traj.steps();
    if reference.len() != traj.states.len() {
        return Err(Error::InvalidParameter(format!(
            "reference has {} samples, trajectory has {}",
            reference.len(),
            traj.states.len()
        )));
    }
    let mut total = 0.0;
    for k in 0..=steps {
        let ls = stage_state_cost(&traj.states[k], reference.at(k), spec, w)?;
        total += trapezoid_weight(k, steps, traj.dt) * ls;
        if k < steps {
            total += traj.dt * cost_input(&traj.inputs[k], w);
        }
    }
    total += stage_state_cost(&traj.states[steps], reference.at(steps), spec, w)?;
    Ok(total)
}

/// Gradient of the state cost with respect to `x = [p; v]`.
pub fn grad_state(
    x: &DVector<f64>,
    target: &CentroidTarget,
    spec: &FormationSpec,
    w: &CostWeights,
) -> DVector<f64> {
    let n = spec.n();
    let dim = spec.dim();
    let big = spec.big_n();
    let (ep, ev) = centroid_error(x, target, n, dim);
    let gp = w.q_c_total() * ep / n as f64;
    let gv = w.q_cdot_total() * ev / n as f64;

    let mut out = DVector::zeros(2 * big);
    for i in 0..n {
        out.rows_mut(i * dim, dim).copy_from(&gp);
        out.rows_mut(big + i * dim, dim).copy_from(&gv);
    }
    let g = spec.graph();
    for (e, &(i, j)) in g.edges().iter().enumerate() {
        let eij = x.rows(i * dim, dim) - x.rows(j * dim, dim);
        let d1 = spec.edge_params(e).eval_unchecked(eij.norm_squared()).d1;
        let f = w.k_f * d1 * eij;
        {
            let mut r = out.rows_mut(i * dim, dim);
            r += &f;
        }
        {
            let mut r = out.rows_mut(j * dim, dim);
            r -= &f;
        }

        let deij = x.rows(big + i * dim, dim) - x.rows(big + j * dim, dim);
        let h = w.k_a * (&w.theta[e] * deij);
        {
            let mut r = out.rows_mut(big + i * dim, dim);
            r += &h;
        }
        {
            let mut r = out.rows_mut(big + j * dim, dim);
            r -= &h;
        }
    }
    out
}

pub fn grad_input(u: &DVector<f64>, w: &CostWeights) -> DVector<f64> {
    let dim = w.dim();
    let mut out = DVector::zeros(u.len());
    for i in 0..w.n() {
        out.rows_mut(i * dim, dim)
            .copy_from(&(&w.r[i] * u.rows(i * dim, dim)));
    }
    out
}

/// Returns 0 for negative arguments and 1 otherwise.
pub fn chi_nonneg(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        1.0
    }
}

/// Hessian of the distance-potential term with respect to stacked positions.
///
/// With `safe` set, the `sigma'` identity contribution of every edge with
/// negative `sigma'` is dropped, which keeps the matrix positive semidefinite.
pub fn hess_fo1(
    p: &DVector<f64>,
    spec: &FormationSpec,
    w: &CostWeights,
    safe: bool,
) -> DMatrix<f64> {
    let dim = spec.dim();
    let big = spec.big_n();
    let mut h = DMatrix::zeros(big, big);
    for (e, &(i, j)) in spec.graph().edges().iter().enumerate() {
        let eij = p.rows(i * dim, dim) - p.rows(j * dim, dim);
        let ev = spec.edge_params(e).eval_unchecked(eij.norm_squared());
        let iso = if safe {
            chi_nonneg(ev.d1) * ev.d1
        } else {
            ev.d1
        };
        // block of k_F (2 sigma'' e e^T + sigma' I)
        let mut blk = (2.0 * ev.d2) * (&eij * eij.transpose());
        for c in 0..dim {
            blk[(c, c)] += iso;
        }
        blk *= w.k_f;
        add_edge_block(&mut h, &blk, i, j, dim);
    }
    h
}

fn add_edge_block(h: &mut DMatrix<f64>, blk: &DMatrix<f64>, i: usize, j: usize, dim: usize) {
    for r in 0..dim {
        for c in 0..dim {
            let b = blk[(r, c)];
            h[(i * dim + r, i * dim + c)] += b;
            h[(j * dim + r, j * dim + c)] += b;
            h[(i * dim + r, j * dim + c)] -= b;
            h[(j * dim + r, i * dim + c)] -= b;
        }
    }
}

/// Hessian of the relative-velocity term; constant in the state.
pub fn hess_fo2(spec: &FormationSpec, w: &CostWeights) -> DMatrix<f64> {
    let dim = spec.dim();
    let big = spec.big_n();
    let mut h = DMatrix::zeros(big, big);
    for (e, &(i, j)) in spec.graph().edges().iter().enumerate() {
        let blk = w.k_a * &w.theta[e];
        add_edge_block(&mut h, &blk, i, j, dim);
    }
    h
}

/// Hessian of the tracking term, `C^T Q C`, split into its position and velocity blocks.
pub fn hess_tracking_blocks(w: &CostWeights) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = w.n();
    let dim = w.dim();
    let big = n * dim;
    let scale = 1.0 / (n * n) as f64;
    let qp = w.q_c_total() * scale;
    let qv = w.q_cdot_total() * scale;
    let mut hp = DMatrix::zeros(big, big);
    let mut hv = DMatrix::zeros(big, big);
    for i in 0..n {
        for j in 0..n {
            hp.view_mut((i * dim, j * dim), (dim, dim)).copy_from(&qp);
            hv.view_mut((i * dim, j * dim), (dim, dim)).copy_from(&qv);
        }
    }
    (hp, hv)
}

/// Position and velocity blocks of the state-cost Hessian (the cross blocks are zero).
pub fn hess_state_blocks(
    x: &DVector<f64>,
    spec: &FormationSpec,
    w: &CostWeights,
    safe: bool,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let big = spec.big_n();
    let (hp, hv) = hess_tracking_blocks(w);
    (
        hp + hess_fo1(&x.rows(0, big).into_owned(), spec, w, safe),
        hv + hess_fo2(spec, w),
    )
}

/// Full `2N x 2N` state-cost Hessian.
pub fn hess_state(
    x: &DVector<f64>,
    spec: &FormationSpec,
    w: &CostWeights,
    safe: bool,
) -> DMatrix<f64> {
    let big = spec.big_n();
    let (hp, hv) = hess_state_blocks(x, spec, w, safe);
    let mut h = DMatrix::zeros(2 * big, 2 * big);
    h.view_mut((0, 0), (big, big)).copy_from(&hp);
    h.view_mut((big, big), (big, big)).copy_from(&hv);
    h
}

/// Derivative data of the local quadratic model at one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LqQuantities {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub qo: DMatrix<f64>,
    pub so: DMatrix<f64>,
    pub ro: DMatrix<f64>,
}

/// Gradients and safe Hessians at one sample. At the final sample the same
/// formulas give the terminal gradient and Hessian, since the terminal cost
/// equals the state cost.
pub fn lq_quantities(
    x: &DVector<f64>,
    u: &DVector<f64>,
    target: &CentroidTarget,
    spec: &FormationSpec,
    w: &CostWeights,
) -> LqQuantities {
    let big = spec.big_n();
    LqQuantities {
        a: grad_state(x, target, spec, w),
        b: grad_input(u, w),
        qo: hess_state(x, spec, w, true),
        so: DMatrix::zeros(2 * big, big),
        ro: w.r_full(),
    }
}

/// Formation, weights and reference bundled as the objective of the optimal control problem.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub spec: &'a FormationSpec,
    pub weights: &'a CostWeights,
    pub reference: &'a ReferencePath,
}

impl<'a> Objective<'a> {
    pub fn new(
        spec: &'a FormationSpec,
        weights: &'a CostWeights,
        reference: &'a ReferencePath,
    ) -> Result<Self> {
        weights.check_against(spec)?;
        Ok(Objective {
            spec,
            weights,
            reference,
        })
    }

    pub fn cost(&self, traj: &Trajectory) -> Result<f64> {
        cost_total(traj, self.reference, self.spec, self.weights)
    }

    pub fn state_cost(&self, x: &DVector<f64>, k: usize) -> Result<f64> {
        stage_state_cost(x, self.reference.at(k), self.spec, self.weights)
    }

    pub fn grad_state(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        grad_state(x, self.reference.at(k), self.spec, self.weights)
    }

    pub fn terms(&self, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Result<CostTerms> {
        cost_terms(x, u, self.reference.at(k), self.spec, self.weights)
    }
}
