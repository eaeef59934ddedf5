//! Independent oracles shared by the integration tests.
//!
//! Everything here is written from the problem statement, not from the
//! library: literal double sums over neighbor lists, textbook finite
//! differences and a dense discrete-time LQR solve.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Edge potential written out from its two branches.
#[derive(Debug, Clone, Copy)]
pub struct Potential {
    pub d: f64,
    pub k_r: f64,
    pub k_a: f64,
    pub beta: f64,
    pub alpha: f64,
}

impl Potential {
    /// Defined for every real `s`; the repulsive branch extends below zero
    /// so central differences can be taken at `s = 0`.
    pub fn value(&self, s: f64) -> f64 {
        // offset from the junction, formed without cancellation
        let r = (s - self.d * self.d) / (self.d * self.d);
        if r < 0.0 {
            self.k_r * (-r).powf(self.beta)
        } else {
            self.k_a * (self.alpha * r.ln_1p()).exp_m1().powf(self.beta)
        }
    }
}

/// One undirected edge of a formation with its potential and velocity weight.
#[derive(Debug, Clone)]
pub struct OracleEdge {
    pub i: usize,
    pub j: usize,
    pub pot: Potential,
    pub theta: DMatrix<f64>,
}

/// Formation seen from the agents: for each agent, the list of
/// `(neighbor, edge)` pairs.
pub struct OracleFormation {
    pub n: usize,
    pub dim: usize,
    pub edges: Vec<OracleEdge>,
    pub adjacency: Vec<Vec<(usize, usize)>>,
}

impl OracleFormation {
    pub fn new(n: usize, dim: usize, edges: Vec<OracleEdge>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for (e, ed) in edges.iter().enumerate() {
            adjacency[ed.i].push((ed.j, e));
            adjacency[ed.j].push((ed.i, e));
        }
        OracleFormation {
            n,
            dim,
            edges,
            adjacency,
        }
    }

    fn block(&self, z: &DVector<f64>, i: usize) -> DVector<f64> {
        z.rows(i * self.dim, self.dim).into_owned()
    }

    /// `(k_F / 4) sum_i sum_{j in N_i} sigma(|p_i - p_j|^2)`.
    pub fn fo1(&self, p: &DVector<f64>, k_f: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            for &(j, e) in &self.adjacency[i] {
                let s = (self.block(p, i) - self.block(p, j)).norm_squared();
                total += self.edges[e].pot.value(s);
            }
        }
        0.25 * k_f * total
    }

    /// `(k_A / 4) sum_i sum_{j in N_i} |v_i - v_j|^2_Theta`.
    pub fn fo2(&self, v: &DVector<f64>, k_a: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            for &(j, e) in &self.adjacency[i] {
                let dv = self.block(v, i) - self.block(v, j);
                total += (dv.transpose() * &self.edges[e].theta * &dv)[0];
            }
        }
        0.25 * k_a * total
    }

    /// `(1/2) sum_i |x_c - x_des|^2_{Q_i}` with per-agent position and velocity weights.
    pub fn tracking(
        &self,
        x: &DVector<f64>,
        p_des: &DVector<f64>,
        v_des: &DVector<f64>,
        q_c: &[DMatrix<f64>],
        q_cdot: &[DMatrix<f64>],
    ) -> f64 {
        let big = self.n * self.dim;
        let mut pc = DVector::zeros(self.dim);
        let mut vc = DVector::zeros(self.dim);
        for i in 0..self.n {
            pc += x.rows(i * self.dim, self.dim);
            vc += x.rows(big + i * self.dim, self.dim);
        }
        pc /= self.n as f64;
        vc /= self.n as f64;
        let ep = pc - p_des;
        let ev = vc - v_des;
        let mut total = 0.0;
        for i in 0..self.n {
            total += (ep.transpose() * &q_c[i] * &ep)[0] + (ev.transpose() * &q_cdot[i] * &ev)[0];
        }
        0.5 * total
    }

    /// `(1/2) sum_i u_i^T R_i u_i`.
    pub fn input(&self, u: &DVector<f64>, r: &[DMatrix<f64>]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let ui = self.block(u, i);
            total += (ui.transpose() * &r[i] * &ui)[0];
        }
        0.5 * total
    }
}

/// Central-difference gradient with a per-coordinate step `h * max(1, |z_k|)`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, z: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut g = DVector::zeros(z.len());
    let mut zp = z.clone();
    for k in 0..z.len() {
        let step = h * z[k].abs().max(1.0);
        zp[k] = z[k] + step;
        let fp = f(&zp);
        zp[k] = z[k] - step;
        let fm = f(&zp);
        zp[k] = z[k];
        g[k] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Central-difference Hessian from the four-point mixed stencil.
pub fn fd_hessian(f: impl Fn(&DVector<f64>) -> f64, z: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = z.len();
    let mut hm = DMatrix::zeros(n, n);
    let mut zp = z.clone();
    let steps: Vec<f64> = z.iter().map(|v| h * v.abs().max(1.0)).collect();
    for a in 0..n {
        for b in a..n {
            let mut eval = |sa: f64, sb: f64| {
                zp[a] += sa * steps[a];
                zp[b] += sb * steps[b];
                let v = f(&zp);
                zp[a] = z[a];
                zp[b] = z[b];
                v
            };
            let val = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * steps[a] * steps[b]);
            hm[(a, b)] = val;
            hm[(b, a)] = val;
        }
    }
    hm
}

/// `|a - b|_inf / |b|_inf`.
pub fn rel_err_inf(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    diff / scale
}

/// Discrete-time LQ tracking problem
///
/// `min sum_k c_k (1/2)|C x_k - r_k|^2_Q + sum_{k<K} dt (1/2) u_k^T R u_k`
/// subject to `x_{k+1} = A x_k + B u_k`, solved by a backward Riccati
/// recursion on an affine value function.
pub struct LqTracking {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub dt: f64,
    /// Weight `c_k` of the output cost at each sample `0..=K`.
    pub sample_weights: Vec<f64>,
    pub reference: Vec<DVector<f64>>,
}

impl LqTracking {
    /// Optimal inputs `u_0..u_{K-1}` and states `x_0..x_K`.
    pub fn solve(&self, x0: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let k_final = self.sample_weights.len() - 1;
        let ctq = self.c.transpose() * &self.q;
        let w = |k: usize| &ctq * &self.c * self.sample_weights[k];
        let g = |k: usize| &ctq * &self.reference[k] * self.sample_weights[k];
        // V_k(x) = 1/2 x^T P x + s^T x + const
        let mut p = w(k_final);
        let mut s = -g(k_final);
        let mut gains = vec![DMatrix::zeros(0, 0); k_final];
        let mut ff = vec![DVector::zeros(0); k_final];
        let r_dt = &self.r * self.dt;
        for k in (0..k_final).rev() {
            let bt = self.b.transpose();
            let h = &r_dt + &bt * &p * &self.b;
            let h_inv = h.try_inverse().expect("input Hessian is positive definite");
            let kx = &h_inv * &bt * &p * &self.a;
            let kf = &h_inv * &bt * &s;
            let at = self.a.transpose();
            let closed = &self.a - &self.b * &kx;
            let p_next = w(k) + &at * &p * &closed;
            let s_next = -g(k) + closed.transpose() * &s;
            gains[k] = kx;
            ff[k] = kf;
            p = (&p_next + p_next.transpose()) * 0.5;
            s = s_next;
        }
        let mut xs = vec![x0.clone()];
        let mut us = Vec::with_capacity(k_final);
        for k in 0..k_final {
            let u = -(&gains[k] * &xs[k]) - &ff[k];
            xs.push(&self.a * &xs[k] + &self.b * &u);
            us.push(u);
        }
        (us, xs)
    }
}
