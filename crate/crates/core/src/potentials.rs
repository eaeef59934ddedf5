//! Distance-based edge potential.
//!
//! For an edge with desired distance `d` the potential is a function of the
//! squared distance `s`:
//!
//! ```text
//! sigma(s) = k_r (1 - s/d^2)^beta              0 <= s < d^2   (repulsive)
//! sigma(s) = k_a ((s/d^2)^alpha - 1)^beta      s >= d^2       (attractive)
//! ```
//!
//! It is nonnegative, vanishes only at `s = d^2` and is twice continuously
//! differentiable. With `beta == 2` the second derivative is continuous only
//! when `k_r == alpha^2 k_a`, which is enforced at construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BETA_TWO_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    /// Desired distance (m).
    pub d: f64,
    pub k_r: f64,
    pub k_a: f64,
    pub beta: f64,
    pub alpha: f64,
}

/// Value and first two derivatives of the potential with respect to `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl PotentialParams {
    pub fn new(d: f64, k_r: f64, k_a: f64, beta: f64, alpha: f64) -> Result<Self> {
        let p = PotentialParams {
            d,
            k_r,
            k_a,
            beta,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameter set used on every edge of the cube scenario, for a given distance.
    pub fn cube_defaults(d: f64) -> Self {
        PotentialParams {
            d,
            k_r: 250.0,
            k_a: 100.0,
            beta: 3.0,
            alpha: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.d.is_finite() && self.d > 0.0) {
            return bad(format!("desired distance must be positive, got {}", self.d));
        }
        if !(self.k_r.is_finite() && self.k_r >= 0.0) || !(self.k_a.is_finite() && self.k_a >= 0.0)
        {
            return bad(format!(
                "k_r and k_a must be nonnegative, got {} and {}",
                self.k_r, self.k_a
            ));
        }
        if !(self.beta.is_finite() && self.beta >= 2.0) {
            return bad(format!("beta must be at least 2, got {}", self.beta));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.beta == 2.0 {
            let required = self.alpha * self.alpha * self.k_a;
            let scale = required.abs().max(self.k_r.abs()).max(f64::MIN_POSITIVE);
            if (self.k_r - required).abs() > BETA_TWO_REL_TOL * scale {
                return bad(format!(
                    "beta = 2 requires k_r = alpha^2 k_a ({required}), got k_r = {}",
                    self.k_r
                ));
            }
        }
        Ok(())
    }

    /// Squared desired distance.
    pub fn d_sq(&self) -> f64 {
        self.d * self.d
    }

    pub fn sigma(&self, s: f64) -> Result<f64> {
        Ok(self.evaluate(s)?.value)
    }

    pub fn sigma_d1(&self, s: f64) -> Result<f64> {
        Ok(self.evaluate(s)?.d1)
    }

    pub fn sigma_d2(&self, s: f64) -> Result<f64> {
        Ok(self.evaluate(s)?.d2)
    }

    pub fn evaluate(&self, s: f64) -> Result<PotentialEval> {
        if s < 0.0 || s.is_nan() {
            return Err(Error::NegativeSquaredDistance(s));
        }
        Ok(self.eval_unchecked(s))
    }

    /// Evaluation for `s` already known to be a squared norm.
    pub(crate) fn eval_unchecked(&self, s: f64) -> PotentialEval {
        let d2 = self.d_sq();
        let x = s / d2;
        let beta = self.beta;
        if x < 1.0 {
            let g = 1.0 - x;
            PotentialEval {
                value: self.k_r * g.powf(beta),
                d1: -beta * self.k_r * g.powf(beta - 1.0) / d2,
                d2: beta * (beta - 1.0) * self.k_r * g.powf(beta - 2.0) / (d2 * d2),
            }
        } else {
            // attractive branch, also taken at s == d^2
            let alpha = self.alpha;
            let xa = x.powf(alpha);
            let g = xa - 1.0;
            let dg = alpha * x.powf(alpha - 1.0);
            let ddg = alpha * (alpha - 1.0) * x.powf(alpha - 2.0);
            PotentialEval {
                value: self.k_a * g.powf(beta),
                d1: self.k_a * beta * g.powf(beta - 1.0) * dg / d2,
                d2: self.k_a
                    * beta
                    * ((beta - 1.0) * g.powf(beta - 2.0) * dg * dg + g.powf(beta - 1.0) * ddg)
                    / (d2 * d2),
            }
        }
    }
}
