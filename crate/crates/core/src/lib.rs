//! Formation tracking for double-integrator multi-agent systems.
//!
//! Two solvers share one cost model: an offline projection-operator Newton
//! optimizer and an online distributed feedback law driven by per-agent
//! centroid estimators.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod controller;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod io;
pub mod metrics;
pub mod optimality;
pub mod potentials;
pub mod pronto;
pub mod scenario;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
