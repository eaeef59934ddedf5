//! Scenario configuration: formation, weights, gains, initial state and the
//! centroid reference path, loaded from and saved to JSON.
//!
//! Agent indices in files are 1-based and matrices are written row-major as
//! arrays of rows.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_4, SQRT_2};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::controller::ControllerGains;
use crate::cost::{CentroidTarget, CostWeights, Objective, ReferencePath};
use crate::dynamics::grid_steps;
use crate::error::{Error, Result};
use crate::estimator::{EstimatorGains, EstimatorInit};
use crate::potentials::PotentialParams;
use crate::pronto::ProntoConfig;
use crate::topology::{FormationSpec, Graph};

/// Relative slack on the reference time window.
const TIME_SLACK: f64 = 1e-9;

/// Potential shape shared by edges that do not override it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialShape {
    pub k_r: f64,
    pub k_a: f64,
    pub beta: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    /// 1-based agent index.
    pub i: usize,
    pub j: usize,
    /// Desired distance (m).
    pub distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialShape>,
}

/// One row per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

type RowMajor = Vec<Vec<f64>>;

/// Scalar weights times the identity, optionally replaced by full matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub q_p: f64,
    pub q_d: f64,
    pub r: f64,
    pub k_f: f64,
    pub k_a: f64,
    #[serde(default = "one")]
    pub theta: f64,
    /// Per-agent centroid position weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_c_agents: Option<Vec<RowMajor>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_cdot_agents: Option<Vec<RowMajor>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_agents: Option<Vec<RowMajor>>,
    /// Per-edge velocity-alignment weights, in the order of `edges`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_edges: Option<Vec<RowMajor>>,
}

fn one() -> f64 {
    1.0
}

/// Desired centroid path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceParams {
    /// `R_z(yaw) R_y(pitch) (speed t, amplitude tanh(sharpness (t - T/2)), 0)`,
    /// with right-handed elementary rotations. Angles in radians.
    RotatedTanhChicane {
        speed: f64,
        amplitude: f64,
        sharpness: f64,
        yaw: f64,
        pitch: f64,
    },
    /// Samples interpolated linearly in time.
    CustomSampled {
        t: Vec<f64>,
        positions: Vec<Vec<f64>>,
        velocities: Vec<Vec<f64>>,
    },
}

impl ReferenceParams {
    pub fn cube_chicane() -> Self {
        ReferenceParams::RotatedTanhChicane {
            speed: 2.0,
            amplitude: 10.0,
            sharpness: 10.0,
            yaw: FRAC_PI_4,
            pitch: -FRAC_PI_4,
        }
    }

    fn validate(&self, dim: usize, horizon: f64) -> Result<()> {
        match self {
            ReferenceParams::RotatedTanhChicane {
                speed,
                amplitude,
                sharpness,
                yaw,
                pitch,
            } => {
                if dim != 3 {
                    return Err(Error::Config(format!(
                        "rotated-tanh-chicane reference needs dimension 3, scenario has {dim}"
                    )));
                }
                if [speed, amplitude, sharpness, yaw, pitch]
                    .iter()
                    .any(|v| !v.is_finite())
                {
                    return Err(Error::Config("reference parameters must be finite".into()));
                }
            }
            ReferenceParams::CustomSampled {
                t,
                positions,
                velocities,
            } => {
                if t.len() < 2 || positions.len() != t.len() || velocities.len() != t.len() {
                    return Err(Error::Config(format!(
                        "custom reference needs at least 2 samples with matching lengths, got t {}, positions {}, velocities {}",
                        t.len(),
                        positions.len(),
                        velocities.len()
                    )));
                }
                if t.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Config(
                        "custom reference times must be strictly increasing".into(),
                    ));
                }
                if positions
                    .iter()
                    .chain(velocities)
                    .any(|row| row.len() != dim || row.iter().any(|v| !v.is_finite()))
                {
                    return Err(Error::Config(format!(
                        "custom reference rows must hold {dim} finite values"
                    )));
                }
                let slack = TIME_SLACK * horizon.max(1.0);
                if t[0] > slack || t[t.len() - 1] < horizon - slack {
                    return Err(Error::Config(format!(
                        "custom reference covers [{}, {}] s, horizon is [0, {horizon}] s",
                        t[0],
                        t[t.len() - 1]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn rot_y(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Unrotated chicane position and velocity at time `t`.
pub fn chicane_planar(
    speed: f64,
    amplitude: f64,
    sharpness: f64,
    horizon: f64,
    t: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let arg = sharpness * (t - 0.5 * horizon);
    let sech = 1.0 / arg.cosh();
    (
        Vector3::new(speed * t, amplitude * arg.tanh(), 0.0),
        Vector3::new(speed, amplitude * sharpness * sech * sech, 0.0),
    )
}

/// Desired centroid position and velocity at time `t` in `[0, horizon]`.
pub fn reference_path(params: &ReferenceParams, horizon: f64, t: f64) -> Result<CentroidTarget> {
    let slack = TIME_SLACK * horizon.max(1.0);
    if !(t >= -slack && t <= horizon + slack) {
        return Err(Error::OutOfRange { t, horizon });
    }
    match params {
        ReferenceParams::RotatedTanhChicane {
            speed,
            amplitude,
            sharpness,
            yaw,
            pitch,
        } => {
            let rot = rot_z(*yaw) * rot_y(*pitch);
            let (p, v) = chicane_planar(*speed, *amplitude, *sharpness, horizon, t);
            let p = rot * p;
            let v = rot * v;
            Ok(CentroidTarget {
                p: DVector::from_column_slice(p.as_slice()),
                v: DVector::from_column_slice(v.as_slice()),
            })
        }
        ReferenceParams::CustomSampled {
            t: times,
            positions,
            velocities,
        } => {
            let last = times.len() - 1;
            if t < times[0] - slack || t > times[last] + slack {
                return Err(Error::OutOfRange { t, horizon });
            }
            let k = times.partition_point(|&s| s <= t).clamp(1, last) - 1;
            let frac = ((t - times[k]) / (times[k + 1] - times[k])).clamp(0.0, 1.0);
            let lerp = |rows: &[Vec<f64>]| {
                DVector::from_iterator(
                    rows[k].len(),
                    rows[k]
                        .iter()
                        .zip(&rows[k + 1])
                        .map(|(a, b)| a + (b - a) * frac),
                )
            };
            Ok(CentroidTarget {
                p: lerp(positions),
                v: lerp(velocities),
            })
        }
    }
}

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub agents: usize,
    pub dim: usize,
    /// Horizon `T` (s).
    pub horizon: f64,
    /// Simulation step (s).
    pub dt: f64,
    pub potential: PotentialShape,
    pub edges: Vec<EdgeConfig>,
    pub initial: InitialConfig,
    pub weights: WeightsConfig,
    pub controller: ControllerGains,
    pub estimator: EstimatorGains,
    #[serde(default)]
    pub pronto: ProntoConfig,
    pub reference: ReferenceParams,
}

/// A validated scenario with its formation, weights and initial state built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub spec: FormationSpec,
    pub weights: CostWeights,
    pub x0: DVector<f64>,
    pub steps: usize,
}

impl PartialEq for Scenario {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
    }
}

fn matrix_from_rows(name: &str, rows: &RowMajor, dim: usize) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(format!(
            "{name} must be a {dim}x{dim} matrix"
        )));
    }
    Ok(DMatrix::from_fn(dim, dim, |r, c| rows[r][c]))
}

fn matrices(
    name: &str,
    given: &Option<Vec<RowMajor>>,
    count: usize,
    dim: usize,
    scalar: f64,
) -> Result<Vec<DMatrix<f64>>> {
    match given {
        None => Ok(vec![DMatrix::identity(dim, dim) * scalar; count]),
        Some(list) => {
            if list.len() != count {
                return Err(Error::Config(format!(
                    "{name} lists {} matrices, expected {count}",
                    list.len()
                )));
            }
            list.iter()
                .enumerate()
                .map(|(k, rows)| matrix_from_rows(&format!("{name}[{}]", k + 1), rows, dim))
                .collect()
        }
    }
}

fn invalid_to_config(err: Error) -> Error {
    match err {
        Error::InvalidParameter(msg) | Error::InvalidGraph(msg) => Error::Config(msg),
        other => other,
    }
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        Self::build(config).map_err(invalid_to_config)
    }

    fn build(config: ScenarioConfig) -> Result<Self> {
        let n = config.agents;
        let dim = config.dim;
        if !(config.horizon > 0.0 && config.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {}",
                config.horizon
            )));
        }
        let steps = grid_steps(config.horizon, config.dt).map_err(invalid_to_config)?;

        let mut pairs = Vec::with_capacity(config.edges.len());
        for e in &config.edges {
            if e.i == 0 || e.j == 0 || e.i > n || e.j > n {
                return Err(Error::Config(format!(
                    "edge ({}, {}) refers to an agent outside 1..={n}",
                    e.i, e.j
                )));
            }
            pairs.push((e.i - 1, e.j - 1));
        }
        let graph = Graph::new(n, &pairs)?;
        // the graph orders its edges; map each back to its position in the file
        let file_index: HashMap<(usize, usize), usize> = pairs
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| ((a.min(b), a.max(b)), k))
            .collect();
        let order: Vec<usize> = graph.edges().iter().map(|e| file_index[e]).collect();

        let mut params = Vec::with_capacity(order.len());
        for &k in &order {
            let e = &config.edges[k];
            let shape = e.potential.unwrap_or(config.potential);
            params.push(PotentialParams::new(
                e.distance,
                shape.k_r,
                shape.k_a,
                shape.beta,
                shape.alpha,
            )?);
        }
        let spec = FormationSpec::new(graph, dim, params)?;

        let wc = &config.weights;
        let theta_file = matrices("theta_edges", &wc.theta_edges, order.len(), dim, wc.theta)?;
        let theta = order.iter().map(|&k| theta_file[k].clone()).collect();
        let weights = CostWeights::new(
            matrices("q_c_agents", &wc.q_c_agents, n, dim, wc.q_p)?,
            matrices("q_cdot_agents", &wc.q_cdot_agents, n, dim, wc.q_d)?,
            matrices("r_agents", &wc.r_agents, n, dim, wc.r)?,
            wc.k_f,
            wc.k_a,
            theta,
        )?;

        let init = &config.initial;
        if init.positions.len() != n || init.velocities.len() != n {
            return Err(Error::Config(format!(
                "initial state lists {} positions and {} velocities, expected {n} each",
                init.positions.len(),
                init.velocities.len()
            )));
        }
        let big = n * dim;
        let mut x0 = DVector::zeros(2 * big);
        for i in 0..n {
            let (p, v) = (&init.positions[i], &init.velocities[i]);
            if p.len() != dim || v.len() != dim {
                return Err(Error::Config(format!(
                    "initial state of agent {} must have {dim} components",
                    i + 1
                )));
            }
            for c in 0..dim {
                x0[i * dim + c] = p[c];
                x0[big + i * dim + c] = v[c];
            }
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("initial state must be finite".into()));
        }

        config.controller.validate()?;
        config.estimator.validate()?;
        config.pronto.validate()?;
        config.reference.validate(dim, config.horizon)?;

        Ok(Scenario {
            config,
            spec,
            weights,
            x0,
            steps,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn controller(&self) -> &ControllerGains {
        &self.config.controller
    }

    pub fn estimator(&self) -> &EstimatorGains {
        &self.config.estimator
    }

    pub fn pronto(&self) -> &ProntoConfig {
        &self.config.pronto
    }

    /// The same scenario on a different time grid.
    pub fn with_dt(&self, dt: f64) -> Result<Scenario> {
        let mut config = self.config.clone();
        config.dt = dt;
        Scenario::from_config(config)
    }

    pub fn reference_at(&self, t: f64) -> Result<CentroidTarget> {
        reference_path(&self.config.reference, self.config.horizon, t)
    }

    /// Reference sampled on the scenario grid.
    pub fn sample_reference(&self) -> Result<ReferencePath> {
        let dt = self.dt();
        let samples = (0..=self.steps)
            .map(|k| self.reference_at((k as f64 * dt).min(self.horizon())))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReferencePath { samples })
    }

    pub fn objective<'a>(&'a self, reference: &'a ReferencePath) -> Result<Objective<'a>> {
        Objective::new(&self.spec, &self.weights, reference)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let config: ScenarioConfig = serde_json::from_str(text)?;
    Scenario::from_config(config)
}

pub fn save_scenario(scn: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let text =
        serde_json::to_string_pretty(&scn.config).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Side length of the cube formation (m).
pub const CUBE_SIDE: f64 = 5.0;

/// 1-based cube edges with their length in units of the side.
const CUBE_EDGES: [(usize, usize, f64); 20] = [
    (1, 2, 1.0),
    (1, 4, 1.0),
    (1, 5, 1.0),
    (1, 6, SQRT_2),
    (1, 8, SQRT_2),
    (2, 3, 1.0),
    (2, 4, SQRT_2),
    (2, 6, 1.0),
    (2, 8, SQRT_3),
    (3, 4, 1.0),
    (3, 5, SQRT_3),
    (3, 6, SQRT_2),
    (3, 7, 1.0),
    (4, 7, SQRT_2),
    (4, 8, 1.0),
    (5, 6, 1.0),
    (5, 7, SQRT_2),
    (5, 8, 1.0),
    (6, 7, 1.0),
    (7, 8, 1.0),
];

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Vertex coordinates of the desired cube, in units of the side.
pub const CUBE_VERTICES: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 1.0, 1.0],
];

const CUBE_P0: [[f64; 3]; 8] = [
    [-6.0, 3.0, 24.0],
    [-9.0, -3.0, 3.0],
    [6.0, -6.0, 15.0],
    [15.0, 3.0, 15.0],
    [-3.0, -18.0, 6.0],
    [6.0, 6.0, 6.0],
    [-3.0, -15.0, -3.0],
    [15.0, 6.0, 9.0],
];

const CUBE_V0: [[f64; 3]; 8] = [
    [10.0, 1.0, 0.0],
    [10.0, 0.0, 0.0],
    [0.0, 0.0, 0.0],
    [15.0, -5.0, 5.0],
    [0.0, 0.0, 5.0],
    [5.0, 5.0, 5.0],
    [0.0, 0.0, 0.0],
    [-10.0, -25.0, 10.0],
];

pub fn cube_config() -> ScenarioConfig {
    let cube = PotentialParams::cube_defaults(CUBE_SIDE);
    ScenarioConfig {
        description: "Eight agents forming a cube of side 5 m while the centroid follows \
            R_z(yaw) R_y(pitch) (2t, 10 tanh(10 (t - T/2)), 0). Rotations are right-handed: \
            R_y(a) = [[cos a, 0, sin a], [0, 1, 0], [-sin a, 0, cos a]], \
            R_z(a) = [[cos a, -sin a, 0], [sin a, cos a, 0], [0, 0, 1]]. \
            Agent indices are 1-based and matrices are row-major."
            .into(),
        agents: 8,
        dim: 3,
        horizon: 20.0,
        dt: 1e-3,
        potential: PotentialShape {
            k_r: cube.k_r,
            k_a: cube.k_a,
            beta: cube.beta,
            alpha: cube.alpha,
        },
        edges: CUBE_EDGES
            .iter()
            .map(|&(i, j, f)| EdgeConfig {
                i,
                j,
                distance: f * CUBE_SIDE,
                potential: None,
            })
            .collect(),
        initial: InitialConfig {
            positions: CUBE_P0.iter().map(|r| r.to_vec()).collect(),
            velocities: CUBE_V0.iter().map(|r| r.to_vec()).collect(),
        },
        weights: WeightsConfig {
            q_p: 1.25,
            q_d: 0.125,
            r: 1.0,
            k_f: 2.0,
            k_a: 0.25,
            theta: 1.0,
            q_c_agents: None,
            q_cdot_agents: None,
            r_agents: None,
            theta_edges: None,
        },
        controller: ControllerGains {
            kp_tr1: 2.4,
            kd_tr1: 1.2,
            kp_fo1: 1.3,
            kd_fo1: 1.0,
            kp_tr2: 12.0,
            kp_fo2: 0.3,
            saturation: Some(50.0),
        },
        estimator: EstimatorGains {
            k_py: 180.0,
            k_dy: 170.0,
            init: EstimatorInit::DegreeWeighted,
        },
        pronto: ProntoConfig::from_natural_frequency(3.0, 0.7),
        reference: ReferenceParams::cube_chicane(),
    }
}

pub fn build_cube_scenario() -> Scenario {
    Scenario::from_config(cube_config()).expect("cube scenario is valid")
}

/// Desired cube vertex positions stacked agent-major.
pub fn cube_vertices() -> DVector<f64> {
    DVector::from_iterator(
        24,
        CUBE_VERTICES
            .iter()
            .flat_map(|v| v.iter().map(|c| c * CUBE_SIDE)),
    )
}
