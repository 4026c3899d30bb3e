//! Experiment configuration: a versioned JSON schema describing the
//! plant, the sensor network, the gain policy, and the simulation
//! parameters, plus the lowering from a parsed config to runtime objects.
//!
//! Configs are meant to be checked in and diffed, so parsing is strict:
//! unknown fields are rejected and serialization round-trips exactly,
//! including every float bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::{decompose, Edge, GraphError, Topology};
use crate::linalg::Matrix;
use crate::observer::{ObserverError, ObserverNetwork, PlantModel, SensorNode};
use crate::signals::{Signal, StateNonlinearity};
use crate::simulation::{Integrator, SimConfig};
use crate::synthesis::{
    solve_structure_equation, synthesize_gains, DesignRequest, GainSet, ObserverMode,
    SynthesisError,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error(
        "injected gains carry no certificates; set \"unverified\": true to \
         acknowledge running without verification"
    )]
    UnverifiedGains,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
}

/// Gain resolution can fail either on the config side or because the
/// synthesis problem is infeasible; front ends report the two
/// differently.
#[derive(Debug, thiserror::Error)]
pub enum GainResolutionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    /// Experiment identity; comparisons refuse to mix different names.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub plant: PlantSection,
    pub sensors: Vec<SensorSection>,
    pub topology: TopologySection,
    pub gains: GainsSection,
    pub sim: SimSection,
    /// Default output directory for runs of this config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub a: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Signal>,
    #[serde(default = "StateNonlinearity::zero")]
    pub nonlinearity: StateNonlinearity,
    /// Process perturbation, applied only on perturbed runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Signal>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    pub c: Matrix,
    /// Measurement perturbation, applied only on perturbed runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Signal>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub nodes: usize,
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub mode: ObserverMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_far: Option<f64>,
    /// Decay-rate parameter for synthesis; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Fixed consensus coupling. Omit to let synthesis grow it
    /// automatically; required when gains are injected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// Hand-supplied weighted output gains, bypassing synthesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected: Option<InjectedGains>,
    /// Required acknowledgment when running injected gains, which carry
    /// no feasibility certificates.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unverified: bool,
}

/// Weighted per-node output gains `Hbar_i`; the runtime gain is
/// `H_i = Hbar_i / zeta_i` with `zeta` taken from the network's left
/// null vector unless supplied here.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectedGains {
    pub h_bar: Vec<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    pub h: f64,
    pub t_end: f64,
    #[serde(default = "default_store_every")]
    pub store_every: usize,
    pub x0: Vec<f64>,
    /// Initial observer states, one per node.
    pub xhat0: Vec<Vec<f64>>,
    /// Error-norm level defining the figure-level settling time.
    #[serde(default = "default_settle_threshold")]
    pub settle_threshold: f64,
    /// Length of the terminal window for tail suprema.
    #[serde(default = "default_tail_window")]
    pub tail_window: f64,
}

fn default_integrator() -> Integrator {
    Integrator::Euler
}

fn default_store_every() -> usize {
    1
}

fn default_settle_threshold() -> f64 {
    1e-2
}

fn default_tail_window() -> f64 {
    2.0
}

impl StateNonlinearity {
    fn zero() -> Self {
        StateNonlinearity::Zero
    }
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    from_str(&text)
}

pub fn from_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_string(cfg: &ExperimentConfig) -> Result<String, ConfigError> {
    Ok(serde_json::to_string_pretty(cfg)?)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "unsupported schema version {} (this build reads {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.name.is_empty() {
            return Err(ConfigError::Invalid("name must not be empty".to_string()));
        }
        if !self.plant.a.is_square() {
            return Err(ConfigError::Invalid(
                "plant matrix must be square".to_string(),
            ));
        }
        let n = self.plant.a.rows();
        if self.sensors.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one sensor is required".to_string(),
            ));
        }
        if self.sensors.len() != self.topology.nodes {
            return Err(ConfigError::Invalid(format!(
                "{} sensors for a {}-node topology",
                self.sensors.len(),
                self.topology.nodes
            )));
        }
        // Build the topology to surface structural errors early.
        self.build_topology()?;
        for (i, s) in self.sensors.iter().enumerate() {
            if s.c.cols() != n {
                return Err(ConfigError::Invalid(format!(
                    "sensor {i} map has {} columns, expected {n}",
                    s.c.cols()
                )));
            }
            if let Some(noise) = &s.noise {
                noise
                    .validate()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if noise.dim() != s.c.rows() {
                    return Err(ConfigError::Invalid(format!(
                        "sensor {i} noise has dimension {}, expected {}",
                        noise.dim(),
                        s.c.rows()
                    )));
                }
            }
        }
        if let Some(q) = &self.plant.disturbance {
            q.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if q.dim() != n {
                return Err(ConfigError::Invalid(format!(
                    "plant disturbance has dimension {}, expected {n}",
                    q.dim()
                )));
            }
        }
        self.gains.validate(self.topology.nodes, &self.sensors)?;
        self.sim.validate(n, self.topology.nodes)?;
        Ok(())
    }

    pub fn build_topology(&self) -> Result<Topology, ConfigError> {
        Ok(Topology::new(
            self.topology.nodes,
            self.topology.edges.clone(),
        )?)
    }

    /// Lowered plant model. Perturbations are dropped unless `perturbed`.
    pub fn build_plant(&self, perturbed: bool) -> PlantModel {
        let n = self.plant.a.rows();
        PlantModel {
            a: self.plant.a.clone(),
            b: self.plant.b.clone(),
            input: self.plant.input.clone(),
            nonlinearity: self.plant.nonlinearity.clone(),
            disturbance: if perturbed {
                self.plant
                    .disturbance
                    .clone()
                    .unwrap_or_else(|| Signal::zero(n))
            } else {
                Signal::zero(n)
            },
        }
    }

    /// Lowered sensor nodes. Noise is dropped unless `perturbed`.
    pub fn build_sensors(&self, perturbed: bool) -> Vec<SensorNode> {
        self.sensors
            .iter()
            .map(|s| {
                let dim = s.c.rows();
                SensorNode {
                    c: s.c.clone(),
                    noise: if perturbed {
                        s.noise.clone().unwrap_or_else(|| Signal::zero(dim))
                    } else {
                        Signal::zero(dim)
                    },
                }
            })
            .collect()
    }

    /// Resolves the gain policy into a concrete gain set: runs synthesis
    /// when no gains are injected, otherwise lowers the injected tables.
    pub fn resolve_gains(&self) -> Result<GainSet, GainResolutionError> {
        let topology = self.build_topology()?;
        let c_blocks: Vec<Matrix> = self.sensors.iter().map(|s| s.c.clone()).collect();
        let g = &self.gains;
        match &g.injected {
            None => {
                let mut gains = synthesize_gains(&DesignRequest {
                    a: &self.plant.a,
                    c_blocks: &c_blocks,
                    topology: &topology,
                    mode: g.mode,
                    mu: g.mu,
                    mu_far: g.mu_far,
                    rho: g.rho.unwrap_or(1.0),
                })?;
                if let Some(nu) = g.nu {
                    // A fixed coupling overrides the grown one; it still
                    // has to satisfy the certified inequality, which the
                    // caller checks by verifying the returned set.
                    gains.nu = nu;
                }
                Ok(gains)
            }
            Some(inj) => {
                if !g.unverified {
                    return Err(ConfigError::UnverifiedGains.into());
                }
                let nu = g.nu.ok_or_else(|| {
                    ConfigError::Invalid(
                        "injected gains require a fixed nu value".to_string(),
                    )
                })?;
                let structure =
                    solve_structure_equation(&self.plant.a, &stack_full(&c_blocks))
                        .map_err(GainResolutionError::Synthesis)?;
                let zeta = match &inj.zeta {
                    Some(z) => z.clone(),
                    None => decompose(&topology)
                        .map_err(|e| GainResolutionError::Config(ConfigError::Graph(e)))?
                        .zeta,
                };
                if zeta.len() != self.topology.nodes {
                    return Err(ConfigError::Invalid(format!(
                        "zeta has {} entries for {} nodes",
                        zeta.len(),
                        self.topology.nodes
                    ))
                    .into());
                }
                let h = inj
                    .h_bar
                    .iter()
                    .zip(&zeta)
                    .map(|(hb, z)| hb.scaled(1.0 / z))
                    .collect();
                let gains = GainSet {
                    mode: g.mode,
                    mu: g.mu,
                    mu_far: g.mu_far,
                    g0: structure.g0,
                    l0: structure.l0,
                    h,
                    nu,
                    p_a: None,
                    rho: None,
                };
                gains
                    .validate(&self.plant.a, &c_blocks)
                    .map_err(GainResolutionError::Synthesis)?;
                Ok(gains)
            }
        }
    }

    /// Builds the full observer network for a run.
    pub fn build_network(
        &self,
        gains: GainSet,
        perturbed: bool,
    ) -> Result<ObserverNetwork, ConfigError> {
        Ok(ObserverNetwork::new(
            self.build_plant(perturbed),
            self.build_sensors(perturbed),
            self.build_topology()?,
            gains,
        )?)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            integrator: self.sim.integrator,
            h: self.sim.h,
            t_end: self.sim.t_end,
            store_every: self.sim.store_every,
        }
    }

    /// Stacked observer initial condition.
    pub fn xhat0_stacked(&self) -> Vec<f64> {
        self.sim.xhat0.iter().flatten().copied().collect()
    }
}

impl GainsSection {
    fn validate(&self, nodes: usize, sensors: &[SensorSection]) -> Result<(), ConfigError> {
        match self.mode {
            ObserverMode::Linear => {
                if self.mu.is_some() || self.mu_far.is_some() {
                    return Err(ConfigError::Invalid(
                        "linear mode takes no homogeneity degrees".to_string(),
                    ));
                }
            }
            ObserverMode::Finite => {
                if self.mu.is_none() {
                    return Err(ConfigError::Invalid(
                        "finite mode requires mu".to_string(),
                    ));
                }
                if self.mu_far.is_some() {
                    return Err(ConfigError::Invalid(
                        "finite mode takes no mu_far".to_string(),
                    ));
                }
            }
            ObserverMode::Fixed => {
                if self.mu.is_none() || self.mu_far.is_none() {
                    return Err(ConfigError::Invalid(
                        "fixed mode requires mu and mu_far".to_string(),
                    ));
                }
            }
        }
        if let Some(rho) = self.rho {
            if !(rho.is_finite() && rho > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "rho must be positive, got {rho}"
                )));
            }
        }
        if let Some(nu) = self.nu {
            if !(nu.is_finite() && nu > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "nu must be positive, got {nu}"
                )));
            }
        }
        if let Some(inj) = &self.injected {
            if inj.h_bar.len() != nodes {
                return Err(ConfigError::Invalid(format!(
                    "{} injected gain blocks for {nodes} nodes",
                    inj.h_bar.len()
                )));
            }
            for (i, (hb, s)) in inj.h_bar.iter().zip(sensors).enumerate() {
                if hb.cols() != s.c.rows() {
                    return Err(ConfigError::Invalid(format!(
                        "injected gain {i} has {} columns, sensor outputs {}",
                        hb.cols(),
                        s.c.rows()
                    )));
                }
            }
            if let Some(z) = &inj.zeta {
                if z.len() != nodes {
                    return Err(ConfigError::Invalid(format!(
                        "zeta has {} entries for {nodes} nodes",
                        z.len()
                    )));
                }
                if z.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(ConfigError::Invalid(
                        "zeta entries must be positive".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl SimSection {
    fn validate(&self, state_dim: usize, nodes: usize) -> Result<(), ConfigError> {
        let sim = SimConfig {
            integrator: self.integrator,
            h: self.h,
            t_end: self.t_end,
            store_every: self.store_every,
        };
        sim.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.x0.len() != state_dim {
            return Err(ConfigError::Invalid(format!(
                "x0 has dimension {}, expected {state_dim}",
                self.x0.len()
            )));
        }
        if self.xhat0.len() != nodes {
            return Err(ConfigError::Invalid(format!(
                "{} observer initial states for {nodes} nodes",
                self.xhat0.len()
            )));
        }
        for (i, xh) in self.xhat0.iter().enumerate() {
            if xh.len() != state_dim {
                return Err(ConfigError::Invalid(format!(
                    "xhat0[{i}] has dimension {}, expected {state_dim}",
                    xh.len()
                )));
            }
        }
        if !(self.settle_threshold.is_finite() && self.settle_threshold > 0.0) {
            return Err(ConfigError::Invalid(
                "settle_threshold must be positive".to_string(),
            ));
        }
        if !(self.tail_window.is_finite() && self.tail_window > 0.0) {
            return Err(ConfigError::Invalid(
                "tail_window must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

fn stack_full(c_blocks: &[Matrix]) -> Matrix {
    let n = c_blocks[0].cols();
    let p_total: usize = c_blocks.iter().map(Matrix::rows).sum();
    let mut c_full = Matrix::zeros(p_total, n);
    let mut row = 0;
    for c in c_blocks {
        c_full.set_block(row, 0, c);
        row += c.rows();
    }
    c_full
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{Channel, Waveform};

    fn two_node_config() -> ExperimentConfig {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            name: "double-integrator".to_string(),
            description: None,
            plant: PlantSection {
                a: Matrix::from_rows(vec![vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap(),
                b: None,
                input: None,
                nonlinearity: StateNonlinearity::Zero,
                disturbance: Some(Signal::Sinusoid {
                    channels: vec![
                        Channel {
                            waveform: Waveform::Sin,
                            amplitude: 0.001,
                            frequency: 2.0,
                        },
                        Channel {
                            waveform: Waveform::Cos,
                            amplitude: 0.002,
                            frequency: 0.5,
                        },
                    ],
                }),
            },
            sensors: vec![
                SensorSection {
                    c: Matrix::from_rows(vec![vec![1.0, 0.0]]).unwrap(),
                    noise: None,
                },
                SensorSection {
                    c: Matrix::from_rows(vec![vec![1.0, 1.0]]).unwrap(),
                    noise: None,
                },
            ],
            topology: TopologySection {
                nodes: 2,
                edges: vec![
                    Edge {
                        receiver: 0,
                        sender: 1,
                        weight: 1.0,
                    },
                    Edge {
                        receiver: 1,
                        sender: 0,
                        weight: 1.0,
                    },
                ],
            },
            gains: GainsSection {
                mode: ObserverMode::Finite,
                mu: Some(-0.5),
                mu_far: None,
                rho: Some(1.0),
                nu: None,
                injected: None,
                unverified: false,
            },
            sim: SimSection {
                integrator: Integrator::Euler,
                h: 1e-3,
                t_end: 1.0,
                store_every: 1,
                x0: vec![1.0, -1.0],
                xhat0: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
                settle_threshold: 1e-2,
                tail_window: 0.5,
            },
            out_dir: None,
        }
    }

    #[test]
    fn round_trip_is_identity() {
        // Exact float round trips matter: a config reserialized after a
        // parse must be byte-identical, including awkward values.
        let mut cfg = two_node_config();
        cfg.gains.injected = Some(InjectedGains {
            h_bar: vec![
                Matrix::from_rows(vec![vec![0.1 / 3.0], vec![-9.45]]).unwrap(),
                Matrix::from_rows(vec![vec![1e-13], vec![2.0f64.sqrt()]]).unwrap(),
            ],
            zeta: Some(vec![0.5, 0.5]),
        });
        cfg.gains.unverified = true;
        cfg.gains.nu = Some(10.0);
        let s1 = to_string(&cfg).unwrap();
        let parsed = from_str(&s1).unwrap();
        let s2 = to_string(&parsed).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&to_string(&two_node_config()).unwrap()).unwrap();
        v["plant"]["extra_knob"] = serde_json::json!(1.0);
        assert!(matches!(
            from_str(&v.to_string()),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn dimension_mismatches_are_caught() {
        let mut cfg = two_node_config();
        cfg.sim.x0 = vec![1.0];
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));

        let mut cfg = two_node_config();
        cfg.sensors.pop();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));

        let mut cfg = two_node_config();
        cfg.gains.mu = None;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn injected_gains_require_acknowledgment() {
        let mut cfg = two_node_config();
        cfg.gains.injected = Some(InjectedGains {
            h_bar: vec![
                Matrix::from_rows(vec![vec![-1.0], vec![-1.0]]).unwrap(),
                Matrix::from_rows(vec![vec![-1.0], vec![-1.0]]).unwrap(),
            ],
            zeta: None,
        });
        cfg.gains.nu = Some(4.0);
        assert!(matches!(
            cfg.resolve_gains(),
            Err(GainResolutionError::Config(ConfigError::UnverifiedGains))
        ));
        cfg.gains.unverified = true;
        let gains = cfg.resolve_gains().unwrap();
        // Balanced two-ring: zeta = 1/2, so H_i = 2 Hbar_i.
        assert!((gains.h[0][(0, 0)] + 2.0).abs() < 1e-12);
        assert_eq!(gains.nu, 4.0);
        assert!(gains.p_a.is_none());
    }

    #[test]
    fn injected_gains_require_fixed_nu() {
        let mut cfg = two_node_config();
        cfg.gains.injected = Some(InjectedGains {
            h_bar: vec![
                Matrix::from_rows(vec![vec![-1.0], vec![-1.0]]).unwrap(),
                Matrix::from_rows(vec![vec![-1.0], vec![-1.0]]).unwrap(),
            ],
            zeta: None,
        });
        cfg.gains.unverified = true;
        cfg.gains.nu = None;
        assert!(matches!(
            cfg.resolve_gains(),
            Err(GainResolutionError::Config(ConfigError::Invalid(_)))
        ));
    }

    #[test]
    fn synthesis_path_produces_certified_gains() {
        let cfg = two_node_config();
        let gains = cfg.resolve_gains().unwrap();
        assert!(gains.p_a.is_some());
        assert_eq!(gains.mode, ObserverMode::Finite);
        let c_blocks: Vec<Matrix> = cfg.sensors.iter().map(|s| s.c.clone()).collect();
        let topology = cfg.build_topology().unwrap();
        let report = crate::synthesis::verify_gain_set(
            &cfg.plant.a,
            &c_blocks,
            &topology,
            &gains,
        )
        .unwrap();
        assert!(report.ok, "{report:?}");
        // The lowered network accepts the gains and simulates.
        let net = cfg.build_network(gains, false).unwrap();
        let z0 = net
            .assemble_state(&cfg.sim.x0, &cfg.xhat0_stacked())
            .unwrap();
        assert_eq!(z0.len(), 6);
    }

    #[test]
    fn perturbations_only_apply_when_asked() {
        let cfg = two_node_config();
        let nominal = cfg.build_plant(false);
        assert!(nominal.disturbance.is_zero());
        let perturbed = cfg.build_plant(true);
        assert!(!perturbed.disturbance.is_zero());
        // Sensors with no declared noise get zero either way.
        let sensors = cfg.build_sensors(true);
        assert!(sensors[0].noise.is_zero());
    }
}
