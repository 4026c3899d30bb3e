//! Built-in benchmark experiments: a registry of named presets, the plan
//! runner (including parallel scale sweeps), and the file writers that
//! turn results into CSVs plus a metrics summary.
//!
//! The four presets share one three-state plant observed by a three-node
//! ring:
//!
//! - `fig2`: finite-time observer vs the linear baseline, nominal run.
//! - `fig3`: the same comparison with process and measurement
//!   perturbations switched on.
//! - `fig4`: fixed-time observer vs the linear baseline across plant
//!   initial conditions scaled by 10^m, m in {-1..3}.
//! - `fig5`: fixed-time observer vs the linear baseline, perturbed.

use std::path::{Path, PathBuf};
use std::thread;

use crate::config::{
    ConfigError, ExperimentConfig, GainResolutionError, GainsSection, InjectedGains,
    PlantSection, SensorSection, SimSection, TopologySection, SCHEMA_VERSION,
};
use crate::graph::Edge;
use crate::homogeneity::CanonicalNorm;
use crate::linalg::Matrix;
use crate::observer::ObserverError;
use crate::signals::{Channel, Signal, StateNonlinearity, Waveform};
use crate::simulation::{
    self, euclidean, integrate, settling_time, tail_sup, SimError, Trajectory,
};
use crate::synthesis::{GainSet, ObserverMode};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown experiment preset: {0}")]
    UnknownPreset(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gains(#[from] GainResolutionError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub const PRESET_NAMES: [&str; 4] = ["fig2", "fig3", "fig4", "fig5"];

/// One observer variant of an experiment: a label and the mode it runs.
#[derive(Clone, Debug)]
pub struct Variant {
    pub label: String,
    pub mode: ObserverMode,
}

/// A resolved experiment: the shared config, which observer variants to
/// run, the initial-condition scale exponents (empty means a single run
/// at the declared x0), and whether perturbations are on.
#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub config: ExperimentConfig,
    pub variants: Vec<Variant>,
    pub scale_exponents: Vec<i32>,
    pub perturbed: bool,
    /// Machine-readable ordering expectation, embedded in the metrics
    /// file so comparisons are self-contained.
    pub expectation: Option<String>,
}

impl ExperimentPlan {
    /// Plan for a user-supplied config: one variant, the declared mode.
    pub fn from_config(config: ExperimentConfig) -> Self {
        let mode = config.gains.mode;
        ExperimentPlan {
            config,
            variants: vec![Variant {
                label: mode.to_string(),
                mode,
            }],
            scale_exponents: Vec::new(),
            perturbed: false,
            expectation: None,
        }
    }
}

/// Overrides applied on top of a plan at run time.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Restrict the run to variants of this mode.
    pub mode: Option<ObserverMode>,
    /// Force perturbations on.
    pub perturbed: bool,
    pub h: Option<f64>,
    pub t_end: Option<f64>,
}

/// One finished run of a variant at one scale.
pub struct RunRecord {
    pub label: String,
    pub mode: ObserverMode,
    pub scale_exponent: Option<i32>,
    pub trajectory: Trajectory,
    pub settling_time: Option<f64>,
    pub tail_sup: f64,
    pub final_error: f64,
    pub state_dim: usize,
    pub node_count: usize,
    pub lyap_norm: CanonicalNorm,
}

pub struct ExperimentResult {
    pub name: String,
    pub perturbed: bool,
    pub expectation: Option<String>,
    pub records: Vec<RunRecord>,
}

fn bench_plant_section() -> PlantSection {
    PlantSection {
        a: Matrix::from_rows(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap(),
        b: None,
        input: None,
        nonlinearity: StateNonlinearity::NormPower {
            coeff: vec![0.0, 0.02, 0.0],
            exponent: 0.1,
        },
        disturbance: Some(Signal::Sinusoid {
            channels: vec![
                Channel {
                    waveform: Waveform::Sin,
                    amplitude: 0.0,
                    frequency: 1.0,
                },
                Channel {
                    waveform: Waveform::Sin,
                    amplitude: 0.0,
                    frequency: 1.0,
                },
                Channel {
                    waveform: Waveform::Sin,
                    amplitude: 0.1,
                    frequency: 2.0,
                },
            ],
        }),
    }
}

fn bench_sensor_sections() -> Vec<SensorSection> {
    vec![
        SensorSection {
            c: Matrix::from_rows(vec![vec![0.0, 0.0, 2.0], vec![0.0, 0.0, 2.0]]).unwrap(),
            noise: Some(Signal::Sinusoid {
                channels: vec![
                    Channel {
                        waveform: Waveform::Sin,
                        amplitude: 0.001,
                        frequency: 2.0,
                    },
                    Channel {
                        waveform: Waveform::Cos,
                        amplitude: 0.001,
                        frequency: 0.5,
                    },
                ],
            }),
        },
        SensorSection {
            c: Matrix::from_rows(vec![vec![0.0, 0.0, 3.0]]).unwrap(),
            noise: Some(Signal::Sinusoid {
                channels: vec![Channel {
                    waveform: Waveform::Cos,
                    amplitude: 0.001,
                    frequency: 1.0,
                }],
            }),
        },
        SensorSection {
            c: Matrix::from_rows(vec![vec![0.0, 1.0, 0.0], vec![3.0, 2.0, 2.0]]).unwrap(),
            noise: Some(Signal::Sinusoid {
                channels: vec![
                    Channel {
                        waveform: Waveform::Cos,
                        amplitude: 0.001,
                        frequency: 2.0,
                    },
                    Channel {
                        waveform: Waveform::Sin,
                        amplitude: 0.001,
                        frequency: 1.0,
                    },
                ],
            }),
        },
    ]
}

fn ring_section() -> TopologySection {
    TopologySection {
        nodes: 3,
        edges: (0..3)
            .map(|i| Edge {
                receiver: i,
                sender: (i + 1) % 3,
                weight: 1.0,
            })
            .collect(),
    }
}

/// Weighted gain tables for the finite-time design of the benchmark.
fn finite_tables() -> Vec<Matrix> {
    vec![
        Matrix::from_rows(vec![
            vec![3.15, 0.0],
            vec![-1.50, 0.0],
            vec![-4.71, 0.0],
        ])
        .unwrap(),
        Matrix::zeros(3, 1),
        Matrix::from_rows(vec![
            vec![3.30, -3.15],
            vec![-9.37, 0.0],
            vec![0.0, 0.0],
        ])
        .unwrap(),
    ]
}

/// Weighted gain tables for the fixed-time design of the benchmark.
fn fixed_tables() -> Vec<Matrix> {
    vec![
        Matrix::from_rows(vec![
            vec![3.63, 0.0],
            vec![-2.60, 0.0],
            vec![-5.44, 0.0],
        ])
        .unwrap(),
        Matrix::zeros(3, 1),
        Matrix::from_rows(vec![
            vec![1.69, -3.69],
            vec![-10.33, -0.23],
            vec![-0.68, -0.02],
        ])
        .unwrap(),
    ]
}

fn bench_config(
    name: &str,
    description: &str,
    mode: ObserverMode,
    tables: Vec<Matrix>,
    h: f64,
    store_every: usize,
) -> ExperimentConfig {
    let (mu, mu_far) = match mode {
        ObserverMode::Finite => (Some(-0.65), None),
        ObserverMode::Fixed => (Some(-0.65), Some(0.65)),
        ObserverMode::Linear => (None, None),
    };
    ExperimentConfig {
        schema: SCHEMA_VERSION,
        name: name.to_string(),
        description: Some(description.to_string()),
        plant: bench_plant_section(),
        sensors: bench_sensor_sections(),
        topology: ring_section(),
        gains: GainsSection {
            mode,
            mu,
            mu_far,
            rho: None,
            nu: Some(10.0),
            injected: Some(InjectedGains {
                h_bar: tables,
                zeta: None,
            }),
            unverified: true,
        },
        sim: SimSection {
            integrator: simulation::Integrator::Euler,
            h,
            t_end: 10.0,
            store_every,
            x0: vec![-1.0, 0.0, 1.0],
            xhat0: vec![vec![0.0; 3]; 3],
            settle_threshold: 1e-2,
            tail_window: 2.0,
        },
        out_dir: None,
    }
}

fn two_mode_variants(primary: ObserverMode) -> Vec<Variant> {
    vec![
        Variant {
            label: primary.to_string(),
            mode: primary,
        },
        Variant {
            label: ObserverMode::Linear.to_string(),
            mode: ObserverMode::Linear,
        },
    ]
}

/// Looks up a named preset.
pub fn preset(name: &str) -> Option<ExperimentPlan> {
    match name {
        "fig2" => Some(ExperimentPlan {
            config: bench_config(
                "fig2",
                "finite-time observer vs linear baseline, nominal run",
                ObserverMode::Finite,
                finite_tables(),
                1e-3,
                1,
            ),
            variants: two_mode_variants(ObserverMode::Finite),
            scale_exponents: Vec::new(),
            perturbed: false,
            expectation: Some("settling:finite<linear".to_string()),
        }),
        "fig3" => Some(ExperimentPlan {
            config: bench_config(
                "fig3",
                "finite-time observer vs linear baseline under perturbations",
                ObserverMode::Finite,
                finite_tables(),
                1e-3,
                1,
            ),
            variants: two_mode_variants(ObserverMode::Finite),
            scale_exponents: Vec::new(),
            perturbed: true,
            expectation: Some("tail:finite<linear".to_string()),
        }),
        "fig4" => Some(ExperimentPlan {
            config: bench_config(
                "fig4",
                "settling-time spread of the fixed-time observer across \
                 initial-condition scales",
                ObserverMode::Fixed,
                fixed_tables(),
                1e-4,
                10,
            ),
            variants: two_mode_variants(ObserverMode::Fixed),
            scale_exponents: vec![-1, 0, 1, 2, 3],
            perturbed: false,
            expectation: Some("scale_ratio:fixed<=5,fixed<linear".to_string()),
        }),
        "fig5" => Some(ExperimentPlan {
            config: bench_config(
                "fig5",
                "fixed-time observer vs linear baseline under perturbations",
                ObserverMode::Fixed,
                fixed_tables(),
                1e-3,
                1,
            ),
            variants: two_mode_variants(ObserverMode::Fixed),
            scale_exponents: Vec::new(),
            perturbed: true,
            expectation: Some("tail:fixed<linear".to_string()),
        }),
        _ => None,
    }
}

/// Restates a config for a different observer mode, dropping degrees the
/// target mode does not take. Used to derive the linear baseline from a
/// homogeneous experiment config.
pub fn config_for_mode(base: &ExperimentConfig, mode: ObserverMode) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.gains.mode = mode;
    match mode {
        ObserverMode::Linear => {
            cfg.gains.mu = None;
            cfg.gains.mu_far = None;
        }
        ObserverMode::Finite => {
            cfg.gains.mu_far = None;
        }
        ObserverMode::Fixed => {}
    }
    cfg
}

struct Job<'a> {
    label: String,
    mode: ObserverMode,
    scale_exponent: Option<i32>,
    config: &'a ExperimentConfig,
    gains: GainSet,
    perturbed: bool,
    sim: simulation::SimConfig,
}

fn run_job(job: Job<'_>) -> Result<RunRecord, ExperimentError> {
    let cfg = job.config;
    let net = cfg.build_network(job.gains, job.perturbed)?;
    let scale = 10f64.powi(job.scale_exponent.unwrap_or(0));
    let x0: Vec<f64> = cfg.sim.x0.iter().map(|v| v * scale).collect();
    let z0 = net.assemble_state(&x0, &cfg.xhat0_stacked())?;
    let traj = integrate(
        |t, z, out| net.coupled_rhs(t, z, out).map_err(SimError::from),
        &z0,
        &job.sim,
    )?;
    let err_metric = |z: &[f64]| euclidean(&net.error_stack(z));
    let settling = settling_time(&traj, err_metric, cfg.sim.settle_threshold);
    let tail = tail_sup(&traj, err_metric, cfg.sim.tail_window);
    let final_error = err_metric(traj.last_state());
    let lyap_norm = net.stacked_error_norm()?;
    Ok(RunRecord {
        label: job.label,
        mode: job.mode,
        scale_exponent: job.scale_exponent,
        trajectory: traj,
        settling_time: settling,
        tail_sup: tail,
        final_error,
        state_dim: net.state_dim(),
        node_count: net.node_count(),
        lyap_norm,
    })
}

/// Runs every variant of the plan at every scale. Jobs are independent,
/// so sweeps run on one thread per job; results come back in the fixed
/// variant-major, scale-minor order regardless of completion order.
pub fn run_plan(
    plan: &ExperimentPlan,
    opts: &RunOptions,
) -> Result<ExperimentResult, ExperimentError> {
    let perturbed = plan.perturbed || opts.perturbed;
    let mut sim = plan.config.sim_config();
    if let Some(h) = opts.h {
        sim.h = h;
    }
    if let Some(t_end) = opts.t_end {
        sim.t_end = t_end;
    }

    // Per-variant configs and gain sets, resolved once and shared by
    // every scale in the sweep.
    let mut variant_setups = Vec::new();
    for v in &plan.variants {
        if let Some(only) = opts.mode {
            if v.mode != only {
                continue;
            }
        }
        let cfg = config_for_mode(&plan.config, v.mode);
        let gains = cfg.resolve_gains()?;
        variant_setups.push((v.label.clone(), v.mode, cfg, gains));
    }
    if variant_setups.is_empty() {
        return Err(ExperimentError::Config(ConfigError::Invalid(format!(
            "no variant of this experiment runs mode {:?}",
            opts.mode
        ))));
    }

    let mut jobs = Vec::new();
    for (label, mode, cfg, gains) in &variant_setups {
        if plan.scale_exponents.is_empty() {
            jobs.push(Job {
                label: label.clone(),
                mode: *mode,
                scale_exponent: None,
                config: cfg,
                gains: gains.clone(),
                perturbed,
                sim: sim.clone(),
            });
        } else {
            for &m in &plan.scale_exponents {
                jobs.push(Job {
                    label: format!("{label}_m{m:+}"),
                    mode: *mode,
                    scale_exponent: Some(m),
                    config: cfg,
                    gains: gains.clone(),
                    perturbed,
                    sim: sim.clone(),
                });
            }
        }
    }

    let records = if jobs.len() == 1 {
        vec![run_job(jobs.pop().expect("one job"))?]
    } else {
        let outcomes: Vec<Result<RunRecord, ExperimentError>> = thread::scope(|s| {
            let handles: Vec<_> = jobs
                .into_iter()
                .map(|job| s.spawn(move || run_job(job)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation job panicked"))
                .collect()
        });
        outcomes.into_iter().collect::<Result<Vec<_>, _>>()?
    };

    Ok(ExperimentResult {
        name: plan.config.name.clone(),
        perturbed,
        expectation: plan.expectation.clone(),
        records,
    })
}

/// Metrics summary lines for a result, in stable order.
pub fn metrics_lines(result: &ExperimentResult) -> Vec<(String, String)> {
    let mut lines = vec![
        ("experiment".to_string(), result.name.clone()),
        ("perturbed".to_string(), result.perturbed.to_string()),
    ];
    if let Some(exp) = &result.expectation {
        lines.push(("expectation".to_string(), exp.clone()));
    }
    for r in &result.records {
        let settling = match r.settling_time {
            Some(t) => simulation::format_full(t),
            None => "none".to_string(),
        };
        lines.push((format!("{}_settling_time", r.label), settling));
        lines.push((
            format!("{}_tail_sup", r.label),
            simulation::format_full(r.tail_sup),
        ));
        lines.push((
            format!("{}_final_error", r.label),
            simulation::format_full(r.final_error),
        ));
    }
    lines
}

/// Writes one CSV per record plus `metrics.txt` into `dir`, creating it
/// if needed. Returns the paths written, records first, metrics last.
pub fn write_outputs(
    result: &ExperimentResult,
    dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(SimError::Io)?;
    let mut written = Vec::new();
    for r in &result.records {
        let path = dir.join(format!("{}.csv", r.label));
        let file = std::fs::File::create(&path).map_err(SimError::Io)?;
        let mut out = std::io::BufWriter::new(file);
        simulation::write_error_csv(
            &mut out,
            &r.trajectory,
            r.state_dim,
            r.node_count,
            &r.lyap_norm,
        )?;
        written.push(path);
    }
    let path = dir.join("metrics.txt");
    let file = std::fs::File::create(&path).map_err(SimError::Io)?;
    let mut out = std::io::BufWriter::new(file);
    simulation::write_metrics(&mut out, &metrics_lines(result))?;
    written.push(path);
    Ok(written)
}
