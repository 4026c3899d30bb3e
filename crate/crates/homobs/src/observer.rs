//! Observer network runtime: the plant and sensor models, the scaled
//! correction terms, and the right-hand sides that couple everything for
//! integration.
//!
//! Each node runs a copy of the observer
//!
//! ```text
//! d/dt xhat_i = A xhat_i + B u + gamma(t, xhat_i)
//!             + g(|omega_i|) H_i omega_i
//!             + nu h(theta_i) theta_i
//! ```
//!
//! where `omega_i = C_i xhat_i - y_i` is the local output error and
//! `theta_i = sum_j a_ij (xhat_j - xhat_i)` the consensus error. The
//! scalings `g` and `h` depend on the mode: identity for linear, a single
//! homogeneous power for finite, and a half-sum of a near-origin and a
//! far-from-origin power for fixed. The linear mode also drops the drift
//! term `gamma`, which makes it the classical baseline design.

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{GraphError, Topology};
use crate::homogeneity::{CanonicalNorm, Dilation, HomogeneityError};
use crate::linalg::{self, LinalgError, Matrix};
use crate::signals::{Signal, SignalError, StateNonlinearity};
use crate::synthesis::{GainSet, ObserverMode, SynthesisError};
use crate::tol;

#[derive(Debug, thiserror::Error)]
pub enum ObserverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("output magnitude must be a finite non-negative number, got {0}")]
    BadMagnitude(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Homogeneity(#[from] HomogeneityError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Gains(#[from] SynthesisError),
}

/// The quasilinear plant `dx/dt = A x + B u + gamma(t, x) + q_x(t)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlantModel {
    pub a: Matrix,
    /// Input matrix; present if and only if `input` is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Matrix>,
    /// Known input signal `u(t)`, fed to the plant and every observer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Signal>,
    pub nonlinearity: StateNonlinearity,
    /// Process disturbance `q_x(t)`.
    pub disturbance: Signal,
}

impl PlantModel {
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn validate(&self) -> Result<(), ObserverError> {
        if !self.a.is_square() {
            return Err(ObserverError::Dimension("A must be square".to_string()));
        }
        let n = self.a.rows();
        match (&self.b, &self.input) {
            (Some(b), Some(input)) => {
                if b.rows() != n {
                    return Err(ObserverError::Dimension(format!(
                        "B has {} rows, expected {n}",
                        b.rows()
                    )));
                }
                input.validate()?;
                if input.dim() != b.cols() {
                    return Err(ObserverError::Dimension(format!(
                        "input has dimension {}, but B has {} columns",
                        input.dim(),
                        b.cols()
                    )));
                }
            }
            (None, None) => {}
            _ => {
                return Err(ObserverError::Dimension(
                    "B and the input signal must be supplied together".to_string(),
                ));
            }
        }
        self.nonlinearity
            .validate(n)
            .map_err(ObserverError::Signal)?;
        self.disturbance.validate()?;
        if self.disturbance.dim() != n {
            return Err(ObserverError::Dimension(format!(
                "disturbance has dimension {}, expected {n}",
                self.disturbance.dim()
            )));
        }
        Ok(())
    }

    /// Writes `A x + B u(t) + gamma(t, x) + q_x(t)` into `out`.
    pub fn rhs_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.a.mul_vec_into(x, out);
        if let (Some(b), Some(input)) = (&self.b, &self.input) {
            let u = input.eval(t);
            for (r, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (c, uc) in u.iter().enumerate() {
                    acc += b[(r, c)] * uc;
                }
                *o += acc;
            }
        }
        if !self.nonlinearity.is_zero() {
            let mut g = vec![0.0; x.len()];
            self.nonlinearity.eval_into(t, x, &mut g);
            for (o, gv) in out.iter_mut().zip(&g) {
                *o += gv;
            }
        }
        self.disturbance.add_into(t, out);
    }
}

/// Convenience wrapper returning the plant derivative as a fresh vector.
pub fn plant_rhs(plant: &PlantModel, t: f64, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    plant.rhs_into(t, x, &mut out);
    out
}

/// One sensor node: output map and measurement noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensorNode {
    pub c: Matrix,
    /// Measurement perturbation `q_y(t)`, one channel per output row.
    pub noise: Signal,
}

impl SensorNode {
    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    pub fn validate(&self, state_dim: usize) -> Result<(), ObserverError> {
        if self.c.cols() != state_dim {
            return Err(ObserverError::Dimension(format!(
                "sensor map has {} columns, expected {state_dim}",
                self.c.cols()
            )));
        }
        self.noise.validate()?;
        if self.noise.dim() != self.c.rows() {
            return Err(ObserverError::Dimension(format!(
                "sensor noise has dimension {}, expected {}",
                self.noise.dim(),
                self.c.rows()
            )));
        }
        Ok(())
    }

    /// Writes the measured output `C x + q_y(t)` into `out`.
    pub fn measure_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.c.mul_vec_into(x, out);
        self.noise.add_into(t, out);
    }
}

/// Output-injection scaling `exp(ln(w) * exponent)` at output-error
/// magnitude `w`, where `exponent = mu (G0 + I)`.
///
/// Below [`tol::GAIN_ZERO_FLOOR`] the zero matrix is returned: for the
/// degrees this crate admits the full injection term `g(w) H omega` tends
/// to zero with `w`, and the zero matrix encodes that limit without
/// evaluating a diverging power.
pub fn homogeneous_output_gain(
    exponent: &Matrix,
    magnitude: f64,
) -> Result<Matrix, ObserverError> {
    if !magnitude.is_finite() || magnitude < 0.0 {
        return Err(ObserverError::BadMagnitude(magnitude));
    }
    if magnitude < tol::GAIN_ZERO_FLOOR {
        return Ok(Matrix::zeros(exponent.rows(), exponent.cols()));
    }
    Ok(linalg::mat_exp(&exponent.scaled(magnitude.ln()))?)
}

/// Consensus scaling `||theta||_d^mu` with the canonical homogeneous norm
/// of the design dilation. Zero below the norm floor, for the same
/// limiting reason as [`homogeneous_output_gain`].
pub fn homogeneous_consensus_gain(
    norm: &CanonicalNorm,
    mu: f64,
    theta: &[f64],
) -> Result<f64, ObserverError> {
    let r = norm.eval(theta)?;
    if r < tol::GAIN_ZERO_FLOOR {
        return Ok(0.0);
    }
    Ok(r.powf(mu))
}

/// Fixed-mode output-injection scaling: half-sum of the near-origin and
/// far-from-origin branches.
pub fn bilimit_output_gain(
    exponent_near: &Matrix,
    exponent_far: &Matrix,
    magnitude: f64,
) -> Result<Matrix, ObserverError> {
    let near = homogeneous_output_gain(exponent_near, magnitude)?;
    let far = homogeneous_output_gain(exponent_far, magnitude)?;
    Ok(near.add(&far).scaled(0.5))
}

/// Fixed-mode consensus scaling: half-sum of the two branch powers.
pub fn bilimit_consensus_gain(
    norm_near: &CanonicalNorm,
    norm_far: &CanonicalNorm,
    mu_near: f64,
    mu_far: f64,
    theta: &[f64],
) -> Result<f64, ObserverError> {
    let near = homogeneous_consensus_gain(norm_near, mu_near, theta)?;
    let far = homogeneous_consensus_gain(norm_far, mu_far, theta)?;
    Ok(0.5 * (near + far))
}

/// Which linear part the stacked error field uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorFieldForm {
    /// The physical error dynamics with drift and disturbances removed:
    /// linear part `A`.
    Full,
    /// Linear part replaced by `A0 = A + L0 C`. This is the field the
    /// homogeneity analysis certifies; it differs from `Full` by
    /// `(I (x) L0 C) e`.
    HomogeneousCore,
}

/// A fully validated observer network with its derived quantities
/// precomputed, ready for integration.
pub struct ObserverNetwork {
    plant: PlantModel,
    sensors: Vec<SensorNode>,
    topology: Topology,
    gains: GainSet,
    a0: Matrix,
    /// Weight of every canonical norm: the certificate weight if the gain
    /// set carries one, the identity otherwise.
    weight: Matrix,
    /// Injection exponent matrices, one per active degree.
    injection_exponents: Vec<Matrix>,
    /// Consensus norms, one per active degree.
    consensus_norms: Vec<CanonicalNorm>,
}

impl ObserverNetwork {
    pub fn new(
        plant: PlantModel,
        sensors: Vec<SensorNode>,
        topology: Topology,
        gains: GainSet,
    ) -> Result<Self, ObserverError> {
        plant.validate()?;
        let n = plant.state_dim();
        if sensors.is_empty() {
            return Err(ObserverError::Dimension(
                "at least one sensor node is required".to_string(),
            ));
        }
        for s in &sensors {
            s.validate(n)?;
        }
        if sensors.len() != topology.node_count() {
            return Err(ObserverError::Dimension(format!(
                "{} sensors for a {}-node network",
                sensors.len(),
                topology.node_count()
            )));
        }
        let c_blocks: Vec<Matrix> = sensors.iter().map(|s| s.c.clone()).collect();
        gains.validate(&plant.a, &c_blocks)?;

        let p_total: usize = c_blocks.iter().map(|c| c.rows()).sum();
        let mut c_full = Matrix::zeros(p_total, n);
        let mut row = 0;
        for c in &c_blocks {
            c_full.set_block(row, 0, c);
            row += c.rows();
        }
        let a0 = plant.a.add(&gains.l0.matmul(&c_full));

        // The consensus norm weight: the certificate weight when present,
        // otherwise the identity (injected gain sets carry no weight; any
        // admissible weight yields an equivalent norm up to constants).
        let weight = gains
            .p_a
            .clone()
            .unwrap_or_else(|| Matrix::identity(n));
        let mut injection_exponents = Vec::new();
        let mut consensus_norms = Vec::new();
        for mu in gains.degrees() {
            injection_exponents.push(gains.injection_exponent(mu));
            let dilation = Dilation::new(gains.dilation_generator(mu))?;
            consensus_norms.push(CanonicalNorm::new(dilation, weight.clone())?);
        }
        Ok(Self {
            plant,
            sensors,
            topology,
            gains,
            a0,
            weight,
            injection_exponents,
            consensus_norms,
        })
    }

    pub fn plant(&self) -> &PlantModel {
        &self.plant
    }

    pub fn sensors(&self) -> &[SensorNode] {
        &self.sensors
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn gains(&self) -> &GainSet {
        &self.gains
    }

    pub fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }

    pub fn node_count(&self) -> usize {
        self.sensors.len()
    }

    /// Dimension of the coupled state `[x; xhat_1; ...; xhat_N]`.
    pub fn coupled_dim(&self) -> usize {
        self.state_dim() * (self.node_count() + 1)
    }

    /// Linear part of the homogeneous core field, `A + L0 C`.
    pub fn core_matrix(&self) -> &Matrix {
        &self.a0
    }

    /// Canonical norm on the stacked error space, used as the convergence
    /// metric: block dilation `I_N (x) d` with block weight `I_N (x) W`.
    /// The linear mode designs no dilation, so it gets the Euler one (a
    /// plain weighted Euclidean norm); the fixed mode uses its near-origin
    /// degree, the branch that governs terminal convergence.
    pub fn stacked_error_norm(&self) -> Result<CanonicalNorm, ObserverError> {
        let count = self.node_count();
        let block_weight = linalg::kron(&Matrix::identity(count), &self.weight);
        let dilation = match self.gains.degrees().first() {
            Some(&mu) => Dilation::new(linalg::kron(
                &Matrix::identity(count),
                &self.gains.dilation_generator(mu),
            ))?,
            None => Dilation::euler(self.state_dim() * count),
        };
        Ok(CanonicalNorm::new(dilation, block_weight)?)
    }

    /// Stacks plant and observer initial conditions into one state vector.
    pub fn assemble_state(&self, x0: &[f64], xhat0: &[f64]) -> Result<Vec<f64>, ObserverError> {
        let n = self.state_dim();
        if x0.len() != n {
            return Err(ObserverError::Dimension(format!(
                "plant state has dimension {}, expected {n}",
                x0.len()
            )));
        }
        if xhat0.len() != n * self.node_count() {
            return Err(ObserverError::Dimension(format!(
                "stacked observer state has dimension {}, expected {}",
                xhat0.len(),
                n * self.node_count()
            )));
        }
        let mut z = Vec::with_capacity(self.coupled_dim());
        z.extend_from_slice(x0);
        z.extend_from_slice(xhat0);
        Ok(z)
    }

    pub fn plant_state<'a>(&self, z: &'a [f64]) -> &'a [f64] {
        &z[..self.state_dim()]
    }

    pub fn observer_state<'a>(&self, z: &'a [f64], node: usize) -> &'a [f64] {
        let n = self.state_dim();
        &z[(node + 1) * n..(node + 2) * n]
    }

    /// Stacked estimation errors `xhat_i - x` for every node.
    pub fn error_stack(&self, z: &[f64]) -> Vec<f64> {
        let n = self.state_dim();
        let x = &z[..n];
        let mut e = Vec::with_capacity(n * self.node_count());
        for i in 0..self.node_count() {
            let xhat = self.observer_state(z, i);
            for k in 0..n {
                e.push(xhat[k] - x[k]);
            }
        }
        e
    }

    fn add_injection(
        &self,
        node: usize,
        omega: &[f64],
        out: &mut [f64],
    ) -> Result<(), ObserverError> {
        let h = &self.gains.h[node];
        match self.gains.mode {
            ObserverMode::Linear => {
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (c, w) in omega.iter().enumerate() {
                        acc += h[(r, c)] * w;
                    }
                    *o += acc;
                }
            }
            ObserverMode::Finite | ObserverMode::Fixed => {
                let mag = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
                if mag < tol::GAIN_ZERO_FLOOR {
                    return Ok(());
                }
                let gain = if self.gains.mode == ObserverMode::Finite {
                    homogeneous_output_gain(&self.injection_exponents[0], mag)?
                } else {
                    bilimit_output_gain(
                        &self.injection_exponents[0],
                        &self.injection_exponents[1],
                        mag,
                    )?
                };
                let hw = h.mul_vec(omega);
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (c, v) in hw.iter().enumerate() {
                        acc += gain[(r, c)] * v;
                    }
                    *o += acc;
                }
            }
        }
        Ok(())
    }

    fn add_consensus(&self, theta: &[f64], out: &mut [f64]) -> Result<(), ObserverError> {
        let scale = match self.gains.mode {
            ObserverMode::Linear => 1.0,
            ObserverMode::Finite => homogeneous_consensus_gain(
                &self.consensus_norms[0],
                self.gains.mu.expect("validated"),
                theta,
            )?,
            ObserverMode::Fixed => bilimit_consensus_gain(
                &self.consensus_norms[0],
                &self.consensus_norms[1],
                self.gains.mu.expect("validated"),
                self.gains.mu_far.expect("validated"),
                theta,
            )?,
        };
        let nu = self.gains.nu;
        for (o, th) in out.iter_mut().zip(theta) {
            *o += nu * scale * th;
        }
        Ok(())
    }

    /// Derivative of the coupled state `z = [x; xhat_1; ...; xhat_N]`.
    pub fn coupled_rhs(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<(), ObserverError> {
        let n = self.state_dim();
        let count = self.node_count();
        debug_assert_eq!(z.len(), self.coupled_dim());
        debug_assert_eq!(out.len(), self.coupled_dim());
        let x = &z[..n];
        self.plant.rhs_into(t, x, &mut out[..n]);

        // Shared known-input contribution for the observers.
        let u_term = match (&self.plant.b, &self.plant.input) {
            (Some(b), Some(input)) => Some(b.mul_vec(&input.eval(t))),
            _ => None,
        };
        let include_drift = self.gains.mode != ObserverMode::Linear;

        let mut omega = Vec::new();
        let mut y = Vec::new();
        let mut theta = vec![0.0; n];
        let mut drift = vec![0.0; n];
        for i in 0..count {
            let xhat = self.observer_state(z, i);
            let sensor = &self.sensors[i];
            let p_i = sensor.output_dim();
            omega.resize(p_i, 0.0);
            y.resize(p_i, 0.0);
            sensor.c.mul_vec_into(xhat, &mut omega);
            sensor.measure_into(t, x, &mut y);
            for (w, yv) in omega.iter_mut().zip(&y) {
                *w -= yv;
            }
            theta.fill(0.0);
            for edge in self.topology.in_edges(i) {
                let other = self.observer_state(z, edge.sender);
                for k in 0..n {
                    theta[k] += edge.weight * (other[k] - xhat[k]);
                }
            }

            let slot = &mut out[(i + 1) * n..(i + 2) * n];
            self.plant.a.mul_vec_into(xhat, slot);
            if let Some(u) = &u_term {
                for (o, uv) in slot.iter_mut().zip(u) {
                    *o += uv;
                }
            }
            if include_drift && !self.plant.nonlinearity.is_zero() {
                self.plant.nonlinearity.eval_into(t, xhat, &mut drift);
                for (o, d) in slot.iter_mut().zip(&drift) {
                    *o += d;
                }
            }
            self.add_injection(i, &omega, slot)?;
            self.add_consensus(&theta, slot)?;
        }
        Ok(())
    }

    /// Derivative of the stacked estimation error `e = [e_1; ...; e_N]`
    /// with the drift and all disturbances removed, so the field is
    /// autonomous in `e`. The `HomogeneousCore` form swaps the linear part
    /// `A` for `A0`; with the design equations satisfied the core field is
    /// homogeneous of the mode's degree.
    pub fn stacked_error_rhs(
        &self,
        e: &[f64],
        form: ErrorFieldForm,
        out: &mut [f64],
    ) -> Result<(), ObserverError> {
        let n = self.state_dim();
        let count = self.node_count();
        if e.len() != n * count || out.len() != n * count {
            return Err(ObserverError::Dimension(format!(
                "stacked error must have dimension {}",
                n * count
            )));
        }
        let lin = match form {
            ErrorFieldForm::Full => &self.plant.a,
            ErrorFieldForm::HomogeneousCore => &self.a0,
        };
        let mut omega = Vec::new();
        let mut theta = vec![0.0; n];
        for i in 0..count {
            let e_i = &e[i * n..(i + 1) * n];
            let p_i = self.sensors[i].output_dim();
            omega.resize(p_i, 0.0);
            self.sensors[i].c.mul_vec_into(e_i, &mut omega);
            theta.fill(0.0);
            for edge in self.topology.in_edges(i) {
                let e_j = &e[edge.sender * n..(edge.sender + 1) * n];
                for k in 0..n {
                    theta[k] += edge.weight * (e_j[k] - e_i[k]);
                }
            }
            let slot = &mut out[i * n..(i + 1) * n];
            lin.mul_vec_into(e_i, slot);
            self.add_injection(i, &omega, slot)?;
            self.add_consensus(&theta, slot)?;
        }
        Ok(())
    }
}

/// Monte-Carlo estimate of a Hölder constant: the largest ratio
/// `||f(x) - f(y)|| / ||x - y||^exponent` over sampled pairs from the
/// centered unit box. For a field homogeneous of negative degree `mu` the
/// natural exponent is `1 + mu`; the resulting constant governs the step
/// floor an explicit integrator can resolve near the origin.
pub fn estimate_holder_constant<F>(
    field: F,
    dim: usize,
    exponent: f64,
    samples: usize,
    seed: u64,
) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    let mut best = 0.0f64;
    for _ in 0..samples {
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        let dist = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist < 1e-9 {
            continue;
        }
        let fx = field(&x);
        let fy = field(&y);
        let dv = fx
            .iter()
            .zip(&fy)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        best = best.max(dv / dist.powf(exponent));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Topology;
    use crate::synthesis::{solve_structure_equation, ObserverMode};

    fn bench_plant() -> PlantModel {
        PlantModel {
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
            disturbance: Signal::zero(3),
        }
    }

    fn bench_sensors() -> Vec<SensorNode> {
        let c1 = Matrix::from_rows(vec![vec![0.0, 0.0, 2.0], vec![0.0, 0.0, 2.0]]).unwrap();
        let c2 = Matrix::from_rows(vec![vec![0.0, 0.0, 3.0]]).unwrap();
        let c3 = Matrix::from_rows(vec![vec![0.0, 1.0, 0.0], vec![3.0, 2.0, 2.0]]).unwrap();
        [c1, c2, c3]
            .into_iter()
            .map(|c| {
                let dim = c.rows();
                SensorNode {
                    c,
                    noise: Signal::zero(dim),
                }
            })
            .collect()
    }

    fn bench_gains(mode: ObserverMode) -> GainSet {
        let plant = bench_plant();
        let sensors = bench_sensors();
        let mut c_full = Matrix::zeros(5, 3);
        let mut row = 0;
        for s in &sensors {
            c_full.set_block(row, 0, &s.c);
            row += s.c.rows();
        }
        let structure = solve_structure_equation(&plant.a, &c_full).unwrap();
        let (h1, h3, mu, mu_far) = match mode {
            ObserverMode::Fixed => (
                Matrix::from_rows(vec![
                    vec![3.63, 0.0],
                    vec![-2.60, 0.0],
                    vec![-5.44, 0.0],
                ])
                .unwrap(),
                Matrix::from_rows(vec![
                    vec![1.69, -3.69],
                    vec![-10.33, -0.23],
                    vec![-0.68, -0.02],
                ])
                .unwrap(),
                Some(-0.65),
                Some(0.65),
            ),
            ObserverMode::Finite => (
                Matrix::from_rows(vec![
                    vec![3.15, 0.0],
                    vec![-1.50, 0.0],
                    vec![-4.71, 0.0],
                ])
                .unwrap(),
                Matrix::from_rows(vec![
                    vec![3.30, -3.15],
                    vec![-9.37, 0.0],
                    vec![0.0, 0.0],
                ])
                .unwrap(),
                Some(-0.65),
                None,
            ),
            ObserverMode::Linear => (
                Matrix::from_rows(vec![
                    vec![3.15, 0.0],
                    vec![-1.50, 0.0],
                    vec![-4.71, 0.0],
                ])
                .unwrap(),
                Matrix::from_rows(vec![
                    vec![3.30, -3.15],
                    vec![-9.37, 0.0],
                    vec![0.0, 0.0],
                ])
                .unwrap(),
                None,
                None,
            ),
        };
        GainSet {
            mode,
            mu,
            mu_far,
            g0: structure.g0.clone(),
            l0: structure.l0.clone(),
            h: vec![
                h1.scaled(3.0),
                Matrix::zeros(3, 1),
                h3.scaled(3.0),
            ],
            nu: 10.0,
            p_a: None,
            rho: None,
        }
    }

    fn bench_network(mode: ObserverMode) -> ObserverNetwork {
        ObserverNetwork::new(
            bench_plant(),
            bench_sensors(),
            Topology::ring(3).unwrap(),
            bench_gains(mode),
        )
        .unwrap()
    }

    #[test]
    fn output_gain_scalar_dilation_is_plain_power() {
        // exponent = mu * I collapses to w^mu * I.
        let exponent = Matrix::identity(3).scaled(-0.65);
        let g = homogeneous_output_gain(&exponent, 0.5).unwrap();
        let expected = 0.5f64.powf(-0.65);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { expected } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < 1e-12);
            }
        }
        // Floor and exact zero return the zero matrix.
        assert_eq!(homogeneous_output_gain(&exponent, 0.0).unwrap().max_abs(), 0.0);
        assert_eq!(
            homogeneous_output_gain(&exponent, 1e-310).unwrap().max_abs(),
            0.0
        );
        assert!(homogeneous_output_gain(&exponent, f64::NAN).is_err());
        assert!(homogeneous_output_gain(&exponent, -1.0).is_err());
    }

    #[test]
    fn injection_term_decreases_to_zero_with_output_error() {
        // The full term g(w) H (w u) has norm proportional to w^(1+mu),
        // so it must fall monotonically as w drops.
        let exponent = Matrix::identity(3).scaled(-0.65);
        let h = Matrix::from_rows(vec![
            vec![3.15, 0.0],
            vec![-1.50, 0.0],
            vec![-4.71, 0.0],
        ])
        .unwrap();
        let dir = [0.6, -0.8];
        let mut last = f64::INFINITY;
        for k in 1..=12 {
            let w = 10f64.powi(-k);
            let omega: Vec<f64> = dir.iter().map(|d| d * w).collect();
            let gain = homogeneous_output_gain(&exponent, w).unwrap();
            let term = gain.mul_vec(&h.mul_vec(&omega));
            let norm = term.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < last, "w={w}: {norm} !< {last}");
            last = norm;
        }
        // Norm scales as w^(1+mu) = w^0.35: about 2e-4 at w = 1e-12.
        assert!(last < 1e-3);
    }

    #[test]
    fn consensus_gain_floors_at_zero() {
        let norm = CanonicalNorm::new(Dilation::euler(3), Matrix::identity(3)).unwrap();
        let g = homogeneous_consensus_gain(&norm, -0.65, &[0.3, 0.0, 0.4]).unwrap();
        assert!((g - 0.5f64.powf(-0.65)).abs() < 1e-12);
        assert_eq!(
            homogeneous_consensus_gain(&norm, -0.65, &[0.0, 0.0, 0.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn bilimit_blend_is_identity_at_unit_magnitude() {
        // Both branches evaluate to the identity at w = 1, so the blend
        // does too, and the two modes agree there.
        let near = Matrix::identity(2).scaled(-0.65);
        let far = Matrix::identity(2).scaled(0.65);
        let g = bilimit_output_gain(&near, &far, 1.0).unwrap();
        assert!(g.max_abs_diff(&Matrix::identity(2)) < 1e-14);
        // Far from the origin the positive branch dominates; near it the
        // negative branch does.
        let big = bilimit_output_gain(&near, &far, 100.0).unwrap();
        assert!(big[(0, 0)] > 0.5 * 100f64.powf(0.65));
        let small = bilimit_output_gain(&near, &far, 0.01).unwrap();
        assert!(small[(0, 0)] > 0.5 * 0.01f64.powf(-0.65));
    }

    #[test]
    fn coupled_rhs_matches_hand_assembly() {
        let net = bench_network(ObserverMode::Finite);
        // Observers at the origin, plant displaced: consensus terms vanish
        // and each observer sees omega_i = -C_i x.
        let x0 = [-1.0, 0.0, 1.0];
        let z = net.assemble_state(&x0, &[0.0; 9]).unwrap();
        let mut out = vec![0.0; net.coupled_dim()];
        net.coupled_rhs(0.0, &z, &mut out).unwrap();

        // Plant: A x + gamma(x).
        let gamma = 0.02 * (2.0f64).sqrt().powf(0.1);
        assert!((out[0] - 0.0).abs() < 1e-15);
        assert!((out[1] - (1.0 + gamma)).abs() < 1e-15);
        assert!((out[2] - 0.0).abs() < 1e-15);

        for i in 0..3 {
            let sensor = &net.sensors()[i];
            let omega: Vec<f64> = sensor.c.mul_vec(&x0).iter().map(|v| -v).collect();
            let mag = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut expected = vec![0.0; 3];
            // Observer at the origin: A xhat = 0 and gamma(0) = 0; only
            // the injection term remains.
            if mag >= tol::GAIN_ZERO_FLOOR {
                let gain = mag.powf(-0.65);
                let hw = net.gains().h[i].mul_vec(&omega);
                for k in 0..3 {
                    expected[k] = gain * hw[k];
                }
            }
            for k in 0..3 {
                assert!(
                    (out[(i + 1) * 3 + k] - expected[k]).abs() < 1e-12,
                    "node {i} component {k}"
                );
            }
        }
    }

    #[test]
    fn error_stack_and_state_assembly() {
        let net = bench_network(ObserverMode::Linear);
        let x0 = [1.0, 2.0, 3.0];
        let xhat = [
            1.5, 2.0, 3.0, // node 0
            1.0, 1.0, 3.0, // node 1
            0.0, 0.0, 0.0, // node 2
        ];
        let z = net.assemble_state(&x0, &xhat).unwrap();
        let e = net.error_stack(&z);
        assert_eq!(e[0], 0.5);
        assert_eq!(e[4], -1.0);
        assert_eq!(&e[6..9], &[-1.0, -2.0, -3.0]);
        assert!(net.assemble_state(&x0, &[0.0; 6]).is_err());
    }

    #[test]
    fn core_error_field_is_homogeneous() {
        // For this system A0 vanishes, so the core field consists of the
        // scaled corrections only and is exactly homogeneous of degree mu
        // under the standard dilation. The full field is not: the A-term
        // has degree zero.
        let net = bench_network(ObserverMode::Finite);
        assert!(net.core_matrix().max_abs() < 1e-12);
        let net_ref = &net;
        let field = |form: ErrorFieldForm| {
            move |e: &[f64]| {
                let mut out = vec![0.0; e.len()];
                net_ref.stacked_error_rhs(e, form, &mut out).unwrap();
                out
            }
        };
        let dilation = Dilation::euler(9);
        let core = crate::homogeneity::check_field_homogeneity(
            field(ErrorFieldForm::HomogeneousCore),
            &dilation,
            -0.65,
            100,
            (-2.0, 2.0),
            7,
        )
        .unwrap();
        assert!(core.max_residual < 1e-9, "residual {}", core.max_residual);
        let full = crate::homogeneity::check_field_homogeneity(
            field(ErrorFieldForm::Full),
            &dilation,
            -0.65,
            100,
            (-2.0, 2.0),
            7,
        )
        .unwrap();
        assert!(full.max_residual > 1e-2);
    }

    #[test]
    fn full_and_core_fields_differ_by_linear_correction() {
        let net = bench_network(ObserverMode::Finite);
        let e: Vec<f64> = (0..9).map(|k| 0.1 * (k as f64) - 0.35).collect();
        let mut full = vec![0.0; 9];
        let mut core = vec![0.0; 9];
        net.stacked_error_rhs(&e, ErrorFieldForm::Full, &mut full)
            .unwrap();
        net.stacked_error_rhs(&e, ErrorFieldForm::HomogeneousCore, &mut core)
            .unwrap();
        // core - full = (I (x) (A0 - A)) e, per node.
        let diff_mat = net.core_matrix().sub(&net.plant().a);
        for i in 0..3 {
            let d = diff_mat.mul_vec(&e[i * 3..(i + 1) * 3]);
            for k in 0..3 {
                assert!((core[i * 3 + k] - full[i * 3 + k] - d[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn error_field_matches_coupled_differences() {
        // With the drift and every disturbance off, the stacked error
        // field must agree with the nodewise differences of the coupled
        // dynamics. The known input cancels in the difference, so it is
        // kept on to exercise that cancellation.
        let mut plant = bench_plant();
        plant.nonlinearity = StateNonlinearity::Zero;
        plant.b = Some(Matrix::column(&[0.0, 0.0, 1.0]));
        plant.input = Some(Signal::Sinusoid {
            channels: vec![crate::signals::Channel {
                waveform: crate::signals::Waveform::Sin,
                amplitude: 0.7,
                frequency: 1.3,
            }],
        });
        let net = ObserverNetwork::new(
            plant,
            bench_sensors(),
            Topology::ring(3).unwrap(),
            bench_gains(ObserverMode::Finite),
        )
        .unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t = 0.37;
        for _ in 0..200 {
            let z: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut dz = vec![0.0; 12];
            net.coupled_rhs(t, &z, &mut dz).unwrap();
            let e = net.error_stack(&z);
            let mut de = vec![0.0; 9];
            net.stacked_error_rhs(&e, ErrorFieldForm::Full, &mut de)
                .unwrap();
            for i in 0..3 {
                for k in 0..3 {
                    let diff = dz[(i + 1) * 3 + k] - dz[k];
                    assert!(
                        (de[i * 3 + k] - diff).abs() < 1e-12,
                        "node {i} component {k}: {} vs {}",
                        de[i * 3 + k],
                        diff
                    );
                }
            }
        }
    }

    #[test]
    fn stacked_norm_matches_mode_structure() {
        // Finite mode with a zero generator: block dilation is Euler with
        // weight I, so the stacked norm is the plain Euclidean norm.
        let net = bench_network(ObserverMode::Finite);
        let norm = net.stacked_error_norm().unwrap();
        let e: Vec<f64> = (0..9).map(|k| 0.3 * (k as f64) - 1.2).collect();
        let euclid = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm.eval(&e).unwrap() - euclid).abs() < 1e-10);
        // Linear mode gets the same norm by the Euler fallback.
        let lin = bench_network(ObserverMode::Linear);
        let norm = lin.stacked_error_norm().unwrap();
        assert!((norm.eval(&e).unwrap() - euclid).abs() < 1e-10);
    }

    #[test]
    fn fixed_mode_network_constructs_and_evaluates() {
        let net = bench_network(ObserverMode::Fixed);
        let e: Vec<f64> = (0..9).map(|k| ((k as f64) * 0.7).sin()).collect();
        let mut out = vec![0.0; 9];
        net.stacked_error_rhs(&e, ErrorFieldForm::Full, &mut out)
            .unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn holder_estimate_brackets_known_constants() {
        // Linear map: the Lipschitz constant is the spectral norm (here 2
        // for diag(2, 1)); box sampling must get close without exceeding
        // it.
        let m = Matrix::from_rows(vec![vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let k = estimate_holder_constant(|x| m.mul_vec(x), 2, 1.0, 4000, 11);
        assert!(k <= 2.0 + 1e-9, "k = {k}");
        assert!(k > 1.6, "k = {k}");
        // Scalar fractional power: | |a|^r - |b|^r | <= |a - b|^r for
        // r in (0, 1], with equality approached against zero.
        let k = estimate_holder_constant(|x| vec![x[0].abs().powf(0.35)], 1, 0.35, 4000, 12);
        assert!(k <= 1.0 + 1e-9, "k = {k}");
        assert!(k > 0.8, "k = {k}");
    }

    #[test]
    fn network_construction_validates_shapes() {
        let plant = bench_plant();
        let sensors = bench_sensors();
        let gains = bench_gains(ObserverMode::Finite);
        // Wrong node count.
        assert!(ObserverNetwork::new(
            plant.clone(),
            sensors.clone(),
            Topology::ring(4).unwrap(),
            gains.clone(),
        )
        .is_err());
        // Noise dimension mismatch.
        let mut bad = sensors.clone();
        bad[1].noise = Signal::zero(2);
        assert!(ObserverNetwork::new(
            plant.clone(),
            bad,
            Topology::ring(3).unwrap(),
            gains.clone(),
        )
        .is_err());
        // Input matrix without input signal.
        let mut bad_plant = plant;
        bad_plant.b = Some(Matrix::column(&[0.0, 0.0, 1.0]));
        assert!(ObserverNetwork::new(
            bad_plant,
            sensors,
            Topology::ring(3).unwrap(),
            gains,
        )
        .is_err());
    }
}
