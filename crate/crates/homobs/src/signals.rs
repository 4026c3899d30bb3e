//! Time signals and state nonlinearities used by the plant and sensor
//! models: process disturbances, measurement noise, and the bounded
//! nonlinear drift term of the plant.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("signal has dimension {actual}, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid signal parameter: {0}")]
    BadParameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Sin,
    Cos,
}

/// One scalar channel `amplitude * waveform(frequency * t)`. The
/// frequency is angular (radians per second).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub waveform: Waveform,
    pub amplitude: f64,
    pub frequency: f64,
}

impl Channel {
    pub fn eval(&self, t: f64) -> f64 {
        let phase = self.frequency * t;
        let base = match self.waveform {
            Waveform::Sin => phase.sin(),
            Waveform::Cos => phase.cos(),
        };
        self.amplitude * base
    }
}

/// Deterministic vector-valued time signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Signal {
    /// Identically zero with an explicit dimension.
    Zero { dim: usize },
    /// One sinusoidal channel per component. Silent components use zero
    /// amplitude.
    Sinusoid { channels: Vec<Channel> },
}

impl Signal {
    pub fn zero(dim: usize) -> Self {
        Signal::Zero { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            Signal::Zero { dim } => *dim,
            Signal::Sinusoid { channels } => channels.len(),
        }
    }

    /// True when the signal is structurally zero (every amplitude
    /// vanishes).
    pub fn is_zero(&self) -> bool {
        match self {
            Signal::Zero { .. } => true,
            Signal::Sinusoid { channels } => channels.iter().all(|c| c.amplitude == 0.0),
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        match self {
            Signal::Zero { dim } => {
                if *dim == 0 {
                    return Err(SignalError::BadParameter(
                        "zero signal needs a positive dimension".to_string(),
                    ));
                }
            }
            Signal::Sinusoid { channels } => {
                if channels.is_empty() {
                    return Err(SignalError::BadParameter(
                        "sinusoid signal needs at least one channel".to_string(),
                    ));
                }
                for (i, ch) in channels.iter().enumerate() {
                    if !(ch.amplitude.is_finite() && ch.frequency.is_finite()) {
                        return Err(SignalError::BadParameter(format!(
                            "channel {i} has non-finite parameters"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        match self {
            Signal::Zero { .. } => out.fill(0.0),
            Signal::Sinusoid { channels } => {
                for (o, ch) in out.iter_mut().zip(channels) {
                    *o = ch.eval(t);
                }
            }
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    /// Adds the signal value onto an accumulator without an intermediate
    /// buffer.
    pub fn add_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        if let Signal::Sinusoid { channels } = self {
            for (o, ch) in out.iter_mut().zip(channels) {
                *o += ch.eval(t);
            }
        }
    }
}

/// Nonlinear drift term `gamma(t, x)` of the plant. The designs in this
/// crate assume it is bounded by a sublinear power of the state norm, so
/// the built-in variants keep to that class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateNonlinearity {
    Zero,
    /// `coeff * |x|^exponent` with the Euclidean state norm.
    NormPower { coeff: Vec<f64>, exponent: f64 },
    /// `M x`, useful for modeling known linear cross couplings.
    LinearMap { matrix: Matrix },
}

impl StateNonlinearity {
    pub fn is_zero(&self) -> bool {
        match self {
            StateNonlinearity::Zero => true,
            StateNonlinearity::NormPower { coeff, .. } => coeff.iter().all(|&c| c == 0.0),
            StateNonlinearity::LinearMap { matrix } => matrix.max_abs() == 0.0,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<(), SignalError> {
        match self {
            StateNonlinearity::Zero => Ok(()),
            StateNonlinearity::NormPower { coeff, exponent } => {
                if coeff.len() != state_dim {
                    return Err(SignalError::DimensionMismatch {
                        expected: state_dim,
                        actual: coeff.len(),
                    });
                }
                if !coeff.iter().all(|c| c.is_finite()) {
                    return Err(SignalError::BadParameter(
                        "norm-power coefficients must be finite".to_string(),
                    ));
                }
                if !(exponent.is_finite() && *exponent > 0.0) {
                    return Err(SignalError::BadParameter(format!(
                        "norm-power exponent must be positive, got {exponent}"
                    )));
                }
                Ok(())
            }
            StateNonlinearity::LinearMap { matrix } => {
                if matrix.rows() != state_dim || matrix.cols() != state_dim {
                    return Err(SignalError::DimensionMismatch {
                        expected: state_dim,
                        actual: matrix.rows(),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn eval_into(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            StateNonlinearity::Zero => out.fill(0.0),
            StateNonlinearity::NormPower { coeff, exponent } => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let scale = if norm == 0.0 { 0.0 } else { norm.powf(*exponent) };
                for (o, c) in out.iter_mut().zip(coeff) {
                    *o = c * scale;
                }
            }
            StateNonlinearity::LinearMap { matrix } => matrix.mul_vec_into(x, out),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.eval_into(t, x, &mut out);
        out
    }
}
