//! Fixed-step integration, trajectory capture, and the metrics the
//! experiments report: settling times, tail suprema, and Lyapunov
//! monotonicity samples. Also the CSV and metrics writers, kept here so
//! every front end emits byte-identical files for identical runs.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::homogeneity::{CanonicalNorm, HomogeneityError};
use crate::observer::ObserverError;
use crate::tol;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("bad simulation parameters: {0}")]
    BadParameters(String),
    #[error("state diverged at t = {t}")]
    Diverged { t: f64 },
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Homogeneity(#[from] HomogeneityError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    /// Explicit Euler. The default; with the zero-floor convention on the
    /// scaled gains it tolerates the non-Lipschitz origin at the price of
    /// a chatter floor of order `(h K)^(1/-mu)`.
    Euler,
    /// Classical fourth-order Runge-Kutta, for runs that need the error
    /// trajectory resolved well below the Euler chatter floor.
    Rk4,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub integrator: Integrator,
    /// Step size.
    pub h: f64,
    /// Horizon; the actual final time is `round(t_end / h)` steps of `h`.
    pub t_end: f64,
    /// Store every k-th step (the initial and final states are always
    /// kept).
    #[serde(default = "default_store_every")]
    pub store_every: usize,
}

fn default_store_every() -> usize {
    1
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !self.h.is_finite() || self.h <= 0.0 {
            return Err(SimError::BadParameters(format!(
                "step size must be positive, got {}",
                self.h
            )));
        }
        if !self.t_end.is_finite() || self.t_end < self.h {
            return Err(SimError::BadParameters(format!(
                "horizon must cover at least one step, got t_end = {}",
                self.t_end
            )));
        }
        if self.store_every == 0 {
            return Err(SimError::BadParameters(
                "store_every must be at least 1".to_string(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.h).round() as usize
    }
}

/// A captured trajectory: `times[k]` is the time of `states[k]`. All
/// stored states have the same dimension.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("non-empty trajectory")
    }
}

fn check_finite(x: &[f64], t: f64) -> Result<(), SimError> {
    for v in x {
        if !v.is_finite() || v.abs() > tol::DIVERGENCE_LIMIT {
            return Err(SimError::Diverged { t });
        }
    }
    Ok(())
}

/// Integrates `dx/dt = rhs(t, x)` from `x0` with the fixed-step scheme in
/// `cfg`. Purely sequential floating-point work, so identical inputs give
/// bit-identical trajectories.
pub fn integrate<F>(mut rhs: F, x0: &[f64], cfg: &SimConfig) -> Result<Trajectory, SimError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), SimError>,
{
    cfg.validate()?;
    let dim = x0.len();
    let steps = cfg.steps();
    let h = cfg.h;
    let mut x = x0.to_vec();
    check_finite(&x, 0.0)?;

    let mut times = Vec::with_capacity(steps / cfg.store_every + 2);
    let mut states = Vec::with_capacity(steps / cfg.store_every + 2);
    times.push(0.0);
    states.push(x.clone());

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut stage = vec![0.0; dim];

    for step in 0..steps {
        let t = step as f64 * h;
        match cfg.integrator {
            Integrator::Euler => {
                rhs(t, &x, &mut k1)?;
                for (xv, kv) in x.iter_mut().zip(&k1) {
                    *xv += h * kv;
                }
            }
            Integrator::Rk4 => {
                rhs(t, &x, &mut k1)?;
                for i in 0..dim {
                    stage[i] = x[i] + 0.5 * h * k1[i];
                }
                rhs(t + 0.5 * h, &stage, &mut k2)?;
                for i in 0..dim {
                    stage[i] = x[i] + 0.5 * h * k2[i];
                }
                rhs(t + 0.5 * h, &stage, &mut k3)?;
                for i in 0..dim {
                    stage[i] = x[i] + h * k3[i];
                }
                rhs(t + h, &stage, &mut k4)?;
                for i in 0..dim {
                    x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        let t_next = (step + 1) as f64 * h;
        check_finite(&x, t_next)?;
        if (step + 1) % cfg.store_every == 0 || step + 1 == steps {
            times.push(t_next);
            states.push(x.clone());
        }
    }
    Ok(Trajectory { times, states })
}

/// Euclidean norm of a slice.
pub fn euclidean(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// First stored time after which `metric` stays at or below `threshold`
/// for the rest of the horizon. `None` if the final sample still
/// violates; the initial time if no sample ever does.
pub fn settling_time<F>(traj: &Trajectory, metric: F, threshold: f64) -> Option<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut last_violation = None;
    for (i, s) in traj.states.iter().enumerate() {
        if metric(s) > threshold {
            last_violation = Some(i);
        }
    }
    match last_violation {
        None => Some(traj.times[0]),
        Some(i) if i + 1 == traj.states.len() => None,
        Some(i) => Some(traj.times[i + 1]),
    }
}

/// Supremum of `metric` over the stored samples in the final `window`
/// seconds of the trajectory.
pub fn tail_sup<F>(traj: &Trajectory, metric: F, window: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let cutoff = traj.last_time() - window;
    traj.times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t >= cutoff)
        .map(|(_, s)| metric(s))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Canonical-norm samples at every `decimation`-th stored state, for
/// monotonicity checks of the Lyapunov candidate.
pub fn lyapunov_samples(
    traj: &Trajectory,
    norm: &CanonicalNorm,
    decimation: usize,
) -> Result<Vec<(f64, f64)>, SimError> {
    if decimation == 0 {
        return Err(SimError::BadParameters(
            "decimation must be at least 1".to_string(),
        ));
    }
    let mut out = Vec::with_capacity(traj.len() / decimation + 1);
    for i in (0..traj.len()).step_by(decimation) {
        out.push((traj.times[i], norm.eval(&traj.states[i])?));
    }
    Ok(out)
}

/// Full-precision decimal rendering used in every emitted file: 17
/// significant digits round-trip any f64 exactly.
pub fn format_full(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a coupled-run trajectory as CSV with header
/// `t,e_norm,el_norm,e1,...,eN`:
/// `e_norm` is the Euclidean norm of the stacked estimation error,
/// `el_norm` the canonical (Lyapunov) norm from `lyap_norm`, and `e<i>`
/// the per-node Euclidean error norms. Rows are newline-terminated, all
/// values at full double precision.
pub fn write_error_csv<W: Write>(
    out: &mut W,
    traj: &Trajectory,
    state_dim: usize,
    node_count: usize,
    lyap_norm: &CanonicalNorm,
) -> Result<(), SimError> {
    let n = state_dim;
    if traj.dim() != n * (node_count + 1) {
        return Err(SimError::BadParameters(format!(
            "trajectory dimension {} does not match {} nodes of a {n}-state plant",
            traj.dim(),
            node_count
        )));
    }
    write!(out, "t,e_norm,el_norm")?;
    for i in 1..=node_count {
        write!(out, ",e{i}")?;
    }
    writeln!(out)?;
    let mut e = vec![0.0; n * node_count];
    for (t, z) in traj.times.iter().zip(&traj.states) {
        let x = &z[..n];
        for i in 0..node_count {
            let xhat = &z[(i + 1) * n..(i + 2) * n];
            for k in 0..n {
                e[i * n + k] = xhat[k] - x[k];
            }
        }
        write!(out, "{}", format_full(*t))?;
        write!(out, ",{}", format_full(euclidean(&e)))?;
        write!(out, ",{}", format_full(lyap_norm.eval(&e)?))?;
        for i in 0..node_count {
            write!(out, ",{}", format_full(euclidean(&e[i * n..(i + 1) * n])))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes a metrics summary as `key=value` lines, in the given order.
pub fn write_metrics<W: Write>(out: &mut W, pairs: &[(String, String)]) -> Result<(), SimError> {
    for (k, v) in pairs {
        writeln!(out, "{k}={v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogeneity::Dilation;
    use crate::linalg::Matrix;

    fn decay_rhs(_t: f64, x: &[f64], out: &mut [f64]) -> Result<(), SimError> {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -v;
        }
        Ok(())
    }

    fn terminal_error(integrator: Integrator, h: f64) -> f64 {
        let cfg = SimConfig {
            integrator,
            h,
            t_end: 1.0,
            store_every: usize::MAX,
        };
        let traj = integrate(decay_rhs, &[1.0], &cfg).unwrap();
        (traj.last_state()[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn integrators_converge_at_their_orders() {
        // Halving h must shrink the terminal error by about 2^p. Allow a
        // generous band around the predicted factor.
        let e1 = terminal_error(Integrator::Euler, 2e-3);
        let e2 = terminal_error(Integrator::Euler, 1e-3);
        let ratio = e1 / e2;
        assert!((0.2 * 2.0..5.0 * 2.0).contains(&ratio), "euler ratio {ratio}");

        let e1 = terminal_error(Integrator::Rk4, 2e-2);
        let e2 = terminal_error(Integrator::Rk4, 1e-2);
        let ratio = e1 / e2;
        assert!(
            (0.2 * 16.0..5.0 * 16.0).contains(&ratio),
            "rk4 ratio {ratio}"
        );
    }

    #[test]
    fn rk4_is_far_more_accurate_than_euler() {
        assert!(terminal_error(Integrator::Rk4, 1e-2) < 1e-9);
        assert!(terminal_error(Integrator::Euler, 1e-2) > 1e-4);
    }

    #[test]
    fn storage_keeps_endpoints_and_decimates() {
        let cfg = SimConfig {
            integrator: Integrator::Euler,
            h: 0.1,
            t_end: 1.0,
            store_every: 1,
        };
        let traj = integrate(decay_rhs, &[1.0], &cfg).unwrap();
        assert_eq!(traj.len(), 11);
        assert_eq!(traj.times[0], 0.0);
        assert!((traj.last_time() - 1.0).abs() < 1e-12);

        let cfg = SimConfig {
            store_every: 7,
            ..cfg
        };
        let traj = integrate(decay_rhs, &[1.0], &cfg).unwrap();
        // Initial state, step 7, and the forced final step 10.
        assert_eq!(traj.len(), 3);
        assert!((traj.times[1] - 0.7).abs() < 1e-12);
        assert!((traj.last_time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported_with_time() {
        let growth = |_t: f64, x: &[f64], out: &mut [f64]| -> Result<(), SimError> {
            out[0] = 1e7 * x[0];
            Ok(())
        };
        let cfg = SimConfig {
            integrator: Integrator::Euler,
            h: 1.0,
            t_end: 10.0,
            store_every: 1,
        };
        match integrate(growth, &[1.0], &cfg) {
            Err(SimError::Diverged { t }) => assert!(t > 0.0 && t <= 10.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let cfg = SimConfig {
            integrator: Integrator::Euler,
            h: 0.0,
            t_end: 1.0,
            store_every: 1,
        };
        assert!(matches!(
            integrate(decay_rhs, &[1.0], &cfg),
            Err(SimError::BadParameters(_))
        ));
        let cfg = SimConfig {
            integrator: Integrator::Euler,
            h: 0.1,
            t_end: 1.0,
            store_every: 0,
        };
        assert!(matches!(
            integrate(decay_rhs, &[1.0], &cfg),
            Err(SimError::BadParameters(_))
        ));
    }

    #[test]
    fn settling_time_semantics() {
        let traj = Trajectory {
            times: vec![0.0, 1.0, 2.0, 3.0],
            states: vec![vec![1.0], vec![0.5], vec![0.005], vec![0.004]],
        };
        let metric = |s: &[f64]| s[0];
        assert_eq!(settling_time(&traj, metric, 1e-2), Some(2.0));
        // Final sample still violating: not settled.
        assert_eq!(settling_time(&traj, metric, 1e-3), None);
        // Never violating: settled from the start.
        assert_eq!(settling_time(&traj, metric, 2.0), Some(0.0));
    }

    #[test]
    fn tail_sup_uses_only_the_window() {
        let traj = Trajectory {
            times: vec![0.0, 1.0, 2.0, 3.0],
            states: vec![vec![9.0], vec![0.2], vec![0.05], vec![0.01]],
        };
        let metric = |s: &[f64]| s[0];
        assert_eq!(tail_sup(&traj, metric, 1.0), 0.05);
        assert_eq!(tail_sup(&traj, metric, 3.0), 9.0);
    }

    #[test]
    fn lyapunov_sampling_decimates_and_decays() {
        let cfg = SimConfig {
            integrator: Integrator::Rk4,
            h: 0.01,
            t_end: 2.0,
            store_every: 1,
        };
        let traj = integrate(decay_rhs, &[1.0, -2.0], &cfg).unwrap();
        let norm =
            CanonicalNorm::new(Dilation::euler(2), Matrix::identity(2)).unwrap();
        let samples = lyapunov_samples(&traj, &norm, 10).unwrap();
        assert_eq!(samples.len(), 21);
        for pair in samples.windows(2) {
            assert!(pair[1].1 < pair[0].1);
        }
    }

    #[test]
    fn csv_layout_and_precision() {
        // One plant state, two nodes; values chosen to exercise full
        // precision round trips.
        let traj = Trajectory {
            times: vec![0.0, 0.1],
            states: vec![
                vec![1.0, 1.5, 0.25],
                vec![0.9, 0.9 + 0.1 / 3.0, 0.9 - 1e-13],
            ],
        };
        let norm =
            CanonicalNorm::new(Dilation::euler(2), Matrix::identity(2)).unwrap();
        let mut buf = Vec::new();
        write_error_csv(&mut buf, &traj, 1, 2, &norm).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with('\n'));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,e_norm,el_norm,e1,e2");
        assert_eq!(lines.len(), 3);

        // Every numeric field must round-trip to the exact f64.
        let fields: Vec<f64> = lines[2]
            .split(',')
            .map(|f| f.parse::<f64>().unwrap())
            .collect();
        let e1 = (0.9f64 + 0.1 / 3.0) - 0.9;
        let e2 = (0.9f64 - 1e-13) - 0.9;
        assert_eq!(fields[0], 0.1);
        assert_eq!(fields[3], e1.abs());
        assert_eq!(fields[4], e2.abs());
        let euclid = (e1 * e1 + e2 * e2).sqrt();
        assert_eq!(fields[1], euclid);
        assert_eq!(fields[2], euclid);
    }

    #[test]
    fn metrics_writer_emits_ordered_pairs() {
        let mut buf = Vec::new();
        write_metrics(
            &mut buf,
            &[
                ("settling_time".to_string(), format_full(0.295)),
                ("tail_sup".to_string(), "none".to_string()),
            ],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            format!("settling_time={}\ntail_sup=none\n", format_full(0.295))
        );
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let cfg = SimConfig {
            integrator: Integrator::Rk4,
            h: 0.01,
            t_end: 1.0,
            store_every: 10,
        };
        let a = integrate(decay_rhs, &[1.0, 2.0, -0.5], &cfg).unwrap();
        let b = integrate(decay_rhs, &[1.0, 2.0, -0.5], &cfg).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            for (va, vb) in sa.iter().zip(sb) {
                assert_eq!(va.to_bits(), vb.to_bits());
            }
        }
    }
}
