//! Distributed state observers with homogeneity-scaled correction terms.
//!
//! A plant `dx/dt = A x + B u + gamma(t, x) + q_x(t)` is watched by a network
//! of observer nodes. Each node sees only its own output slice
//! `y_i = C_i x + q_{y,i}(t)` and the estimates of its in-neighbors on a
//! directed, strongly connected communication graph. Three observer variants
//! share one gain set: a classical linear design, a finite-time design that
//! rescales the correction terms by homogeneous norms, and a fixed-time
//! design that blends two homogeneity degrees so the convergence time stays
//! insensitive to the initial error scale.
//!
//! Module layout:
//! - [`linalg`]: dense matrix kernels (exponential, symmetric eigensolver,
//!   Kronecker products, least squares, spectral abscissa).
//! - [`graph`]: communication topology, Laplacian, and its similarity
//!   decomposition onto the consensus complement.
//! - [`homogeneity`]: linear dilations and canonical homogeneous norms.
//! - [`synthesis`]: observer-structure equation, feasibility certificates,
//!   and gain synthesis by alternating projections.
//! - [`signals`]: time signals and state nonlinearities used by models.
//! - [`observer`]: plant/sensor models and the observer right-hand sides.
//! - [`simulation`]: fixed-step integration, settling metrics, experiments.
//! - [`config`]: JSON experiment configuration with validation.
//! - [`experiments`]: bundled reproduction presets and sweep drivers.

pub mod config;
pub mod experiments;
pub mod graph;
pub mod homogeneity;
pub mod linalg;
pub mod observer;
pub mod signals;
pub mod simulation;
pub mod synthesis;
pub mod tol;
