//! Numeric tolerances used across the crate, collected in one place so that
//! every threshold has a stated rationale and tests do not scatter magic
//! numbers.

/// Certified margin for feasibility checks on synthesized or injected gains.
/// Matrix inequalities are accepted only when the relevant eigenvalues clear
/// zero by at least this much; it sits far above accumulated rounding from
/// the eigensolver (~1e-13 for the sizes used here) while remaining strict
/// enough that a marginally infeasible certificate cannot sneak through.
pub const EPS_CERT: f64 = 1e-8;

/// Scaling threshold for the matrix exponential. The argument is halved
/// until its Frobenius norm is at or below this value before the degree-6
/// Taylor series is applied; at 1/32 the series truncation error is below
/// 1e-14, comfortably under every tolerance that consumes `mat_exp`.
pub const MAT_EXP_NORM_MAX: f64 = 1.0 / 32.0;

/// Taylor series degree for the matrix exponential after scaling.
pub const MAT_EXP_DEGREE: usize = 6;

/// Convergence threshold on the off-diagonal Frobenius norm for the cyclic
/// Jacobi symmetric eigensolver. 1e-12 leaves eigenvalues accurate to about
/// machine precision times the spectral radius for the matrix sizes here.
pub const JACOBI_OFFDIAG_TOL: f64 = 1e-12;

/// Sweep cap for the Jacobi eigensolver. Convergence is quadratic once
/// started; matrices up to ~100x100 need well under 20 sweeps, so hitting
/// this cap indicates non-symmetric or non-finite input.
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Residual tolerance for the homogeneous-norm bisection: iteration stops
/// when the weighted norm of the dilated point is within this distance of 1.
pub const HOM_NORM_RESIDUAL_TOL: f64 = 1e-12;

/// Cap on the initial doubling phase that brackets the homogeneous norm.
/// 60 doublings cover scale factors up to 2^60 ~ 1e18, beyond any finite
/// state this crate produces.
pub const HOM_NORM_MAX_DOUBLINGS: usize = 60;

/// Cap on bisection steps after bracketing. 200 halvings shrink any bracket
/// to far below f64 resolution; the residual test exits long before.
pub const HOM_NORM_MAX_BISECTIONS: usize = 200;

/// Iteration cap for the implicitly restarted QR loop that computes the
/// spectral abscissa. Counted per matrix, not per eigenvalue.
pub const QR_MAX_ITERS: usize = 30_000;

/// Relative threshold on Gram-matrix eigenvalues below which a direction is
/// treated as belonging to the null space when forming pseudoinverses for
/// minimum-norm least squares. Relative to the largest eigenvalue.
pub const RANK_REL_TOL: f64 = 1e-9;

/// Tolerance for declaring a matrix nilpotent: after n repeated squarings
/// or products the power must have Frobenius norm below this threshold
/// relative to the input's norm (or absolutely when the input is tiny).
pub const NILPOTENT_TOL: f64 = 1e-10;

/// Magnitudes below this are treated as exactly zero inside the
/// homogeneity-scaled gain factors. Raising |w| to a negative power blows
/// up near the origin; the true limit of the full correction term is zero,
/// so the implementation returns zero once the argument is this small.
/// The value sits just above the smallest positive normal double.
pub const GAIN_ZERO_FLOOR: f64 = 1e-300;

/// State norms beyond this limit abort an integration and report
/// divergence. Any meaningful trajectory in this crate stays below 1e6.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Alternating-projection iteration cap for the gain-synthesis solver.
pub const SYNTH_MAX_ITERS: usize = 20_000;

/// Eigenvalue level the projection step clips constraint spectra to. Set
/// well above the certification threshold so solutions land comfortably
/// inside the feasible cones; thin margins would force the consensus
/// coupling to absurd values when the network inequality is certified.
pub const SYNTH_CLIP_TARGET: f64 = 0.05;

/// Margin at which the projection solver stops iterating. Anything at or
/// above this level certifies with room to spare; points between
/// `EPS_CERT` and this level are still accepted if the iteration cap is
/// reached first.
pub const SYNTH_EXIT_MARGIN: f64 = 1e-3;

/// Geometric growth cap for the consensus coupling during synthesis: the
/// coupling strength doubles from 1 until the network-level inequality
/// certifies, at most up to 2^20.
pub const SYNTH_NU_MAX_DOUBLINGS: usize = 20;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerances_are_ordered_sanely() {
        assert!(GAIN_ZERO_FLOOR < HOM_NORM_RESIDUAL_TOL);
        assert!(HOM_NORM_RESIDUAL_TOL < RANK_REL_TOL);
        assert!(RANK_REL_TOL < EPS_CERT);
        assert!(EPS_CERT < MAT_EXP_NORM_MAX);
        assert!(DIVERGENCE_LIMIT > 1e6);
    }
}
