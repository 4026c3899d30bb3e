//! Linear dilations and canonical homogeneous norms.
//!
//! A dilation is the one-parameter group `d(s) = exp(s G)` generated by a
//! matrix `G` whose spectrum lies in the open right half-plane. A vector
//! field `f` is homogeneous of degree `mu` under `d` when
//! `f(d(s) x) = exp(mu s) d(s) f(x)` for all `s` and `x`; such fields
//! inherit global convergence properties from local ones, which is what the
//! observer designs in this crate exploit.
//!
//! The canonical homogeneous norm of `x != 0` is the unique `r > 0` with
//! `|| d(-ln r) x ||_P = 1`, where `|| . ||_P` is a weighted Euclidean norm
//! whose weight makes the dilation monotone (the weighted norm of `d(s) x`
//! strictly increases in `s`). Uniqueness follows from that monotonicity.
//! For the standard dilation (`G = I`) the homogeneous norm coincides with
//! the weighted norm and is evaluated in closed form.

use crate::linalg::{self, LinalgError, Matrix};
use crate::tol;

#[derive(Debug, thiserror::Error)]
pub enum HomogeneityError {
    #[error("dilation generator must be square")]
    NonSquareGenerator,
    #[error("dilation generator must have all eigenvalues in the open right half-plane")]
    NotAntiHurwitz,
    #[error("norm weight must be a symmetric positive definite matrix")]
    WeightNotPositive,
    #[error("dilation is not monotone under the given weight")]
    NotMonotone,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("homogeneous norm iteration failed to bracket the unit sphere")]
    BracketingFailed,
    #[error("gradient of the homogeneous norm is undefined at the origin")]
    GradientAtOrigin,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One-parameter group of dilations `d(s) = exp(s G)`.
#[derive(Clone, Debug)]
pub struct Dilation {
    generator: Matrix,
    euler: bool,
}

impl Dilation {
    /// Validates that the generator is square with spectrum strictly in the
    /// right half-plane, which ensures `d(s) x` sweeps every ray from the
    /// origin to infinity as `s` runs over the reals.
    pub fn new(generator: Matrix) -> Result<Self, HomogeneityError> {
        if !generator.is_square() {
            return Err(HomogeneityError::NonSquareGenerator);
        }
        let min_real = -linalg::max_real_eigenvalue(&generator.scaled(-1.0))?;
        if min_real <= 0.0 {
            return Err(HomogeneityError::NotAntiHurwitz);
        }
        let euler = generator == Matrix::identity(generator.rows());
        Ok(Dilation { generator, euler })
    }

    /// The standard dilation `d(s) = exp(s) I`.
    pub fn euler(n: usize) -> Self {
        Dilation {
            generator: Matrix::identity(n),
            euler: true,
        }
    }

    pub fn generator(&self) -> &Matrix {
        &self.generator
    }

    pub fn dim(&self) -> usize {
        self.generator.rows()
    }

    /// Whether the generator is exactly the identity.
    pub fn is_euler(&self) -> bool {
        self.euler
    }

    /// The group element `d(s) = exp(s G)`.
    pub fn map(&self, s: f64) -> Result<Matrix, HomogeneityError> {
        if self.euler {
            return Ok(Matrix::identity(self.dim()).scaled(s.exp()));
        }
        Ok(linalg::mat_exp(&self.generator.scaled(s))?)
    }

    /// Applies `d(s)` to a vector.
    pub fn apply(&self, s: f64, x: &[f64]) -> Result<Vec<f64>, HomogeneityError> {
        if x.len() != self.dim() {
            return Err(HomogeneityError::DimensionMismatch(format!(
                "dilation acts on dimension {}, got vector of length {}",
                self.dim(),
                x.len()
            )));
        }
        if self.euler {
            let c = s.exp();
            return Ok(x.iter().map(|v| c * v).collect());
        }
        Ok(self.map(s)?.mul_vec(x))
    }
}

/// Applies the dilation group element `d(s)` to `x`.
pub fn dilate(dilation: &Dilation, s: f64, x: &[f64]) -> Result<Vec<f64>, HomogeneityError> {
    dilation.apply(s, x)
}

/// Canonical homogeneous norm induced by a dilation and a weighted
/// Euclidean norm under which the dilation is monotone. Validation happens
/// once at construction so repeated evaluations stay cheap.
#[derive(Clone, Debug)]
pub struct CanonicalNorm {
    dilation: Dilation,
    weight: Matrix,
}

impl CanonicalNorm {
    pub fn new(dilation: Dilation, weight: Matrix) -> Result<Self, HomogeneityError> {
        let n = dilation.dim();
        if weight.rows() != n || weight.cols() != n {
            return Err(HomogeneityError::DimensionMismatch(format!(
                "weight is {}x{} but the dilation acts on dimension {n}",
                weight.rows(),
                weight.cols()
            )));
        }
        let asym = weight.sub(&weight.transpose()).max_abs();
        if asym > 1e-9 * weight.max_abs().max(1.0) {
            return Err(HomogeneityError::WeightNotPositive);
        }
        if !linalg::is_positive_definite(&weight, 0.0)? {
            return Err(HomogeneityError::WeightNotPositive);
        }
        // Monotonicity: the derivative of ||d(s)x||_P^2 in s is the
        // quadratic form of P G + G^T P, which must be positive definite.
        let h = weight
            .matmul(dilation.generator())
            .add(&dilation.generator().transpose().matmul(&weight));
        if !linalg::is_positive_definite(&h, 0.0)? {
            return Err(HomogeneityError::NotMonotone);
        }
        Ok(CanonicalNorm { dilation, weight })
    }

    pub fn dilation(&self) -> &Dilation {
        &self.dilation
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    fn weighted_norm_at(&self, s: f64, x: &[f64]) -> Result<f64, HomogeneityError> {
        let z = self.dilation.apply(-s, x)?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(HomogeneityError::BracketingFailed);
        }
        Ok(linalg::weighted_norm(&self.weight, &z))
    }

    /// Evaluates the canonical homogeneous norm. Returns 0 at the origin.
    pub fn eval(&self, x: &[f64]) -> Result<f64, HomogeneityError> {
        if x.len() != self.dilation.dim() {
            return Err(HomogeneityError::DimensionMismatch(format!(
                "norm acts on dimension {}, got vector of length {}",
                self.dilation.dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(HomogeneityError::NonFinite);
        }
        if x.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        if self.dilation.is_euler() {
            return Ok(linalg::weighted_norm(&self.weight, x));
        }
        // phi(s) = ||d(-s) x||_P is strictly decreasing; find phi(s*) = 1.
        let r0 = linalg::weighted_norm(&self.weight, x);
        let (mut lo, mut hi);
        if r0 == 1.0 {
            return Ok(1.0);
        } else if r0 > 1.0 {
            lo = 0.0;
            hi = 1.0;
            let mut doublings = 0;
            while self.weighted_norm_at(hi, x)? > 1.0 {
                lo = hi;
                hi *= 2.0;
                doublings += 1;
                if doublings > tol::HOM_NORM_MAX_DOUBLINGS {
                    return Err(HomogeneityError::BracketingFailed);
                }
            }
        } else {
            hi = 0.0;
            lo = -1.0;
            let mut doublings = 0;
            while self.weighted_norm_at(lo, x)? < 1.0 {
                hi = lo;
                lo *= 2.0;
                doublings += 1;
                if doublings > tol::HOM_NORM_MAX_DOUBLINGS {
                    return Err(HomogeneityError::BracketingFailed);
                }
            }
        }
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..tol::HOM_NORM_MAX_BISECTIONS {
            mid = 0.5 * (lo + hi);
            let phi = self.weighted_norm_at(mid, x)?;
            if (phi - 1.0).abs() <= tol::HOM_NORM_RESIDUAL_TOL {
                break;
            }
            if phi > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
                break;
            }
        }
        Ok(mid.exp())
    }

    /// Exponent pair `(alpha, beta)` with `alpha >= beta > 0` relating the
    /// homogeneous norm `r` to the weighted norm: for `r >= 1`,
    /// `r^beta <= ||x||_P <= r^alpha`, and for `r <= 1` the exponents swap,
    /// `r^alpha <= ||x||_P <= r^beta`. They are half the extreme
    /// eigenvalues of `P^{-1/2} (P G + G^T P) P^{-1/2}`; for the standard
    /// dilation both equal 1 and the two norms coincide.
    pub fn bounds(&self) -> Result<(f64, f64), HomogeneityError> {
        let g = self.dilation.generator();
        let h = self.weight.matmul(g).add(&g.transpose().matmul(&self.weight));
        let eig_p = linalg::sym_eig(&self.weight)?;
        let n = self.weight.rows();
        let mut inv_sqrt = Matrix::zeros(n, n);
        for k in 0..n {
            let lam = eig_p.values[k];
            if lam <= 0.0 {
                return Err(HomogeneityError::WeightNotPositive);
            }
            let inv = 1.0 / lam.sqrt();
            for i in 0..n {
                let vi = eig_p.vectors[(i, k)];
                for j in 0..n {
                    inv_sqrt[(i, j)] += inv * vi * eig_p.vectors[(j, k)];
                }
            }
        }
        let m = inv_sqrt.matmul(&h).matmul(&inv_sqrt);
        let eig = linalg::sym_eig(&m)?;
        let beta = eig.values[0] / 2.0;
        let alpha = eig.values[eig.values.len() - 1] / 2.0;
        if beta <= 0.0 {
            return Err(HomogeneityError::NotMonotone);
        }
        Ok((alpha, beta))
    }

    /// Gradient of the homogeneous norm at `x != 0`. With `s = ln r` and
    /// `z = d(-s) x`, implicit differentiation of `||d(-s) x||_P = 1` gives
    /// `grad r = r d(-s)^T P z / (z^T P G z)`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, HomogeneityError> {
        let r = self.eval(x)?;
        if r == 0.0 {
            return Err(HomogeneityError::GradientAtOrigin);
        }
        let s = r.ln();
        let dm = self.dilation.map(-s)?;
        let z = dm.mul_vec(x);
        let pz = self.weight.mul_vec(&z);
        let gz = self.dilation.generator().mul_vec(&z);
        let denom: f64 = pz.iter().zip(&gz).map(|(a, b)| a * b).sum();
        let dt_pz = dm.transpose().mul_vec(&pz);
        Ok(dt_pz.iter().map(|v| r * v / denom).collect())
    }
}

/// Convenience wrapper constructing the canonical norm and evaluating it.
pub fn hom_norm(dilation: &Dilation, weight: &Matrix, x: &[f64]) -> Result<f64, HomogeneityError> {
    CanonicalNorm::new(dilation.clone(), weight.clone())?.eval(x)
}

/// Convenience wrapper for [`CanonicalNorm::bounds`].
pub fn hom_norm_bounds(
    dilation: &Dilation,
    weight: &Matrix,
) -> Result<(f64, f64), HomogeneityError> {
    CanonicalNorm::new(dilation.clone(), weight.clone())?.bounds()
}

/// Convenience wrapper for [`CanonicalNorm::gradient`].
pub fn hom_norm_gradient(
    dilation: &Dilation,
    weight: &Matrix,
    x: &[f64],
) -> Result<Vec<f64>, HomogeneityError> {
    CanonicalNorm::new(dilation.clone(), weight.clone())?.gradient(x)
}

/// Result of a sampled homogeneity check.
#[derive(Clone, Copy, Debug)]
pub struct HomogeneityCheck {
    pub max_residual: f64,
    pub samples: usize,
}

/// Estimates how far a vector field is from being homogeneous of the given
/// degree by sampling the defining identity
/// `f(d(s) x) = exp(mu s) d(s) f(x)` at seeded random points `x` in the
/// unit cube and scales `s` in `s_range`. The reported residual is relative
/// to the larger side of the identity.
pub fn check_field_homogeneity<F>(
    field: F,
    dilation: &Dilation,
    degree: f64,
    samples: usize,
    s_range: (f64, f64),
    seed: u64,
) -> Result<HomogeneityCheck, HomogeneityError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    use rand::{Rng, SeedableRng};
    let n = dilation.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut max_residual: f64 = 0.0;
    for _ in 0..samples {
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Keep sample points away from the origin, where relative errors
        // are meaningless.
        while x.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.1 {
            x = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        }
        let s = rng.gen_range(s_range.0..=s_range.1);
        let lhs = field(&dilation.apply(s, &x)?);
        if lhs.len() != n {
            return Err(HomogeneityError::DimensionMismatch(
                "field output length differs from dilation dimension".to_string(),
            ));
        }
        let fx = field(&x);
        let rhs: Vec<f64> = dilation
            .apply(s, &fx)?
            .iter()
            .map(|v| (degree * s).exp() * v)
            .collect();
        let diff: f64 = lhs
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let lhs_norm: f64 = lhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rhs_norm: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = lhs_norm.max(rhs_norm).max(1e-12);
        max_residual = max_residual.max(diff / scale);
    }
    Ok(HomogeneityCheck {
        max_residual,
        samples,
    })
}
