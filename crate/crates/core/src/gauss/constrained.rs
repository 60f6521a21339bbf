//! Whitened representation of a Gaussian restricted to a polyhedron.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::law::{GaussianLaw, RANK_TOL};
use crate::linalg::{psd_sqrt, SqrtFactors};

/// Rows with `|a . direction|` below this are treated as parallel to the line.
pub const PARALLEL_TOL: f64 = 1e-12;

/// Relative slack allowed when checking that a point satisfies `A x <= b`.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

/// Standardized law `N(0, I_r)` restricted to `{z : A_w z <= b_w}` together
/// with the maps back to the original coordinates.
#[derive(Debug, Clone)]
pub struct ConstrainedGaussianState {
    pub law: GaussianLaw,
    pub factors: SqrtFactors,
    pub a_w: DMatrix<f64>,
    pub b_w: DVector<f64>,
    pub origin: DVector<f64>,
}

impl ConstrainedGaussianState {
    pub fn dim(&self) -> usize {
        self.factors.half.ncols()
    }

    /// Original coordinates to whitened: `Sigma^{-1/2} (x - mu)`.
    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.factors.inv_half * (x - &self.law.mu)
    }

    /// Whitened coordinates to original: `mu + Sigma^{1/2} z`.
    pub fn inverse(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.law.mu + &self.factors.half * z
    }

    /// Linear functional `g^T x` of the original coordinates, expressed as
    /// `(slope, offset)` in whitened coordinates.
    pub fn pullback(&self, g: &DVector<f64>) -> (DVector<f64>, f64) {
        (self.factors.half.transpose() * g, g.dot(&self.law.mu))
    }
}

fn slack_tol(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let scale = 1.0 + b.amax().max((a * x).amax());
    FEASIBILITY_SLACK * scale
}

/// Whiten `law` and map the constraint `A x <= b` with it.
pub fn whiten(
    law: &GaussianLaw,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    observed: &DVector<f64>,
) -> Result<ConstrainedGaussianState> {
    let m = law.dim();
    if a.ncols() != m || b.len() != a.nrows() || observed.len() != m {
        return Err(Error::Validation("whitening inputs have inconsistent shapes".into()));
    }
    if a.nrows() > 0 {
        let viol = (a * observed - b).max();
        if viol > slack_tol(a, b, observed) {
            return Err(Error::InvalidStartPoint { violation: viol });
        }
    }
    let factors = psd_sqrt(&law.sigma, RANK_TOL);
    let a_w = a * &factors.half;
    let b_w = b - a * &law.mu;
    let origin = &factors.inv_half * (observed - &law.mu);
    Ok(ConstrainedGaussianState { law: law.clone(), factors, a_w, b_w, origin })
}

/// Range `[V-, V+]` of `t` keeping `A (y + (t - eta^T y) eta / ||eta||^2) <= b`.
pub fn truncated_interval(
    eta: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(f64, f64)> {
    let nn = eta.norm_squared();
    if !(nn > 0.0) {
        return Err(Error::Validation("truncation direction is zero".into()));
    }
    let t0 = eta.dot(y);
    let norm = nn.sqrt();
    let dir = a * eta / nn;
    let slack = b - a * y;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..a.nrows() {
        let s = slack[i].max(0.0);
        let ai = dir[i];
        if ai.abs() * norm <= PARALLEL_TOL * a.row(i).norm() {
            continue;
        }
        let t = s / ai;
        if ai > 0.0 {
            hi = hi.min(t0 + t);
        } else {
            lo = lo.max(t0 + t);
        }
    }
    Ok((lo, hi))
}
