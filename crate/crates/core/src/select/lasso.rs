//! Coordinate-descent Lasso for `1/2 ||y - X b||^2 + lambda ||b||_1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Solver controls.
#[derive(Debug, Clone, Copy)]
pub struct LassoOptions {
    /// Relative duality gap, measured against `1/2 ||y||^2`.
    pub gap_tol: f64,
    /// Largest coordinate move (in units of `||x_j||`) tolerated at convergence,
    /// relative to `||y||`.
    pub step_tol: f64,
    pub max_sweeps: usize,
    /// Return the current iterate instead of an error when `max_sweeps` runs out.
    pub lenient: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions { gap_tol: 1e-9, step_tol: 1e-10, max_sweeps: 100_000, lenient: false }
    }
}

impl LassoOptions {
    /// Looser settings for fits that only feed a cross-validation curve:
    /// stop on coordinate moves alone, about as loose as glmnet's default.
    pub fn screening() -> Self {
        LassoOptions { gap_tol: f64::INFINITY, step_tol: 1e-4, max_sweeps: 10_000, lenient: true }
    }
}

/// Converged Lasso solution in the coordinates of the design it was fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub beta_hat: Vec<f64>,
    pub lambda: f64,
    pub support: Vec<usize>,
    pub signs: Vec<f64>,
    pub kkt_residual: f64,
    pub sweeps: usize,
}

impl LassoFit {
    pub fn from_beta(beta: Vec<f64>, lambda: f64, kkt_residual: f64, sweeps: usize) -> Self {
        let support: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
        let signs = support.iter().map(|&j| beta[j].signum()).collect();
        LassoFit { beta_hat: beta, lambda, support, signs, kkt_residual, sweeps }
    }

    pub fn s_tilde(&self) -> usize {
        self.support.len()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let n = a.len();
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for i in 4 * chunks..n {
        s0 += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3)
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Stationarity violation of a candidate solution.
pub fn kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, beta: &[f64], lambda: f64) -> f64 {
    let r = y - x * DVector::from_column_slice(beta);
    let n = x.nrows();
    let data = x.as_slice();
    let mut worst = 0.0_f64;
    for j in 0..x.ncols() {
        let g = dot(&data[j * n..(j + 1) * n], r.as_slice());
        let v = if beta[j] != 0.0 { (g - lambda * beta[j].signum()).abs() } else { (g.abs() - lambda).max(0.0) };
        worst = worst.max(v);
    }
    worst
}

/// Reusable problem data for fitting many penalties on one design.
pub struct LassoProblem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    col_sq: Vec<f64>,
    y_sq: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::Validation(format!("response length {} != {} rows", y.len(), n)));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite value in Lasso input".into()));
        }
        let data = x.as_slice();
        let col_sq: Vec<f64> = (0..p).map(|j| dot(&data[j * n..(j + 1) * n], &data[j * n..(j + 1) * n])).collect();
        if let Some(j) = col_sq.iter().position(|&c| c == 0.0) {
            return Err(Error::Validation(format!("design column {} is identically zero", j + 1)));
        }
        let y_sq = y.norm_squared();
        Ok(LassoProblem { x, y, col_sq, y_sq })
    }

    /// `||X^T y||_inf`, the smallest penalty giving the zero solution.
    pub fn lambda_max(&self) -> f64 {
        let n = self.x.nrows();
        let data = self.x.as_slice();
        (0..self.x.ncols())
            .map(|j| dot(&data[j * n..(j + 1) * n], self.y.as_slice()).abs())
            .fold(0.0, f64::max)
    }

    /// Residual sum of squares at `beta`.
    pub fn rss(&self, beta: &[f64]) -> f64 {
        let (n, p) = self.x.shape();
        let data = self.x.as_slice();
        let mut r: Vec<f64> = self.y.as_slice().to_vec();
        for j in 0..p {
            if beta[j] != 0.0 {
                axpy(-beta[j], &data[j * n..(j + 1) * n], &mut r);
            }
        }
        dot(&r, &r)
    }

    /// Solve at `lambda`, optionally warm-started.
    pub fn solve(&self, lambda: f64, warm: Option<&[f64]>, opts: &LassoOptions) -> Result<LassoFit> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Validation(format!("penalty must be a nonnegative number, got {lambda}")));
        }
        let (n, p) = self.x.shape();
        let data = self.x.as_slice();
        let mut beta = match warm {
            Some(w) if w.len() == p => w.to_vec(),
            _ => vec![0.0; p],
        };
        let mut r: Vec<f64> = self.y.as_slice().to_vec();
        for j in 0..p {
            if beta[j] != 0.0 {
                axpy(-beta[j], &data[j * n..(j + 1) * n], &mut r);
            }
        }
        let y_norm = self.y_sq.sqrt().max(f64::MIN_POSITIVE);
        let step_tol = opts.step_tol * y_norm;
        let gap_scale = (0.5 * self.y_sq).max(f64::MIN_POSITIVE);
        let col_max = self.col_sq.iter().cloned().fold(0.0, f64::max).sqrt();
        let kkt_tol = 1e-12 * y_norm * col_max;

        let mut sweeps = 0usize;
        let mut active: Vec<usize> = Vec::with_capacity(p);
        loop {
            // full sweep
            let mut max_step = 0.0_f64;
            for j in 0..p {
                let col = &data[j * n..(j + 1) * n];
                let old = beta[j];
                let rho = dot(col, &r) + self.col_sq[j] * old;
                let new = soft_threshold(rho, lambda) / self.col_sq[j];
                if new != old {
                    axpy(old - new, col, &mut r);
                    beta[j] = new;
                    max_step = max_step.max((new - old).abs() * self.col_sq[j].sqrt());
                }
            }
            sweeps += 1;
            if max_step <= step_tol {
                let gap = self.duality_gap(&beta, &r, lambda);
                // at lambda = 0 the dual point degenerates; fall back to stationarity
                if gap <= opts.gap_tol * gap_scale || self.kkt_from_residual(&beta, &r, lambda) <= kkt_tol {
                    break;
                }
            }
            if sweeps >= opts.max_sweeps {
                if opts.lenient {
                    break;
                }
                let residual = kkt_violation(self.x, self.y, &beta, lambda);
                return Err(Error::Convergence { iterations: sweeps, residual });
            }
            // active-set iterations
            active.clear();
            active.extend((0..p).filter(|&j| beta[j] != 0.0));
            loop {
                let mut max_step = 0.0_f64;
                for &j in &active {
                    let col = &data[j * n..(j + 1) * n];
                    let old = beta[j];
                    let rho = dot(col, &r) + self.col_sq[j] * old;
                    let new = soft_threshold(rho, lambda) / self.col_sq[j];
                    if new != old {
                        axpy(old - new, col, &mut r);
                        beta[j] = new;
                        max_step = max_step.max((new - old).abs() * self.col_sq[j].sqrt());
                    }
                }
                sweeps += 1;
                if max_step <= step_tol || sweeps >= opts.max_sweeps {
                    break;
                }
            }
        }
        let kkt = self.kkt_from_residual(&beta, &r, lambda);
        Ok(LassoFit::from_beta(beta, lambda, kkt, sweeps))
    }

    fn duality_gap(&self, beta: &[f64], r: &[f64], lambda: f64) -> f64 {
        let n = self.x.nrows();
        let data = self.x.as_slice();
        let mut xtr_max = 0.0_f64;
        for j in 0..self.x.ncols() {
            xtr_max = xtr_max.max(dot(&data[j * n..(j + 1) * n], r).abs());
        }
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        let r_sq = dot(r, r);
        let primal = 0.5 * r_sq + lambda * l1;
        let scale = if xtr_max > lambda { lambda / xtr_max } else { 1.0 };
        // dual objective at theta = scale * r: 1/2||y||^2 - 1/2||y - theta||^2
        let yr = dot(self.y.as_slice(), r);
        let dual = scale * yr - 0.5 * scale * scale * r_sq;
        (primal - dual).max(0.0)
    }

    fn kkt_from_residual(&self, beta: &[f64], r: &[f64], lambda: f64) -> f64 {
        let n = self.x.nrows();
        let data = self.x.as_slice();
        let mut worst = 0.0_f64;
        for j in 0..self.x.ncols() {
            let g = dot(&data[j * n..(j + 1) * n], r);
            let v = if beta[j] != 0.0 { (g - lambda * beta[j].signum()).abs() } else { (g.abs() - lambda).max(0.0) };
            worst = worst.max(v);
        }
        worst
    }

    /// Fit a decreasing sequence of penalties with warm starts.
    pub fn path(&self, lambdas: &[f64], opts: &LassoOptions) -> Result<Vec<LassoFit>> {
        let mut out: Vec<LassoFit> = Vec::with_capacity(lambdas.len());
        for &l in lambdas {
            let warm = out.last().map(|f| f.beta_hat.as_slice());
            out.push(self.solve(l, warm, opts)?);
        }
        Ok(out)
    }
}

/// Minimize `1/2 ||y - X b||^2 + lambda ||b||_1` with default tolerances.
pub fn fit_lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LassoFit> {
    LassoProblem::new(x, y)?.solve(lambda, None, &LassoOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Proximal-gradient (ISTA) oracle, iterated to a fixed point.
    fn ista(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, iters: usize) -> DVector<f64> {
        let l = x.clone().singular_values().max().powi(2);
        let mut b = DVector::zeros(x.ncols());
        for _ in 0..iters {
            let g = x.transpose() * (x * &b - y);
            let z = &b - g / l;
            b = z.map(|v| soft_threshold(v, lambda / l));
        }
        b
    }

    fn random_instance(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (x, y)
    }

    #[test]
    fn large_penalty_gives_zero() {
        let (x, y) = random_instance(15, 6, 1);
        let lmax = (x.transpose() * &y).amax();
        let fit = fit_lasso(&x, &y, lmax).unwrap();
        assert!(fit.support.is_empty());
        let fit = fit_lasso(&x, &y, 2.0 * lmax).unwrap();
        assert!(fit.beta_hat.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn orthonormal_design_soft_thresholds() {
        let (raw, y) = random_instance(12, 4, 2);
        let q = raw.qr().q();
        let z = q.transpose() * &y;
        let lambda = 0.4;
        let fit = fit_lasso(&q, &y, lambda).unwrap();
        for j in 0..4 {
            let expect = z[j].signum() * (z[j].abs() - lambda).max(0.0);
            assert!((fit.beta_hat[j] - expect).abs() < 1e-10, "{j}: {} vs {}", fit.beta_hat[j], expect);
        }
    }

    #[test]
    fn matches_proximal_gradient_oracle() {
        let (x, y) = random_instance(20, 8, 3);
        let oracle = ista(&x, &y, 0.3, 200_000);
        // the oracle's own fixed-point residual
        let step = x.transpose() * (&x * &oracle - &y);
        let l = x.clone().singular_values().max().powi(2);
        let moved = (&oracle - step / l).map(|v| soft_threshold(v, 0.3 / l));
        assert!((&moved - &oracle).amax() < 1e-10);
        let fit = fit_lasso(&x, &y, 0.3).unwrap();
        for j in 0..8 {
            assert!((fit.beta_hat[j] - oracle[j]).abs() < 1e-6, "coef {j}");
        }
    }

    #[test]
    fn kkt_holds_and_fit_is_pure() {
        let (x, y) = random_instance(30, 60, 4);
        let lambda = 0.2 * (x.transpose() * &y).amax();
        let a = fit_lasso(&x, &y, lambda).unwrap();
        let b = fit_lasso(&x, &y, lambda).unwrap();
        assert_eq!(a, b);
        assert!(a.kkt_residual < 1e-6 * lambda);
        assert!(kkt_violation(&x, &y, &a.beta_hat, lambda) < 1e-6 * lambda);
    }

    #[test]
    fn rejects_bad_input() {
        let (mut x, y) = random_instance(5, 3, 5);
        assert!(fit_lasso(&x, &y, -1.0).is_err());
        x.column_mut(1).fill(0.0);
        assert!(matches!(fit_lasso(&x, &y, 1.0), Err(Error::Validation(_))));
        let (mut x, y) = random_instance(5, 3, 5);
        x[(0, 0)] = f64::NAN;
        assert!(fit_lasso(&x, &y, 1.0).is_err());
    }

    #[test]
    fn scaling_equivariance() {
        let (x, y) = random_instance(25, 40, 6);
        let lambda = 0.3 * (x.transpose() * &y).amax();
        let a = fit_lasso(&x, &y, lambda).unwrap();
        let b = fit_lasso(&x, &(&y * 3.5), 3.5 * lambda).unwrap();
        assert_eq!(a.support, b.support);
        assert_eq!(a.signs, b.signs);
    }
}
