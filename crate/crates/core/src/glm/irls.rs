//! Penalized IRLS for the Lasso-logistic model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::select::lasso::{LassoOptions, LassoProblem};
use crate::select::partial_out;

/// Fitted probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before
/// weights are formed.
pub const PROB_CLAMP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions {
    /// Convergence threshold on the largest coefficient change.
    pub tol: f64,
    pub max_iter: usize,
    /// Fit an unpenalized intercept.
    pub intercept: bool,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions { tol: 1e-8, max_iter: 100, intercept: false }
    }
}

/// Converged IRLS iterate and its weighted least-squares representation.
#[derive(Debug, Clone)]
pub struct IrlsState {
    pub beta: Vec<f64>,
    pub intercept: Option<f64>,
    pub lambda: f64,
    pub pi: Vec<f64>,
    pub w_diag: Vec<f64>,
    pub y_adj: Vec<f64>,
    pub deviance: f64,
    pub iterations: usize,
}

#[inline]
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binomial deviance `-2 l(beta)` at linear predictor `eta`.
pub fn deviance(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    2.0 * y.iter().zip(eta.iter()).map(|(yi, e)| softplus(*e) - yi * e).sum::<f64>()
}

/// Weights, probabilities, and adjusted response at linear predictor `eta`.
pub fn working_response(y: &DVector<f64>, eta: &DVector<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = y.len();
    let mut pi = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let p = clamp_prob(logistic(eta[i]));
        let wi = p * (1.0 - p);
        pi.push(p);
        w.push(wi);
        z.push(eta[i] + (y[i] - p) / wi);
    }
    (pi, w, z)
}

/// Smallest penalty at which the penalized fit is all zero.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>, intercept: bool) -> f64 {
    let center = if intercept { y.mean() } else { 0.5 };
    let r = y.add_scalar(-center);
    (x.transpose() * r).amax()
}

fn linear_predictor(x: &DMatrix<f64>, beta: &[f64], a: f64) -> DVector<f64> {
    (x * DVector::from_column_slice(beta)).add_scalar(a)
}

fn objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &[f64], a: f64, lambda: f64) -> f64 {
    0.5 * deviance(y, &linear_predictor(x, beta, a)) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

impl IrlsState {
    fn at(x: &DMatrix<f64>, y: &DVector<f64>, beta: Vec<f64>, a: Option<f64>, lambda: f64, iterations: usize) -> Self {
        let eta = linear_predictor(x, &beta, a.unwrap_or(0.0));
        let (pi, w_diag, y_adj) = working_response(y, &eta);
        let dev = deviance(y, &eta);
        IrlsState { beta, intercept: a, lambda, pi, w_diag, y_adj, deviance: dev, iterations }
    }

    pub fn sqrt_weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.w_diag.len(), self.w_diag.iter().map(|w| w.sqrt()))
    }

    /// `(X_w, y_w) = (sqrt(W) X, sqrt(W) y_adj)`.
    pub fn weighted_data(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let sw = self.sqrt_weights();
        let mut xw = x.clone();
        for (i, s) in sw.iter().enumerate() {
            xw.row_mut(i).scale_mut(*s);
        }
        let yw = DVector::from_iterator(sw.len(), sw.iter().zip(&self.y_adj).map(|(s, z)| s * z));
        (xw, yw)
    }

    /// Weighted data with the unpenalized intercept direction removed from the
    /// design, the form on which the penalized fit solves a plain Lasso.
    pub fn weighted_problem(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let (xw, yw) = self.weighted_data(x);
        if self.intercept.is_some() {
            (partial_out(&xw, &self.sqrt_weights()), yw)
        } else {
            (xw, yw)
        }
    }
}

/// Penalized IRLS (proximal Newton) for `-l(beta) + lambda ||beta||_1`.
pub fn irls_logistic_lasso(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    opts: &IrlsOptions,
    warm: Option<&[f64]>,
) -> Result<IrlsState> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Validation(format!("response length {} != {} rows", y.len(), n)));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation("logistic response must be 0/1".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Validation(format!("penalty must be a nonnegative number, got {lambda}")));
    }
    let mut beta = match warm {
        Some(w) if w.len() == p => w.to_vec(),
        _ => vec![0.0; p],
    };
    let mut a = if opts.intercept {
        let ybar = clamp_prob(y.mean());
        (ybar / (1.0 - ybar)).ln()
    } else {
        0.0
    };
    let lasso_opts = LassoOptions::default();
    let mut trace = Vec::new();
    let mut obj = objective(x, y, &beta, a, lambda);
    for it in 1..=opts.max_iter {
        let eta = linear_predictor(x, &beta, a);
        let (_, w, z) = working_response(y, &eta);
        let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        let mut xw = x.clone();
        for i in 0..n {
            xw.row_mut(i).scale_mut(sw[i]);
        }
        let zw = DVector::from_iterator(n, (0..n).map(|i| sw[i] * z[i]));
        let (beta_new, a_new) = if opts.intercept {
            let u = DVector::from_column_slice(&sw);
            let xt = partial_out(&xw, &u);
            let zt = &zw - &u * (u.dot(&zw) / u.norm_squared());
            let fit = LassoProblem::new(&xt, &zt)?.solve(lambda, Some(&beta), &lasso_opts)?;
            let wsum: f64 = w.iter().sum();
            let fitted = x * DVector::from_column_slice(&fit.beta_hat);
            let a_new = (0..n).map(|i| w[i] * (z[i] - fitted[i])).sum::<f64>() / wsum;
            (fit.beta_hat, a_new)
        } else {
            let fit = LassoProblem::new(&xw, &zw)?.solve(lambda, Some(&beta), &lasso_opts)?;
            (fit.beta_hat, 0.0)
        };
        // backtrack on the penalized objective
        let mut t = 1.0;
        let mut cand_b = beta_new.clone();
        let mut cand_a = a_new;
        let mut cand_obj = objective(x, y, &cand_b, cand_a, lambda);
        let mut halvings = 0;
        while cand_obj > obj + 1e-12 * obj.abs().max(1.0) && halvings < 30 {
            t *= 0.5;
            cand_b = beta.iter().zip(&beta_new).map(|(o, nw)| o + t * (nw - o)).collect();
            cand_a = a + t * (a_new - a);
            cand_obj = objective(x, y, &cand_b, cand_a, lambda);
            halvings += 1;
        }
        let change = beta
            .iter()
            .zip(&cand_b)
            .map(|(o, nw)| (o - nw).abs())
            .fold((a - cand_a).abs(), f64::max);
        beta = cand_b;
        a = cand_a;
        obj = cand_obj;
        trace.push(2.0 * (obj - lambda * beta.iter().map(|b| b.abs()).sum::<f64>()));
        if change < opts.tol {
            let icpt = if opts.intercept { Some(a) } else { None };
            return Ok(IrlsState::at(x, y, beta, icpt, lambda, it));
        }
    }
    Err(Error::IrlsConvergence { iterations: opts.max_iter, deviance: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::select::lasso::kkt_violation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn instance(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| {
            let eta = 0.8 * x[(i, 0)] - 0.5 * x[(i, 1)];
            if rng.random::<f64>() < logistic(eta) { 1.0 } else { 0.0 }
        });
        (x, y)
    }

    /// Plain Newton iterations on the unpenalized log-likelihood.
    fn newton_mle(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut b = DVector::zeros(x.ncols());
        for _ in 0..100 {
            let eta = x * &b;
            let pi = eta.map(logistic);
            let w = pi.map(|p| p * (1.0 - p));
            let grad = x.transpose() * (y - &pi);
            let mut h = x.transpose() * DMatrix::from_diagonal(&w) * x;
            h = h.try_inverse().unwrap();
            b += h * grad;
        }
        b
    }

    #[test]
    fn zero_start_working_response() {
        let y = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        let (pi, w, z) = working_response(&y, &DVector::zeros(3));
        assert!(pi.iter().all(|&p| p == 0.5));
        assert!(w.iter().all(|&v| v == 0.25));
        for i in 0..3 {
            assert!((z[i] - 4.0 * (y[i] - 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn clamp_applies() {
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let (pi, w, _) = working_response(&y, &DVector::from_vec(vec![40.0, -40.0]));
        assert_eq!(pi[0], 1.0 - PROB_CLAMP);
        assert_eq!(pi[1], PROB_CLAMP);
        assert!(w.iter().all(|&v| v > 0.0 && v <= 0.25));
    }

    #[test]
    fn unpenalized_matches_newton() {
        let (x, y) = instance(200, 3, 1);
        let state = irls_logistic_lasso(&x, &y, 0.0, &IrlsOptions::default(), None).unwrap();
        let mle = newton_mle(&x, &y);
        for j in 0..3 {
            assert!((state.beta[j] - mle[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn large_penalty_is_zero() {
        let (x, y) = instance(50, 8, 2);
        let lmax = lambda_max(&x, &y, false);
        let state = irls_logistic_lasso(&x, &y, lmax * 1.0001, &IrlsOptions::default(), None).unwrap();
        assert!(state.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn weighted_kkt_holds() {
        let (x, y) = instance(80, 20, 3);
        let lambda = 0.3 * lambda_max(&x, &y, false);
        let opts = IrlsOptions::default();
        let state = irls_logistic_lasso(&x, &y, lambda, &opts, None).unwrap();
        let (xw, yw) = state.weighted_problem(&x);
        assert!(kkt_violation(&xw, &yw, &state.beta, lambda) < 10.0 * opts.tol.max(1e-6 * lambda));
        // recomputable transform
        let sw = state.sqrt_weights();
        for i in 0..80 {
            assert_eq!(yw[i], sw[i] * state.y_adj[i]);
        }
    }

    #[test]
    fn intercept_fit_kkt() {
        let (x, mut y) = instance(90, 10, 4);
        for i in 0..30 {
            y[i] = 1.0;
        }
        let lambda = 0.2 * lambda_max(&x, &y, true);
        let opts = IrlsOptions { intercept: true, ..IrlsOptions::default() };
        let state = irls_logistic_lasso(&x, &y, lambda, &opts, None).unwrap();
        let (xw, yw) = state.weighted_problem(&x);
        assert!(kkt_violation(&xw, &yw, &state.beta, lambda) < 1e-5 * lambda);
        // unpenalized score for the intercept vanishes
        let score: f64 = (0..90).map(|i| y[i] - state.pi[i]).sum();
        assert!(score.abs() < 1e-5);
    }
}
