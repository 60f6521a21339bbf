//! Simulation designs, coefficient vectors, and responses.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Family;
use crate::error::{Error, Result};
use crate::glm::irls::logistic;
use crate::rng;

/// `Sigma_ij = rho^|i-j|`.
pub fn toeplitz_covariance(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32))
}

/// Toeplitz with `rho = 0.6`, except 0.8 between distinct members of the
/// first five variables.
pub fn block_covariance(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| {
        if i != j && i < 5 && j < 5 {
            0.8
        } else {
            0.6f64.powi(i.abs_diff(j) as i32)
        }
    })
}

/// `n` independent rows from `N(0, cov)` through the Cholesky factor.
pub fn gaussian_design(n: usize, cov: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Validation("design covariance is not positive definite".into()))?
        .l();
    let p = cov.nrows();
    let mut rng = rng::stream(seed, &[rng::tag::DESIGN]);
    let z = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok((l * z).transpose())
}

pub fn gen_toeplitz_design(n: usize, p: usize, rho: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Validation(format!("Toeplitz correlation {rho} must satisfy |rho| < 1")));
    }
    gaussian_design(n, &toeplitz_covariance(p, rho), seed)
}

/// Block design with `p = 500` columns.
pub fn gen_block_design(n: usize, seed: u64) -> Result<DMatrix<f64>> {
    gaussian_design(n, &block_covariance(500), seed)
}

/// Stand-in for a gene-expression design with `p >> n`: columns fall into
/// clusters of ten, each column loads on its cluster factor with a
/// correlation between 0.5 and 0.99, so within-cluster correlations range
/// up to about 0.98.
pub fn gen_riboflavin_like(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, &[rng::tag::DESIGN, 1]);
    let n_clusters = p.div_ceil(10);
    let factors = DMatrix::from_fn(n, n_clusters, |_, _| rng.sample::<f64, _>(StandardNormal));
    let loadings: Vec<f64> = (0..p).map(|_| rng.random_range(0.5f64..0.99).sqrt()).collect();
    DMatrix::from_fn(n, p, |i, j| {
        let a = loadings[j];
        let e: f64 = rng.sample(StandardNormal);
        a * factors[(i, j / 10)] + (1.0 - a * a).sqrt() * e
    })
}

/// Empirical variance with the `n - 1` denominator.
pub fn sample_variance(v: &DVector<f64>) -> f64 {
    let n = v.len();
    let m = v.mean();
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Noise level giving `var(X beta) / sigma^2 = snr`.
pub fn snr_calibrate(x: &DMatrix<f64>, beta: &DVector<f64>, snr: f64) -> Result<f64> {
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(Error::Validation(format!("target SNR {snr} must be positive")));
    }
    let v = sample_variance(&(x * beta));
    if !(v > 0.0) {
        return Err(Error::Validation("signal X beta has zero variance".into()));
    }
    Ok((v / snr).sqrt())
}

/// Gaussian: `X beta + sigma z`. Binomial: independent Bernoulli draws with
/// logit `X beta` (`sigma` ignored).
pub fn gen_response(x: &DMatrix<f64>, beta: &DVector<f64>, family: Family, sigma: f64, seed: u64) -> DVector<f64> {
    let eta = x * beta;
    let mut rng = rng::stream(seed, &[rng::tag::RESPONSE]);
    match family {
        Family::Gaussian => eta.map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal)),
        Family::Binomial => eta.map(|m| f64::from(rng.random::<f64>() < logistic(m))),
    }
}

/// `k` distinct indices out of `0..p`, sorted.
pub fn random_support(p: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, &[rng::tag::RESPONSE, 1]);
    let mut idx = rand::seq::index::sample(&mut rng, p, k.min(p)).into_vec();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_entries() {
        let c = block_covariance(500);
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(0, 2)], 0.8);
        assert!((c[(9, 11)] - 0.36).abs() < 1e-15);
        assert!((c[(4, 5)] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn snr_round_trip() {
        let x = gen_toeplitz_design(40, 8, 0.3, 5).unwrap();
        let beta = DVector::from_fn(8, |j, _| if j % 3 == 0 { 1.0 } else { 0.0 });
        for snr in [0.5, 1.71, 16.0] {
            let s = snr_calibrate(&x, &beta, snr).unwrap();
            let back = sample_variance(&(&x * &beta)) / (s * s);
            assert!((back - snr).abs() < 1e-12 * snr);
        }
        assert!(snr_calibrate(&x, &DVector::zeros(8), 1.0).is_err());
    }

    #[test]
    fn zero_noise_response() {
        let x = gen_toeplitz_design(10, 3, 0.0, 1).unwrap();
        let beta = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        assert_eq!(gen_response(&x, &beta, Family::Gaussian, 0.0, 3), &x * &beta);
        assert_eq!(gen_response(&x, &beta, Family::Gaussian, 1.0, 3), gen_response(&x, &beta, Family::Gaussian, 1.0, 3));
    }

    #[test]
    fn null_logistic_mean() {
        let x = gen_toeplitz_design(4000, 2, 0.0, 2).unwrap();
        let y = gen_response(&x, &DVector::zeros(2), Family::Binomial, 1.0, 9);
        assert!((y.mean() - 0.5).abs() < 1.5 / (4000f64).sqrt());
    }

    #[test]
    fn surrogate_is_finite_and_correlated() {
        let x = gen_riboflavin_like(71, 40, 3);
        assert!(x.iter().all(|v| v.is_finite()));
        let c0 = x.column(0).into_owned();
        let c1 = x.column(1).into_owned();
        let corr = {
            let (a, b) = (c0.add_scalar(-c0.mean()), c1.add_scalar(-c1.mean()));
            a.dot(&b) / (a.norm() * b.norm())
        };
        assert!(corr > 0.3, "{corr}");
    }
}
