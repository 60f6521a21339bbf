//! Gaussian laws and conditioning on linear equalities.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{psd_rank, symmetrize};

/// Relative eigenvalue threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// `N(mu, sigma)` with a possibly singular covariance.
#[derive(Debug, Clone)]
pub struct GaussianLaw {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub rank: usize,
}

impl GaussianLaw {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let m = mu.len();
        if sigma.shape() != (m, m) {
            return Err(Error::Validation(format!("covariance is {:?}, mean has length {m}", sigma.shape())));
        }
        let scale = sigma.amax().max(f64::MIN_POSITIVE);
        for i in 0..m {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::Validation("covariance is not symmetric".into()));
                }
            }
        }
        let mut sigma = sigma;
        symmetrize(&mut sigma);
        if m > 0 {
            let eig = SymmetricEigen::new(sigma.clone());
            if eig.eigenvalues.min() < -1e-10 * scale {
                return Err(Error::Validation("covariance is not positive semi-definite".into()));
            }
        }
        let rank = if m == 0 { 0 } else { psd_rank(&sigma, RANK_TOL) };
        Ok(GaussianLaw { mu, sigma, rank })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Law of `X ~ N(mu, Sigma)` given `C X = d`.
pub fn condition_on_linear(law: &GaussianLaw, c: &DMatrix<f64>, d: &DVector<f64>) -> Result<GaussianLaw> {
    let k = c.nrows();
    if k == 0 {
        return Ok(law.clone());
    }
    if c.ncols() != law.dim() || d.len() != k {
        return Err(Error::Validation("conditioning system has the wrong shape".into()));
    }
    let sc = &law.sigma * c.transpose();
    let mut csc = c * &sc;
    symmetrize(&mut csc);
    let eig = SymmetricEigen::new(csc.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmax > 0.0) || lmin <= 1e-12 * lmax {
        return Err(Error::DegenerateConditioning);
    }
    let chol = csc.cholesky().ok_or(Error::DegenerateConditioning)?;
    // K = Sigma C^T (C Sigma C^T)^{-1}
    let gain = chol.solve(&sc.transpose()).transpose();
    let mu = &law.mu + &gain * (d - c * &law.mu);
    let mut sigma = &law.sigma - &gain * sc.transpose();
    symmetrize(&mut sigma);
    let rank = psd_rank(&sigma, RANK_TOL);
    Ok(GaussianLaw { mu, sigma, rank })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_conditioning_is_identity() {
        let law = GaussianLaw::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2)).unwrap();
        let out = condition_on_linear(&law, &DMatrix::zeros(0, 2), &DVector::zeros(0)).unwrap();
        assert_eq!(out.mu, law.mu);
        assert_eq!(out.sigma, law.sigma);
    }

    #[test]
    fn sum_constraint() {
        let law = GaussianLaw::new(DVector::from_vec(vec![1.0, 2.0, 3.0]), DMatrix::identity(3, 3)).unwrap();
        let c = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let out = condition_on_linear(&law, &c, &DVector::from_vec(vec![9.0])).unwrap();
        let expect_mu = DVector::from_vec(vec![2.0, 3.0, 4.0]);
        let expect_sigma = DMatrix::identity(3, 3) - DMatrix::from_element(3, 3, 1.0 / 3.0);
        assert!((out.mu - expect_mu).amax() < 1e-12);
        assert!((out.sigma - expect_sigma).amax() < 1e-12);
        assert_eq!(out.rank, 2);
    }

    #[test]
    fn projection_on_design() {
        // Sigma = s2 I, C = X^T: mean becomes the projection of y
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0, 1.0, -1.0]);
        let y = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.3]);
        let s2 = 2.5;
        let law = GaussianLaw::new(DVector::zeros(4), DMatrix::identity(4, 4) * s2).unwrap();
        let out = condition_on_linear(&law, &x.transpose(), &(x.transpose() * &y)).unwrap();
        let proj = &x * (x.transpose() * &x).try_inverse().unwrap() * x.transpose();
        assert!((out.mu - &proj * &y).amax() < 1e-12);
        assert!((out.sigma - (DMatrix::identity(4, 4) - proj) * s2).amax() < 1e-12);
    }

    #[test]
    fn redundant_rows_fail() {
        let law = GaussianLaw::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(condition_on_linear(&law, &c, &DVector::zeros(2)).unwrap_err(), Error::DegenerateConditioning);
    }
}
