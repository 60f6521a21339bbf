//! K-fold cross-validation over a log-spaced penalty grid.
//!
//! Penalties on the grid are per observation: a fit on `m` rows uses
//! `m * lambda` in the half residual-sum-of-squares scale.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::data::{select_entries, select_rows, Family};
use crate::error::{Error, Result};
use crate::glm::irls::{self, IrlsOptions};
use crate::rng;
use crate::select::lasso::{LassoFit, LassoOptions, LassoProblem};
use crate::select::Standardized;

pub const GRID_SIZE: usize = 100;
/// Span of the default grid when `n >= p`.
pub const GRID_DECADES: f64 = 4.0;
/// Span when `n < p`, where small penalties approach interpolation.
pub const GRID_DECADES_WIDE: f64 = 2.0;

fn grid_decades(n: usize, p: usize) -> f64 {
    if n < p {
        GRID_DECADES_WIDE
    } else {
        GRID_DECADES
    }
}

/// glmnet-style saturation: the fit explains nearly everything, stopped
/// improving, or has as many parameters as rows.
fn saturated(ratio: f64, prev_ratio: f64, df: usize, n: usize) -> bool {
    ratio >= 0.999 || ratio - prev_ratio < 1e-5 * ratio || df + 1 >= n
}

/// Which grid point to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvRule {
    Min,
    OneSe,
}

/// CV curve plus the full-data fits along the grid.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    pub cvm: Vec<f64>,
    pub cvsd: Vec<f64>,
    pub idx_min: usize,
    pub idx_1se: usize,
    /// Full-data fits on the standardized design, one per grid point.
    pub fits: Vec<LassoFit>,
}

impl CvResult {
    pub fn index(&self, rule: CvRule) -> usize {
        match rule {
            CvRule::Min => self.idx_min,
            CvRule::OneSe => self.idx_1se,
        }
    }

    pub fn lambda(&self, rule: CvRule) -> f64 {
        self.lambdas[self.index(rule)]
    }

    pub fn fit_for(&self, rule: CvRule) -> &LassoFit {
        &self.fits[self.index(rule)]
    }
}

/// Balanced fold labels from a seeded permutation.
pub fn cv_folds(n: usize, n_folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, &[rng::tag::CV_FOLDS]));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % n_folds;
    }
    fold
}

/// `count` log-spaced values from `hi` down to `hi * 10^-decades`.
pub fn log_grid(hi: f64, count: usize, decades: f64) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    (0..count)
        .map(|k| hi * 10f64.powf(-decades * k as f64 / (count - 1) as f64))
        .collect()
}

/// Pick the minimum and one-standard-error indices on a curve ordered by
/// decreasing penalty.
pub fn choose_indices(cvm: &[f64], cvsd: &[f64]) -> (usize, usize) {
    let mut idx_min = 0;
    for k in 1..cvm.len() {
        if cvm[k] < cvm[idx_min] {
            idx_min = k;
        }
    }
    let bound = cvm[idx_min] + cvsd[idx_min];
    let idx_1se = (0..=idx_min).find(|&k| cvm[k] <= bound).unwrap_or(idx_min);
    (idx_min, idx_1se)
}

/// Fold-size weighted mean and standard error of per-fold errors.
pub fn summarize_folds(errors: &[Vec<f64>], weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = errors.len();
    let g = errors[0].len();
    let wsum: f64 = weights.iter().sum();
    let mut cvm = vec![0.0; g];
    let mut cvsd = vec![0.0; g];
    for l in 0..g {
        let m: f64 = (0..k).map(|f| weights[f] * errors[f][l]).sum::<f64>() / wsum;
        let v: f64 = (0..k).map(|f| weights[f] * (errors[f][l] - m).powi(2)).sum::<f64>() / wsum;
        cvm[l] = m;
        cvsd[l] = if k > 1 { (v / (k - 1) as f64).sqrt() } else { 0.0 };
    }
    (cvm, cvsd)
}

fn check_cv_input(n: usize, n_folds: usize, y: &DVector<f64>) -> Result<()> {
    if n_folds < 2 {
        return Err(Error::Validation(format!("need at least 2 folds, got {n_folds}")));
    }
    if n < n_folds {
        return Err(Error::Validation(format!("{n} observations cannot fill {n_folds} folds")));
    }
    let first = y[0];
    if y.iter().all(|&v| v == first) {
        return Err(Error::Validation("response is constant; cross-validation is undefined".into()));
    }
    Ok(())
}

/// Cross-validated penalty (per observation, standardized columns).
pub fn cv_lambda(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    family: Family,
    n_folds: usize,
    rule: CvRule,
    seed: u64,
) -> Result<f64> {
    Ok(cv_path(x, y, family, false, None, n_folds, seed)?.lambda(rule))
}

/// Full CV result; `grid` overrides the default penalty grid.
pub fn cv_path(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    family: Family,
    intercept: bool,
    grid: Option<&[f64]>,
    n_folds: usize,
    seed: u64,
) -> Result<CvResult> {
    check_cv_input(x.nrows(), n_folds, y)?;
    match family {
        Family::Gaussian => {
            let st = Standardized::new(x, intercept)?;
            let y_mean = if intercept { y.mean() } else { 0.0 };
            let yc = y.add_scalar(-y_mean);
            gaussian(&st.x, &yc, intercept, grid, n_folds, seed)
        }
        Family::Binomial => {
            let st = Standardized::new(x, false)?;
            binomial(&st.x, y, intercept, grid, n_folds, seed)
        }
    }
}

pub(crate) fn cv_gaussian_standardized(
    xs: &DMatrix<f64>,
    yc: &DVector<f64>,
    y_raw: &DVector<f64>,
    intercept: bool,
    n_folds: usize,
    seed: u64,
) -> Result<CvResult> {
    check_cv_input(xs.nrows(), n_folds, y_raw)?;
    gaussian(xs, yc, intercept, None, n_folds, seed)
}

pub(crate) fn cv_binomial_standardized(
    xs: &DMatrix<f64>,
    y: &DVector<f64>,
    intercept: bool,
    n_folds: usize,
    seed: u64,
) -> Result<CvResult> {
    check_cv_input(xs.nrows(), n_folds, y)?;
    binomial(xs, y, intercept, None, n_folds, seed)
}

fn center_rows(x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, Vec<f64>, f64) {
    let n = x.nrows() as f64;
    let means: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).sum() / n).collect();
    let mut xc = x.clone();
    for (j, m) in means.iter().enumerate() {
        xc.column_mut(j).add_scalar_mut(-m);
    }
    let ym = y.sum() / n;
    (xc, y.add_scalar(-ym), means, ym)
}

/// Path fits with glmnet-style early exit once the fit saturates.
fn gaussian_full_path(
    problem: &LassoProblem,
    lambdas_obs: &[f64],
    n: usize,
    null_dev: f64,
    truncate: bool,
) -> Result<Vec<LassoFit>> {
    let opts = LassoOptions::screening();
    let mut fits: Vec<LassoFit> = Vec::new();
    let mut prev_ratio = 0.0;
    for &l in lambdas_obs {
        let warm = fits.last().map(|f| f.beta_hat.as_slice());
        let fit = problem.solve(l * n as f64, warm, &opts)?;
        let df = fit.support.len();
        let ratio = 1.0 - problem.rss(&fit.beta_hat) / null_dev;
        fits.push(fit);
        if truncate && fits.len() > 1 && saturated(ratio, prev_ratio, df, n) {
            break;
        }
        prev_ratio = ratio;
    }
    Ok(fits)
}

fn gaussian(
    xs: &DMatrix<f64>,
    yc: &DVector<f64>,
    intercept: bool,
    grid: Option<&[f64]>,
    n_folds: usize,
    seed: u64,
) -> Result<CvResult> {
    let n = xs.nrows();
    let problem = LassoProblem::new(xs, yc)?;
    let (lambdas, truncate) = match grid {
        Some(g) => (g.to_vec(), false),
        None => (log_grid(problem.lambda_max() / n as f64, GRID_SIZE, grid_decades(n, xs.ncols())), true),
    };
    let null_dev = yc.norm_squared();
    let mut fits = gaussian_full_path(&problem, &lambdas, n, null_dev, truncate)?;
    let lambdas: Vec<f64> = lambdas[..fits.len()].to_vec();

    let fold = cv_folds(n, n_folds, seed);
    let opts = LassoOptions::screening();
    let mut errors = Vec::with_capacity(n_folds);
    let mut weights = Vec::with_capacity(n_folds);
    for k in 0..n_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
        let xt = select_rows(xs, &train);
        let yt = select_entries(yc, &train);
        let (xt, yt, means, ym) = if intercept {
            center_rows(&xt, &yt)
        } else {
            (xt, yt, vec![0.0; xs.ncols()], 0.0)
        };
        let sub = LassoProblem::new(&xt, &yt)?;
        let xv = select_rows(xs, &test);
        let yv = select_entries(yc, &test);
        let mut errs = Vec::with_capacity(lambdas.len());
        let mut warm: Option<Vec<f64>> = None;
        let fold_null = yt.norm_squared();
        let mut prev_ratio = 0.0;
        let mut stopped = false;
        for &l in &lambdas {
            // past saturation the fold keeps its last fit, as glmnet extrapolates
            if stopped {
                errs.push(*errs.last().expect("nonempty"));
                continue;
            }
            let fit = sub.solve(l * train.len() as f64, warm.as_deref(), &opts)?;
            let beta = DVector::from_column_slice(&fit.beta_hat);
            let icpt = ym - means.iter().zip(beta.iter()).map(|(m, b)| m * b).sum::<f64>();
            let pred = &xv * &beta;
            let mse = yv.iter().zip(pred.iter()).map(|(y, f)| (y - f - icpt).powi(2)).sum::<f64>() / test.len() as f64;
            errs.push(mse);
            let ratio = 1.0 - sub.rss(&fit.beta_hat) / fold_null;
            stopped = truncate && errs.len() > 1 && saturated(ratio, prev_ratio, fit.support.len(), train.len());
            prev_ratio = ratio;
            warm = Some(fit.beta_hat);
        }
        errors.push(errs);
        weights.push(test.len() as f64);
    }
    let (cvm, cvsd) = summarize_folds(&errors, &weights);
    let (idx_min, idx_1se) = choose_indices(&cvm, &cvsd);
    // the reported fits are solved to full precision
    for k in [idx_min, idx_1se] {
        let warm = fits[k].beta_hat.clone();
        fits[k] = problem.solve(lambdas[k] * n as f64, Some(&warm), &LassoOptions::default())?;
    }
    Ok(CvResult { lambdas, cvm, cvsd, idx_min, idx_1se, fits })
}

fn binomial_deviance(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    let mut dev = 0.0;
    for (yi, e) in y.iter().zip(eta.iter()) {
        let p = irls::clamp_prob(irls::logistic(*e));
        dev -= 2.0 * (yi * p.ln() + (1.0 - yi) * (1.0 - p).ln());
    }
    dev
}

fn binomial(
    xs: &DMatrix<f64>,
    y: &DVector<f64>,
    intercept: bool,
    grid: Option<&[f64]>,
    n_folds: usize,
    seed: u64,
) -> Result<CvResult> {
    let n = xs.nrows();
    let opts = IrlsOptions { intercept, ..IrlsOptions::default() };
    let (lambdas, truncate) = match grid {
        Some(g) => (g.to_vec(), false),
        None => (log_grid(irls::lambda_max(xs, y, intercept) / n as f64, GRID_SIZE, grid_decades(n, xs.ncols())), true),
    };
    let ybar = y.mean();
    let null_eta = if intercept { (ybar / (1.0 - ybar)).ln() } else { 0.0 };
    let null_dev = binomial_deviance(y, &DVector::from_element(n, null_eta));
    let mut fits = Vec::new();
    let mut prev_ratio = 0.0;
    let mut warm: Option<Vec<f64>> = None;
    for &l in &lambdas {
        let state = irls::irls_logistic_lasso(xs, y, l * n as f64, &opts, warm.as_deref())?;
        let ratio = 1.0 - state.deviance / null_dev;
        let df = state.beta.iter().filter(|b| **b != 0.0).count();
        warm = Some(state.beta.clone());
        fits.push(LassoFit::from_beta(state.beta, state.lambda, 0.0, state.iterations));
        if truncate && fits.len() > 1 && saturated(ratio, prev_ratio, df, n) {
            break;
        }
        prev_ratio = ratio;
    }
    let lambdas: Vec<f64> = lambdas[..fits.len()].to_vec();

    let fold = cv_folds(n, n_folds, seed);
    let mut errors = Vec::with_capacity(n_folds);
    let mut weights = Vec::with_capacity(n_folds);
    for k in 0..n_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
        let xt = select_rows(xs, &train);
        let yt = select_entries(y, &train);
        let xv = select_rows(xs, &test);
        let yv = select_entries(y, &test);
        let mut errs = Vec::with_capacity(lambdas.len());
        let mut warm: Option<Vec<f64>> = None;
        for &l in &lambdas {
            let state = match irls::irls_logistic_lasso(&xt, &yt, l * train.len() as f64, &opts, warm.as_deref()) {
                Ok(s) => s,
                // a fold with a single class or separation: keep the previous fit
                Err(Error::IrlsConvergence { .. }) if warm.is_some() => {
                    errs.push(*errs.last().unwrap());
                    continue;
                }
                Err(e) => return Err(e),
            };
            let eta = &xv * DVector::from_column_slice(&state.beta);
            let eta = eta.add_scalar(state.intercept.unwrap_or(0.0));
            errs.push(binomial_deviance(&yv, &eta) / test.len() as f64);
            warm = Some(state.beta);
        }
        errors.push(errs);
        weights.push(test.len() as f64);
    }
    let (cvm, cvsd) = summarize_folds(&errors, &weights);
    let (idx_min, idx_1se) = choose_indices(&cvm, &cvsd);
    Ok(CvResult { lambdas, cvm, cvsd, idx_min, idx_1se, fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn instance(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        for i in 0..n {
            y[i] += 1.5 * x[(i, 0)] - x[(i, 3)];
        }
        (x, y)
    }

    #[test]
    fn folds_are_balanced() {
        let f = cv_folds(23, 5, 9);
        let mut counts = [0; 5];
        for &k in &f {
            counts[k] += 1;
        }
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
        assert_eq!(f, cv_folds(23, 5, 9));
    }

    #[test]
    fn single_candidate_grid() {
        let (x, y) = instance(40, 10, 1);
        for intercept in [false, true] {
            let cv = cv_path(&x, &y, Family::Gaussian, intercept, Some(&[0.2]), 5, 3).unwrap();
            assert_eq!(cv.lambda(CvRule::Min), 0.2);
            assert_eq!(cv.lambda(CvRule::OneSe), 0.2);
        }
    }

    #[test]
    fn one_se_is_not_below_min() {
        for seed in 0..5 {
            let (x, y) = instance(50, 20, seed);
            let cv = cv_path(&x, &y, Family::Gaussian, false, None, 5, seed).unwrap();
            assert!(cv.lambda(CvRule::OneSe) >= cv.lambda(CvRule::Min));
        }
    }

    #[test]
    fn constant_response_rejected() {
        let (x, _) = instance(20, 5, 2);
        let y = DVector::from_element(20, 3.0);
        assert!(matches!(cv_lambda(&x, &y, Family::Gaussian, 5, CvRule::Min, 1), Err(Error::Validation(_))));
        assert!(cv_lambda(&x, &DVector::from_element(20, 1.0), Family::Binomial, 5, CvRule::Min, 1).is_err());
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = log_grid(2.0, 100, 4.0);
        assert_eq!(g.len(), 100);
        assert!((g[99] - 2e-4).abs() < 1e-15);
        assert!((g[1] / g[0] - g[50] / g[49]).abs() < 1e-12);
    }

    #[test]
    fn index_rules() {
        let cvm = [5.0, 3.0, 2.2, 2.0, 2.1];
        let cvsd = [0.1, 0.1, 0.1, 0.3, 0.1];
        assert_eq!(choose_indices(&cvm, &cvsd), (3, 2));
    }
}
