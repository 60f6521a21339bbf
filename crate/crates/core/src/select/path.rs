//! Lasso fits with a prescribed number of selected variables.

use nalgebra::{DMatrix, DVector};

use crate::data::Family;
use crate::error::{Error, Result};
use crate::glm::irls::{self, IrlsOptions, IrlsState};
use crate::select::cv::log_grid;
use crate::select::lasso::{LassoFit, LassoOptions, LassoProblem};
use crate::select::Standardized;

const PATH_POINTS: usize = 100;
const PATH_DECADES: f64 = 4.0;
const BISECTION_STEPS: usize = 30;

/// Walk a decreasing penalty grid and return the first fit whose support has
/// `target` variables. A jump past `target` between two grid points is
/// bisected; failing that, the largest smaller model seen before the path
/// overshoots is returned.
fn walk<T: Clone>(
    lambda_max: f64,
    target: usize,
    mut solve: impl FnMut(f64, Option<&[f64]>) -> Result<(T, Vec<f64>)>,
) -> Result<T> {
    let size = |b: &[f64]| b.iter().filter(|v| **v != 0.0).count();
    let grid = log_grid(lambda_max, PATH_POINTS, PATH_DECADES);
    let mut best: Option<(usize, T)> = None;
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for &l in &grid {
        let warm = prev.as_ref().map(|(_, b)| b.as_slice());
        let (fit, beta) = solve(l, warm)?;
        let s = size(&beta);
        if s == target {
            return Ok(fit);
        }
        if s > target {
            if let Some((l_hi, b_hi)) = prev.clone() {
                let (mut hi, mut lo) = (l_hi, l);
                let mut warm = b_hi;
                for _ in 0..BISECTION_STEPS {
                    let mid = (hi * lo).sqrt();
                    let (f, b) = solve(mid, Some(&warm))?;
                    let sm = size(&b);
                    if sm == target {
                        return Ok(f);
                    }
                    if sm > target {
                        lo = mid;
                    } else {
                        if best.as_ref().is_none_or(|(bs, _)| sm > *bs) {
                            best = Some((sm, f));
                        }
                        hi = mid;
                        warm = b;
                    }
                }
            }
            break;
        }
        if best.as_ref().is_none_or(|(bs, _)| s > *bs) {
            best = Some((s, fit));
        }
        prev = Some((l, beta));
    }
    best.map(|(_, f)| f).ok_or_else(|| Error::Validation("empty Lasso path".into()))
}

pub(crate) fn fixed_size_gaussian(xs: &DMatrix<f64>, y: &DVector<f64>, target: usize) -> Result<LassoFit> {
    let problem = LassoProblem::new(xs, y)?;
    let opts = LassoOptions::default();
    walk(problem.lambda_max(), target, |l, warm| {
        let f = problem.solve(l, warm, &opts)?;
        let b = f.beta_hat.clone();
        Ok((f, b))
    })
}

pub(crate) fn fixed_size_binomial(
    xs: &DMatrix<f64>,
    y: &DVector<f64>,
    target: usize,
    opts: &IrlsOptions,
) -> Result<IrlsState> {
    walk(irls::lambda_max(xs, y, opts.intercept), target, |l, warm| {
        let s = irls::irls_logistic_lasso(xs, y, l, opts, warm)?;
        let b = s.beta.clone();
        Ok((s, b))
    })
}

/// Lasso fit on standardized columns (no intercept) with `target_size`
/// selected variables, or the largest smaller model on the path.
pub fn fit_lasso_fixed_size(x: &DMatrix<f64>, y: &DVector<f64>, family: Family, target_size: usize) -> Result<LassoFit> {
    if target_size < 1 {
        return Err(Error::Validation("target model size must be at least 1".into()));
    }
    if target_size >= x.nrows() {
        return Err(Error::Validation(format!(
            "target model size {target_size} must be below the number of rows {}",
            x.nrows()
        )));
    }
    let st = Standardized::new(x, false)?;
    match family {
        Family::Gaussian => fixed_size_gaussian(&st.x, y, target_size),
        Family::Binomial => {
            let s = fixed_size_binomial(&st.x, y, target_size, &IrlsOptions::default())?;
            Ok(LassoFit::from_beta(s.beta, s.lambda, 0.0, s.iterations))
        }
    }
}
