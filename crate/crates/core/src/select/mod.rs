//! Lasso selection, penalty choice, and the polyhedral selection event.

pub mod cv;
pub mod lasso;
pub mod path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Family, SplitPlan};
use crate::error::{Error, Result};
use crate::glm::irls::{self, IrlsOptions};
use crate::linalg::LeastSquares;

pub use cv::{cv_lambda, cv_path, CvResult, CvRule};
pub use lasso::{fit_lasso, LassoFit, LassoOptions, LassoProblem};
pub use path::fit_lasso_fixed_size;

/// Columns rescaled to unit empirical second moment, optionally centered first.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub x: DMatrix<f64>,
    pub center: Option<Vec<f64>>,
    pub scale: Vec<f64>,
}

impl Standardized {
    pub fn new(x: &DMatrix<f64>, intercept: bool) -> Result<Self> {
        let (n, p) = x.shape();
        let mut xs = x.clone();
        let mut center = None;
        if intercept {
            let means: Vec<f64> = (0..p).map(|j| x.column(j).sum() / n as f64).collect();
            for j in 0..p {
                xs.column_mut(j).add_scalar_mut(-means[j]);
            }
            center = Some(means);
        }
        let mut scale = Vec::with_capacity(p);
        for j in 0..p {
            let s = (xs.column(j).norm_squared() / n as f64).sqrt();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Validation(format!("design column {} has no variation", j + 1)));
            }
            xs.column_mut(j).scale_mut(1.0 / s);
            scale.push(s);
        }
        Ok(Standardized { x: xs, center, scale })
    }

    /// Map coefficients fit on the standardized columns back to original units.
    pub fn unscale(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect()
    }
}

/// How the penalty is chosen on the selection data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// Cross-validated penalty minimizing the mean CV deviance.
    CvMin,
    /// Largest penalty within one standard error of the CV minimum.
    #[serde(rename = "cv_1se")]
    Cv1se,
    /// Largest model with at most this many variables along the path.
    FixedSize(usize),
    /// Fixed per-observation penalty on standardized columns (`n1 * value` in
    /// the half residual-sum-of-squares scale).
    Lambda(f64),
}

impl std::str::FromStr for Selector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || Error::Validation(format!("unknown selector `{s}`"));
        match t.as_str() {
            "cv_min" | "cv-min" | "min" => Ok(Selector::CvMin),
            "cv_1se" | "cv-1se" | "1se" | "one_se" => Ok(Selector::Cv1se),
            _ => {
                if let Some(k) = t.strip_prefix("fixed_size:").or_else(|| t.strip_prefix("fixed-size:")) {
                    let k: usize = k.parse().map_err(|_| bad())?;
                    if k == 0 {
                        return Err(Error::Validation("fixed model size must be at least 1".into()));
                    }
                    Ok(Selector::FixedSize(k))
                } else if let Some(v) = t.strip_prefix("lambda:") {
                    let v: f64 = v.parse().map_err(|_| bad())?;
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(Error::Validation(format!("penalty must be nonnegative, got {v}")));
                    }
                    Ok(Selector::Lambda(v))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selector::CvMin => write!(f, "cv_min"),
            Selector::Cv1se => write!(f, "cv_1se"),
            Selector::FixedSize(k) => write!(f, "fixed_size:{k}"),
            Selector::Lambda(v) => write!(f, "lambda:{v}"),
        }
    }
}

/// Settings shared by every selection step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    pub selector: Selector,
    pub family: Family,
    pub intercept: bool,
    pub n_folds: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions { selector: Selector::Cv1se, family: Family::Gaussian, intercept: false, n_folds: 10 }
    }
}

/// Selected support, signs, penalty, and the active polyhedron on the
/// selection rows.
#[derive(Debug, Clone)]
pub struct SelectionEvent {
    pub split: SplitPlan,
    /// Fit in the coordinates the polyhedron is built in.
    pub fit: LassoFit,
    /// Coefficients in the units of the original design.
    pub coef: Vec<f64>,
    pub intercept: Option<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub inactive_a: Option<DMatrix<f64>>,
    pub inactive_b: Option<DVector<f64>>,
}

impl SelectionEvent {
    pub fn support(&self) -> &[usize] {
        &self.fit.support
    }

    pub fn signs(&self) -> &[f64] {
        &self.fit.signs
    }

    pub fn s_tilde(&self) -> usize {
        self.fit.support.len()
    }

    /// Largest violation of `A y1 <= b` (negative when strictly inside).
    pub fn max_violation(&self, y1: &DVector<f64>) -> f64 {
        let r = &self.a * y1 - &self.b;
        r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Active and inactive rows stacked, when the inactive system was built.
    pub fn full_system(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let (ia, ib) = (self.inactive_a.as_ref()?, self.inactive_b.as_ref()?);
        let k = self.a.nrows();
        let m = ia.nrows();
        let n = self.a.ncols();
        let mut a = DMatrix::zeros(k + m, n);
        a.rows_mut(0, k).copy_from(&self.a);
        a.rows_mut(k, m).copy_from(ia);
        let mut b = DVector::zeros(k + m);
        b.rows_mut(0, k).copy_from(&self.b);
        b.rows_mut(k, m).copy_from(ib);
        Some((a, b))
    }
}

/// Polyhedron `{y1 : A y1 <= b}` of responses reproducing the support and
/// signs of `fit` on design `x1` at the same penalty.
pub fn selection_event(
    x1: &DMatrix<f64>,
    y1: &DVector<f64>,
    fit: &LassoFit,
    include_inactive: bool,
) -> Result<SelectionEvent> {
    let (n1, p) = x1.shape();
    if y1.len() != n1 || fit.beta_hat.len() != p {
        return Err(Error::Validation("selection event: dimensions disagree".into()));
    }
    if fit.support.is_empty() {
        return Err(Error::EmptySelection);
    }
    let s = fit.support.len();
    if s >= n1 {
        return Err(Error::SingularSubmatrix(format!("{s} selected variables with {n1} selection rows")));
    }
    let xs = crate::data::select_cols(x1, &fit.support);
    let ls = LeastSquares::new(&xs)?;
    let pinv = ls.pinv();
    let xi = DVector::from_column_slice(&fit.signs);
    let ginv_xi = ls.gram_inverse() * &xi;
    let mut a = pinv;
    let mut b = DVector::zeros(s);
    for k in 0..s {
        a.row_mut(k).scale_mut(-xi[k]);
        b[k] = -fit.lambda * xi[k] * ginv_xi[k];
    }
    let (inactive_a, inactive_b) = if include_inactive && s < p {
        let lambda = fit.lambda;
        if !(lambda > 0.0) {
            return Err(Error::Validation("inactive constraints need a positive penalty".into()));
        }
        let rest: Vec<usize> = (0..p).filter(|j| !fit.support.contains(j)).collect();
        let xr = crate::data::select_cols(x1, &rest);
        // residual maker I - P_S applied to the inactive columns
        let proj = &xs * ls.pinv();
        let resid = &xr - &proj * &xr;
        // x_j^T (X_S^+)^T xi
        let shift = xr.transpose() * (ls.pinv().transpose() * &xi);
        let m = rest.len();
        let mut ia = DMatrix::zeros(2 * m, n1);
        let mut ib = DVector::zeros(2 * m);
        for k in 0..m {
            let row = resid.column(k).transpose() / lambda;
            ia.row_mut(k).copy_from(&row);
            ib[k] = 1.0 - shift[k];
            ia.row_mut(m + k).copy_from(&(-row));
            ib[m + k] = 1.0 + shift[k];
        }
        (Some(ia), Some(ib))
    } else {
        (None, None)
    };
    let event = SelectionEvent {
        split: SplitPlan::full(n1),
        fit: fit.clone(),
        coef: fit.beta_hat.clone(),
        intercept: None,
        a,
        b,
        inactive_a,
        inactive_b,
    };
    let viol = event.max_violation(y1);
    let tol = 1e-9 * (1.0 + event.b.amax()).max(y1.amax());
    if viol > tol {
        return Err(Error::InvalidStartPoint { violation: viol });
    }
    Ok(event)
}

/// Remove the component along `u` from every column of `x`.
pub fn partial_out(x: &DMatrix<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let uu = u.norm_squared();
    let mut out = x.clone();
    if uu > 0.0 {
        for j in 0..x.ncols() {
            let c = u.dot(&x.column(j)) / uu;
            out.column_mut(j).axpy(-c, u, 1.0);
        }
    }
    out
}

/// Run the configured selector on the selection rows and build the event.
///
/// Gaussian: the Lasso runs on standardized (and, with an intercept,
/// centered) columns, and the polyhedron lives in those coordinates.
/// Binomial: the penalized IRLS fit is converted to its weighted
/// least-squares form and the polyhedron is built on that.
pub fn select_on(
    x1: &DMatrix<f64>,
    y1: &DVector<f64>,
    opts: &SelectOptions,
    cv_seed: u64,
    include_inactive: bool,
) -> Result<SelectionEvent> {
    match opts.family {
        Family::Gaussian => select_gaussian(x1, y1, opts, cv_seed, include_inactive),
        Family::Binomial => select_binomial(x1, y1, opts, cv_seed, include_inactive),
    }
}

fn select_gaussian(
    x1: &DMatrix<f64>,
    y1: &DVector<f64>,
    opts: &SelectOptions,
    cv_seed: u64,
    include_inactive: bool,
) -> Result<SelectionEvent> {
    let n1 = x1.nrows();
    let st = Standardized::new(x1, opts.intercept)?;
    let y_mean = if opts.intercept { y1.sum() / n1 as f64 } else { 0.0 };
    let yc = y1.add_scalar(-y_mean);
    let lasso_opts = LassoOptions::default();
    let fit = match opts.selector {
        Selector::Lambda(l) => LassoProblem::new(&st.x, &yc)?.solve(l * n1 as f64, None, &lasso_opts)?,
        Selector::CvMin | Selector::Cv1se => {
            let rule = if opts.selector == Selector::CvMin { CvRule::Min } else { CvRule::OneSe };
            let cv = cv::cv_gaussian_standardized(&st.x, &yc, y1, opts.intercept, opts.n_folds, cv_seed)?;
            cv.fit_for(rule).clone()
        }
        Selector::FixedSize(k) => path::fixed_size_gaussian(&st.x, &yc, k)?,
    };
    let mut event = selection_event(&st.x, y1, &fit, include_inactive)?;
    event.coef = st.unscale(&fit.beta_hat);
    if let Some(means) = &st.center {
        let shift: f64 = means.iter().zip(&event.coef).map(|(m, b)| m * b).sum();
        event.intercept = Some(y_mean - shift);
    }
    Ok(event)
}

fn select_binomial(
    x1: &DMatrix<f64>,
    y1: &DVector<f64>,
    opts: &SelectOptions,
    cv_seed: u64,
    include_inactive: bool,
) -> Result<SelectionEvent> {
    let st = Standardized::new(x1, false)?;
    let irls_opts = IrlsOptions { intercept: opts.intercept, ..IrlsOptions::default() };
    let state = match opts.selector {
        Selector::Lambda(l) => irls::irls_logistic_lasso(&st.x, y1, l * x1.nrows() as f64, &irls_opts, None)?,
        Selector::CvMin | Selector::Cv1se => {
            let rule = if opts.selector == Selector::CvMin { CvRule::Min } else { CvRule::OneSe };
            let cv = cv::cv_binomial_standardized(&st.x, y1, opts.intercept, opts.n_folds, cv_seed)?;
            let lambda = cv.lambda(rule) * x1.nrows() as f64;
            irls::irls_logistic_lasso(&st.x, y1, lambda, &irls_opts, Some(&cv.fit_for(rule).beta_hat))?
        }
        Selector::FixedSize(k) => path::fixed_size_binomial(&st.x, y1, k, &irls_opts)?,
    };
    let (xw, yw) = state.weighted_problem(&st.x);
    let fit = LassoFit::from_beta(state.beta.clone(), state.lambda, 0.0, state.iterations);
    let mut event = selection_event(&xw, &yw, &fit, include_inactive)?;
    event.fit.kkt_residual = lasso::kkt_violation(&xw, &yw, &fit.beta_hat, fit.lambda);
    event.coef = st.unscale(&state.beta);
    event.intercept = state.intercept;
    Ok(event)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_column_event() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let y = DVector::from_vec(vec![2.0, 0.3]);
        let fit = fit_lasso(&x, &y, 0.5).unwrap();
        assert_eq!(fit.signs, vec![1.0]);
        let ev = selection_event(&x, &y, &fit, false).unwrap();
        assert!((ev.a[(0, 0)] + 1.0).abs() < 1e-14);
        assert!(ev.a[(0, 1)].abs() < 1e-14);
        assert!((ev.b[0] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn empty_support_signals() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![0.1, 0.0, 0.0]);
        let fit = fit_lasso(&x, &y, 1.0).unwrap();
        assert_eq!(selection_event(&x, &y, &fit, false).unwrap_err(), Error::EmptySelection);
    }

    #[test]
    fn selector_parsing() {
        assert_eq!("cv_1se".parse::<Selector>().unwrap(), Selector::Cv1se);
        assert_eq!("fixed_size:16".parse::<Selector>().unwrap(), Selector::FixedSize(16));
        assert_eq!("lambda:0.25".parse::<Selector>().unwrap(), Selector::Lambda(0.25));
        assert!("fixed_size:0".parse::<Selector>().is_err());
        for s in [Selector::CvMin, Selector::FixedSize(3), Selector::Lambda(0.5)] {
            assert_eq!(s.to_string().parse::<Selector>().unwrap(), s);
        }
    }

    #[test]
    fn partial_out_is_orthogonal() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 4.0, -1.0]);
        let u = DVector::from_vec(vec![1.0, 2.0, 0.5]);
        let r = partial_out(&x, &u);
        assert!((u.transpose() * r).amax() < 1e-12);
    }
}
