//! Plug-in estimates of the noise level.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::select::cv::{self, CvRule};
use crate::select::{SelectionEvent, Standardized};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Residuals of a cross-validated Lasso on all data.
    GlobalCv,
    /// Residuals on all rows of the coefficients selected on each split.
    PerSplit,
    Known(f64),
}

impl std::str::FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global_cv" => Ok(SigmaMode::GlobalCv),
            "per_split" => Ok(SigmaMode::PerSplit),
            _ => {
                let v = s
                    .strip_prefix("known:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v > 0.0 && v.is_finite())
                    .ok_or_else(|| {
                        Error::Validation(format!("unknown sigma mode '{s}' (global_cv, per_split, known:<value>)"))
                    })?;
                Ok(SigmaMode::Known(v))
            }
        }
    }
}

impl std::fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SigmaMode::GlobalCv => write!(f, "global_cv"),
            SigmaMode::PerSplit => write!(f, "per_split"),
            SigmaMode::Known(v) => write!(f, "known:{v}"),
        }
    }
}

/// `sqrt(rss / (n - df))`, refusing a zero or undefined result.
pub fn residual_sigma(rss: f64, n: usize, df: usize) -> Result<f64> {
    if df >= n {
        return Err(Error::Validation(format!("cannot estimate sigma with {df} parameters and {n} rows")));
    }
    let s = (rss / (n - df) as f64).sqrt();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::DegenerateSigma(s));
    }
    Ok(s)
}

fn residual_ss(x: &DMatrix<f64>, y: &DVector<f64>, coef: &[f64], intercept: f64) -> f64 {
    let beta = DVector::from_column_slice(coef);
    (y - x * beta).add_scalar(-intercept).norm_squared()
}

/// Noise level for the configured mode. `PerSplit` needs the split's event;
/// `GlobalCv` uses `seed` for its folds.
pub fn estimate_sigma(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    mode: SigmaMode,
    event: Option<&SelectionEvent>,
    intercept: bool,
    n_folds: usize,
    seed: u64,
) -> Result<f64> {
    let n = x.nrows();
    match mode {
        SigmaMode::Known(s) => {
            if s > 0.0 && s.is_finite() {
                Ok(s)
            } else {
                Err(Error::DegenerateSigma(s))
            }
        }
        SigmaMode::PerSplit => {
            let ev = event.ok_or_else(|| Error::Validation("per-split sigma needs a selection event".into()))?;
            let rss = residual_ss(x, y, &ev.coef, ev.intercept.unwrap_or(0.0));
            residual_sigma(rss, n, ev.s_tilde())
        }
        SigmaMode::GlobalCv => {
            let st = Standardized::new(x, intercept)?;
            let y_mean = if intercept { y.mean() } else { 0.0 };
            let yc = y.add_scalar(-y_mean);
            let cvr = cv::cv_gaussian_standardized(&st.x, &yc, y, intercept, n_folds, rng::derive_seed(seed, &[rng::tag::SIGMA_CV]))?;
            let fit = cvr.fit_for(CvRule::Min);
            let rss = (&yc - &st.x * DVector::from_column_slice(&fit.beta_hat)).norm_squared();
            residual_sigma(rss, n, fit.support.len() + usize::from(intercept))
        }
    }
}
