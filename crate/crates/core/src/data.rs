//! Datasets and sample splits.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Response family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "binomial" | "logistic" => Ok(Family::Binomial),
            other => Err(Error::Validation(format!("unknown family `{other}`"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Gaussian => write!(f, "gaussian"),
            Family::Binomial => write!(f, "binomial"),
        }
    }
}

/// Fixed design plus response.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub family: Family,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, family: Family) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 {
            return Err(Error::Validation(format!("need at least 2 observations, got {n}")));
        }
        if p < 1 {
            return Err(Error::Validation("design has no columns".into()));
        }
        if y.len() != n {
            return Err(Error::Validation(format!(
                "response length {} does not match {} design rows",
                y.len(),
                n
            )));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite design entry at row {}, column {}",
                k % n + 1,
                k / n + 1
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite response at row {}", i + 1)));
        }
        if family == Family::Binomial {
            if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Validation(format!(
                    "binomial response must be 0/1, row {} is {}",
                    i + 1,
                    y[i]
                )));
            }
        }
        Ok(Dataset { x, y, family })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Partition of the observations into selection and inference rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub selection_idx: Vec<usize>,
    pub inference_idx: Vec<usize>,
    pub fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    /// Random split with `round(f * n)` selection rows. Index lists are sorted.
    pub fn random(n: usize, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Validation(format!("selection fraction {fraction} not in (0, 1]")));
        }
        let n1 = ((fraction * n as f64).round() as usize).clamp(1, n);
        let mut perm: Vec<usize> = (0..n).collect();
        if n1 < n {
            let mut rng = rng::stream(seed, &[rng::tag::SPLIT]);
            perm.shuffle(&mut rng);
        }
        let mut selection_idx = perm[..n1].to_vec();
        let mut inference_idx = perm[n1..].to_vec();
        selection_idx.sort_unstable();
        inference_idx.sort_unstable();
        Ok(SplitPlan { selection_idx, inference_idx, fraction, seed })
    }

    /// All rows used for selection.
    pub fn full(n: usize) -> Self {
        SplitPlan { selection_idx: (0..n).collect(), inference_idx: Vec::new(), fraction: 1.0, seed: 0 }
    }

    pub fn n1(&self) -> usize {
        self.selection_idx.len()
    }

    pub fn n2(&self) -> usize {
        self.inference_idx.len()
    }
}

/// Copy the given rows of `x`.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Copy the given columns of `x`.
pub fn select_cols(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

pub fn select_entries(y: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_partitions_rows() {
        let s = SplitPlan::random(37, 0.75, 11).unwrap();
        assert_eq!(s.n1(), 28);
        let mut all: Vec<usize> = s.selection_idx.iter().chain(&s.inference_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        let full = SplitPlan::random(10, 1.0, 3).unwrap();
        assert!(full.inference_idx.is_empty());
        assert!(SplitPlan::random(10, 0.0, 3).is_err());
    }

    #[test]
    fn dataset_validation() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(Dataset::new(x.clone(), DVector::from_vec(vec![0.0, 1.0, 2.0]), Family::Binomial).is_err());
        assert!(Dataset::new(x.clone(), DVector::from_vec(vec![0.0, 1.0]), Family::Gaussian).is_err());
        let mut bad = x.clone();
        bad[(1, 1)] = f64::NAN;
        let err = Dataset::new(bad, DVector::zeros(3), Family::Gaussian).unwrap_err();
        assert!(err.to_string().contains("row 2, column 2"));
        assert!(Dataset::new(x, DVector::from_vec(vec![0.0, 1.0, 1.0]), Family::Binomial).is_ok());
    }
}
