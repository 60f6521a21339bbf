//! Quantile aggregation of per-split adjusted p-values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How p-values from the splits are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Fixed quantile `gamma`.
    Fixed(f64),
    /// Quantile optimized over `[gamma_min, 1]`.
    Optimized(f64),
}

impl Aggregation {
    pub fn validate(&self) -> Result<()> {
        let g = match self {
            Aggregation::Fixed(g) | Aggregation::Optimized(g) => *g,
        };
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::Validation(format!("quantile {g} not in (0, 1]")));
        }
        Ok(())
    }

    /// Smallest quantile that enters the aggregate.
    pub fn gamma_min(&self) -> f64 {
        match self {
            Aggregation::Fixed(g) | Aggregation::Optimized(g) => *g,
        }
    }

    /// Factor between the smallest usable raw quantile and the aggregate.
    pub fn penalty(&self) -> f64 {
        match self {
            Aggregation::Fixed(_) => 1.0,
            Aggregation::Optimized(g) => 1.0 - g.ln(),
        }
    }

    pub fn apply(&self, p: &[f64]) -> f64 {
        match self {
            Aggregation::Fixed(g) => aggregate_fixed(p, *g),
            Aggregation::Optimized(g) => aggregate_optimized(p, *g),
        }
    }

    /// Fewest splits a variable must be selected in before its aggregate can
    /// drop below one.
    pub fn min_selected(&self, n_splits: usize) -> usize {
        order_index(self.gamma_min(), n_splits)
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Aggregation::Fixed(g) => write!(f, "gamma={g}"),
            Aggregation::Optimized(g) => write!(f, "gamma_min={g}"),
        }
    }
}

/// `ceil(gamma * b)` clamped to `1..=b`, with a small guard against
/// products such as `0.3 * 10` landing just above an integer.
fn order_index(gamma: f64, b: usize) -> usize {
    let x = gamma * b as f64;
    let k = (x - 1e-9 * x.max(1.0)).ceil() as usize;
    k.clamp(1, b.max(1))
}

fn sorted(p: &[f64]) -> Vec<f64> {
    let mut s = p.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// `min(1, q_gamma(P / gamma))` with `q_gamma` the `ceil(gamma B)`-th order
/// statistic.
pub fn aggregate_fixed(p: &[f64], gamma: f64) -> f64 {
    if p.is_empty() {
        return 1.0;
    }
    let s = sorted(p);
    let k = order_index(gamma, s.len());
    (s[k - 1] / gamma).min(1.0)
}

/// `min(1, (1 - ln gamma_min) * min_{gamma in [gamma_min, 1]} Q(gamma))`.
///
/// `Q` only changes where `ceil(gamma B)` does, and within each step it is
/// smallest at the right end, so the candidates are `gamma = k / B` for
/// every attainable order index `k`.
pub fn aggregate_optimized(p: &[f64], gamma_min: f64) -> f64 {
    if p.is_empty() {
        return 1.0;
    }
    let s = sorted(p);
    let b = s.len();
    let k0 = order_index(gamma_min, b);
    let best = (k0..=b)
        .map(|k| s[k - 1] * b as f64 / k as f64)
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    ((1.0 - gamma_min.ln()) * best).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_examples() {
        assert_eq!(aggregate_fixed(&[1.0; 5], 0.5), 1.0);
        assert!((aggregate_fixed(&[0.2], 0.5) - 0.4).abs() < 1e-15);
        assert!((aggregate_fixed(&[0.01, 0.05, 0.1, 0.2], 0.5) - 0.1).abs() < 1e-15);
        // with gamma = 1/B the aggregate is B times the minimum
        assert!((aggregate_fixed(&[0.3, 0.001, 0.5, 0.2], 0.25) - 0.004).abs() < 1e-15);
    }

    #[test]
    fn optimized_examples() {
        assert!((1.0 - 0.05f64.ln() - 3.995732273553991).abs() < 1e-12);
        assert_eq!(aggregate_optimized(&[1.0; 7], 0.05), 1.0);
        let v = aggregate_optimized(&[0.01; 20], 0.05);
        assert!((v - 0.01 * (1.0 - 0.05f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn order_index_guard() {
        assert_eq!(order_index(0.3, 10), 3);
        assert_eq!(order_index(0.05, 20), 1);
        assert_eq!(order_index(0.05, 25), 2);
        assert_eq!(order_index(1.0, 4), 4);
    }
}
