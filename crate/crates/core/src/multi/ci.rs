//! Confidence intervals by inverting the aggregated two-sided saturated-view
//! test.

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Aggregation, MulticarveConfig, SplitSelection};
use crate::carve::{prepare_saturated, CarveTask, SaturatedNull, Submodel, Target, View};
use crate::gauss::hit_and_run::ChainConfig;
use crate::multi::report::ext_real;

/// Expansion stops and reports an unbounded side once the step exceeds this
/// many standard deviations.
const MAX_EXPANSION: f64 = 1e6;
/// Grid resolution used to look for holes in the acceptance region.
const HOLE_GRID: usize = 801;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub variable: usize,
    #[serde(with = "ext_real")]
    pub lower: f64,
    #[serde(with = "ext_real")]
    pub upper: f64,
    pub selected_count: usize,
    /// The acceptance region was not an interval; `lower` and `upper` are
    /// its hull.
    pub hull: bool,
}

impl ConfidenceInterval {
    pub fn unbounded(variable: usize, selected_count: usize) -> Self {
        ConfidenceInterval {
            variable,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            selected_count,
            hull: false,
        }
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, c: f64) -> bool {
        self.lower <= c && c <= self.upper
    }
}

/// Aggregated two-sided p-value for `beta_j = c` over the splits.
#[derive(Debug, Clone)]
pub struct AggregatedTest {
    nulls: Vec<SaturatedNull>,
    n_splits: usize,
    aggregation: Aggregation,
}

impl AggregatedTest {
    pub fn new(nulls: Vec<SaturatedNull>, n_splits: usize, aggregation: Aggregation) -> Self {
        AggregatedTest { nulls, n_splits, aggregation }
    }

    pub fn pvalue(&self, c: f64) -> f64 {
        let mut p = vec![1.0; self.n_splits];
        for (slot, null) in p.iter_mut().zip(&self.nulls) {
            *slot = null.two_sided_at(c);
        }
        self.aggregation.apply(&p)
    }

    fn scale(&self) -> f64 {
        let mut sd: Vec<f64> = self.nulls.iter().map(|n| n.sd).collect();
        sd.sort_by(f64::total_cmp);
        sd[sd.len() / 2]
    }

    /// Invert the test at level `alpha`; `tol` is the bisection tolerance.
    pub fn invert(&self, alpha: f64, tol: f64) -> (f64, f64, bool) {
        let accept = |c: f64| self.pvalue(c) > alpha;
        let scale = self.scale();
        let (c0, p0) = self
            .nulls
            .iter()
            .map(|n| (n.stat, self.pvalue(n.stat)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one split");
        if p0 <= alpha {
            // no split estimate is accepted; search a wide grid before giving up
            let (lo, hi) = self.span(scale);
            let grid = grid(lo, hi, HOLE_GRID);
            let acc: Vec<f64> = grid.iter().copied().filter(|&c| accept(c)).collect();
            return match (acc.first(), acc.last()) {
                (Some(&a), Some(&b)) => {
                    let lower = self.edge(a, -1.0, scale, tol, &accept);
                    let upper = self.edge(b, 1.0, scale, tol, &accept);
                    (lower, upper, true)
                }
                _ => (c0, c0, true),
            };
        }
        let mut lower = self.edge(c0, -1.0, scale, tol, &accept);
        let mut upper = self.edge(c0, 1.0, scale, tol, &accept);
        let mut hull = false;
        if lower.is_finite() || upper.is_finite() {
            let (span_lo, span_hi) = self.span(scale);
            let lo = if lower.is_finite() { span_lo.min(lower - 20.0 * scale) } else { c0 };
            let hi = if upper.is_finite() { span_hi.max(upper + 20.0 * scale) } else { c0 };
            let g = grid(lo, hi, HOLE_GRID);
            let acc: Vec<f64> = g.iter().copied().filter(|&c| accept(c)).collect();
            if let Some(&a) = acc.first() {
                if a < lower {
                    lower = self.edge(a, -1.0, scale, tol, &accept);
                    hull = true;
                }
            }
            if let Some(&b) = acc.last() {
                if b > upper {
                    upper = self.edge(b, 1.0, scale, tol, &accept);
                    hull = true;
                }
            }
            if !hull {
                hull = g.iter().any(|&c| c > lower + tol && c < upper - tol && !accept(c));
            }
        }
        (lower, upper, hull)
    }

    fn span(&self, scale: f64) -> (f64, f64) {
        let lo = self.nulls.iter().map(|n| n.stat - 20.0 * n.sd).fold(f64::INFINITY, f64::min);
        let hi = self.nulls.iter().map(|n| n.stat + 20.0 * n.sd).fold(f64::NEG_INFINITY, f64::max);
        (lo.min(-scale), hi.max(scale))
    }

    /// Last accepted point moving from the accepted `start` in direction
    /// `dir`: doubling steps until rejection, then bisection.
    fn edge(&self, start: f64, dir: f64, scale: f64, tol: f64, accept: &impl Fn(f64) -> bool) -> f64 {
        let mut inside = start;
        let mut step = scale;
        let outside = loop {
            let c = start + dir * step;
            if !accept(c) {
                break c;
            }
            inside = c;
            if step > MAX_EXPANSION * scale {
                return dir * f64::INFINITY;
            }
            step *= 2.0;
        };
        let (mut a, mut b) = (inside, outside);
        while (b - a).abs() > tol {
            let mid = 0.5 * (a + b);
            if accept(mid) {
                a = mid;
            } else {
                b = mid;
            }
        }
        a
    }
}

fn grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

/// Per-split saturated nulls for variable `j`, with an intercept column in
/// the submodel when `intercept` is set. Splits that fail contribute nothing
/// (p = 1 for every `c`).
pub fn split_nulls(
    data_x: &nalgebra::DMatrix<f64>,
    y: &DVector<f64>,
    splits: &[SplitSelection],
    j: usize,
    intercept: bool,
    warnings: &mut Vec<String>,
) -> Vec<SaturatedNull> {
    let ones = DVector::from_element(data_x.nrows(), 1.0);
    let mut out = Vec::new();
    for s in splits.iter().filter(|s| s.usable() && s.support().contains(&j)) {
        let (event, prep) = (s.event.as_ref().expect("usable"), s.prepared.as_ref().expect("usable"));
        let submodel = Submodel::new(data_x, event.support(), intercept.then_some(&ones));
        let task = CarveTask {
            event,
            submodel: &submodel,
            y,
            target: Target::Single(j),
            sigma: prep.sigma,
            view: View::Saturated,
            chain: ChainConfig::with_length(1, 0),
        };
        match prepare_saturated(&task, j) {
            Ok(n) => out.push(n),
            Err(e) => {
                let msg = format!("split {} variable {j}: interval skipped: {e}", s.index);
                warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    out
}

/// Multicarving confidence intervals at level `1 - cfg.alpha` for every
/// variable, from splits already selected. Variables selected fewer than
/// `gamma_min * B` times get the whole line.
pub fn confidence_intervals(
    data_x: &nalgebra::DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &MulticarveConfig,
    splits: &[SplitSelection],
    counts: &[usize],
    intercept: bool,
    warnings: &mut Vec<String>,
) -> Vec<ConfidenceInterval> {
    let b = splits.len();
    let need = cfg.aggregation.min_selected(b);
    let mut sig: Vec<f64> = splits.iter().filter_map(|s| s.prepared.as_ref().map(|p| p.sigma)).collect();
    sig.sort_by(f64::total_cmp);
    let sigma_hat = sig.get(sig.len() / 2).copied().unwrap_or(1.0);
    let tol = 1e-6 * sigma_hat;
    (0..data_x.ncols())
        .map(|j| {
            if counts[j] < need {
                return ConfidenceInterval::unbounded(j, counts[j]);
            }
            let nulls = split_nulls(data_x, y, splits, j, intercept, warnings);
            if nulls.len() < need {
                return ConfidenceInterval::unbounded(j, counts[j]);
            }
            let test = AggregatedTest::new(nulls, b, cfg.aggregation);
            let (lower, upper, hull) = test.invert(cfg.alpha, tol);
            ConfidenceInterval { variable: j, lower, upper, selected_count: counts[j], hull }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::truncnorm::norm_sf;

    fn untruncated(stat: f64, sd: f64) -> SaturatedNull {
        SaturatedNull { stat, sd, lower: f64::NEG_INFINITY, upper: f64::INFINITY }
    }

    #[test]
    fn single_untruncated_split_gives_wald_interval() {
        let t = AggregatedTest::new(vec![untruncated(1.3, 0.5)], 1, Aggregation::Fixed(1.0));
        let (lo, hi, hull) = t.invert(0.05, 1e-9);
        let z = 1.959963984540054;
        assert!(!hull);
        assert!((lo - (1.3 - z * 0.5)).abs() < 1e-6, "{lo}");
        assert!((hi - (1.3 + z * 0.5)).abs() < 1e-6, "{hi}");
        assert!((2.0 * norm_sf(z) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn duality_with_aggregate() {
        let nulls = vec![
            SaturatedNull { stat: 0.8, sd: 0.4, lower: 0.3, upper: f64::INFINITY },
            SaturatedNull { stat: 1.1, sd: 0.5, lower: -0.2, upper: 3.0 },
            untruncated(0.6, 0.45),
        ];
        let t = AggregatedTest::new(nulls, 4, Aggregation::Optimized(0.5));
        let (lo, hi, hull) = t.invert(0.05, 1e-8);
        assert!(!hull);
        for c in [-1.0, 0.0, 0.2, 0.5, 1.0, 2.0, 3.5] {
            if c < lo - 1e-6 || c > hi + 1e-6 {
                assert!(t.pvalue(c) <= 0.05);
            } else if c > lo + 1e-6 && c < hi - 1e-6 {
                assert!(t.pvalue(c) > 0.05);
            }
        }
    }

    #[test]
    fn short_truncation_can_give_unbounded_side() {
        // a tiny window far in the tail leaves the p-value flat in c
        let t = AggregatedTest::new(
            vec![SaturatedNull { stat: 0.0, sd: 1.0, lower: -1e-9, upper: 1e-9 }],
            1,
            Aggregation::Fixed(1.0),
        );
        let (lo, hi, _) = t.invert(0.05, 1e-6);
        assert!(lo == f64::NEG_INFINITY && hi == f64::INFINITY);
    }
}
