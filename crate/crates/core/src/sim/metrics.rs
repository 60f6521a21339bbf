//! Performance measures computed from a run archive.
//!
//! * FWER: fraction of runs rejecting at least one variable with zero
//!   coefficient.
//! * Power: mean over runs of the fraction of active variables rejected.
//! * Adjusted power: power at the critical value `t` equal to the
//!   `floor(alpha R)`-th smallest per-run minimum null p-value, so that
//!   exactly `floor(alpha R)` of the `R` runs commit a family-wise error
//!   (at most that many when the p-values tie there).
//! * ERR: fraction of runs rejecting the group.
//! * Interval measures: median length per active variable; false coverage
//!   of variable `j` in a run means some split selected `j` and its target
//!   coefficient lies outside the interval, averaged over all variables or
//!   over the variables selected at least once; `coverage_event_min` is the
//!   smallest per-variable frequency of no false coverage.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{BetaSpec, MethodSpec, TestKind};
use super::experiment::{Archive, MethodOutcome, RunRecord};
use crate::multi::report::ext_real::{self, format_ext};
use crate::rng;

const BOOTSTRAP: usize = 200;
pub const LENGTH_QUANTILES: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub design: String,
    pub family: String,
    #[serde(rename = "B")]
    pub b: usize,
    pub f: f64,
    pub gamma_mode: String,
    pub view: String,
    pub metric: String,
    #[serde(with = "ext_real")]
    pub value: f64,
    #[serde(with = "ext_real")]
    pub mc_se: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("design,family,B,f,gamma_mode,view,metric,value,mc_se,runs\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.design,
                r.family,
                r.b,
                r.f,
                r.gamma_mode,
                r.view,
                r.metric,
                format_ext(r.value),
                format_ext(r.mc_se),
                r.runs
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    /// Long format with a method label and a two-standard-error band.
    pub fn to_plot_csv(&self) -> String {
        let mut out = String::from("method,B,f,view,metric,value,lower,upper\n");
        for r in &self.rows {
            let (lo, hi) = (r.value - 2.0 * r.mc_se, r.value + 2.0 * r.mc_se);
            out.push_str(&format!(
                "B={} {},{},{},{},{},{},{},{}\n",
                r.b,
                r.gamma_mode,
                r.b,
                r.f,
                r.view,
                r.metric,
                format_ext(r.value),
                format_ext(lo),
                format_ext(hi)
            ));
        }
        out
    }

    /// Value of `metric` for the method with `b` splits, fraction `f` and
    /// the given gamma label.
    pub fn get(&self, b: usize, f: f64, gamma_mode: &str, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.b == b && r.f == f && r.gamma_mode == gamma_mode && r.metric == metric)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_se(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt()
}

fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Sample median (average of the two middle values for even counts).
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        let (a, b) = (s[n / 2 - 1], s[n / 2]);
        if a == b {
            a
        } else {
            0.5 * (a + b)
        }
    }
}

/// `ceil(q K)`-th order statistic.
pub fn lower_quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = ((q * s.len() as f64 - 1e-9).ceil() as usize).clamp(1, s.len());
    s[k - 1]
}

fn bootstrap_median_se(v: &[f64], seed: u64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mut rng = rng::stream(seed, &[rng::tag::RUN, u64::MAX]);
    let meds: Vec<f64> = (0..BOOTSTRAP)
        .map(|_| {
            let sample: Vec<f64> = (0..v.len()).map(|_| v[rng.random_range(0..v.len())]).collect();
            median(&sample)
        })
        .collect();
    if meds.iter().any(|m| !m.is_finite()) {
        return f64::NAN;
    }
    let m = mean(&meds);
    (meds.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (BOOTSTRAP - 1) as f64).sqrt()
}

/// Critical value for adjusted power: the `floor(alpha R)`-th smallest
/// per-run minimum null p-value, or `-inf` when that index is zero. When the
/// next run ties with it, the value just below is used so that no more than
/// `floor(alpha R)` runs fall at or under the threshold.
pub fn adjusted_threshold(min_null: &[f64], alpha: f64) -> f64 {
    let k = (alpha * min_null.len() as f64 + 1e-9).floor() as usize;
    if k == 0 {
        return f64::NEG_INFINITY;
    }
    let mut s = min_null.to_vec();
    s.sort_by(f64::total_cmp);
    let t = s[k - 1];
    if k < s.len() && s[k] <= t {
        t.next_down()
    } else {
        t
    }
}

fn min_null_p(out: &MethodOutcome, active: &[usize]) -> f64 {
    out.aggregated
        .iter()
        .enumerate()
        .filter(|(j, _)| !active.contains(j))
        .map(|(_, &v)| v)
        .fold(1.0, f64::min)
}

fn fraction_rejected(out: &MethodOutcome, active: &[usize], t: f64) -> f64 {
    if active.is_empty() {
        return 0.0;
    }
    active.iter().filter(|&&j| out.aggregated[j] <= t).count() as f64 / active.len() as f64
}

/// Per run and variable: selected at least once, and false coverage.
fn coverage_flags(out: &MethodOutcome, p: usize) -> (Vec<bool>, Vec<bool>) {
    let ci = out.intervals.as_ref().expect("interval outcome");
    let mut tested = vec![false; p];
    let mut missed = vec![false; p];
    for split in out.targets.as_ref().expect("interval outcome") {
        for &(j, t) in split {
            tested[j] = true;
            if !ci[j].contains(t) {
                missed[j] = true;
            }
        }
    }
    (tested, missed)
}

/// Recompute the metrics table from an archive.
pub fn compute_metrics(archive: &Archive) -> MetricsTable {
    let cfg = &archive.config;
    let methods = cfg.methods();
    let ok: Vec<&RunRecord> = archive.runs.iter().filter(|r| r.error.is_none()).collect();
    let failed = archive.runs.len() - ok.len();
    let r = ok.len();
    let mut rows = Vec::new();
    for (i, m) in methods.iter().enumerate() {
        let row = |metric: &str, value: f64, mc_se: f64| MetricRow {
            design: cfg.design.label(),
            family: cfg.family.to_string(),
            b: m.n_splits,
            f: m.fraction,
            gamma_mode: m.gamma_mode(),
            view: m.view_label().to_string(),
            metric: metric.to_string(),
            value,
            mc_se,
            runs: r,
        };
        let outs: Vec<(&RunRecord, &MethodOutcome)> = ok.iter().map(|run| (*run, &run.outcomes[i])).collect();
        match cfg.test {
            TestKind::Single => rows.extend(single_metrics(&outs, cfg.alpha, &row)),
            TestKind::Group => {
                let rej: Vec<f64> = outs.iter().map(|(_, o)| f64::from(u8::from(o.aggregated[0] <= cfg.alpha))).collect();
                let v = mean(&rej);
                rows.push(row("err", v, binomial_se(v, r)));
            }
            TestKind::Ci => rows.extend(ci_metrics(&outs, cfg.p, &cfg.beta, m, i as u64, &row)),
        }
        rows.push(row("failed_runs", failed as f64, 0.0));
    }
    MetricsTable { rows }
}

fn single_metrics(
    outs: &[(&RunRecord, &MethodOutcome)],
    alpha: f64,
    row: &dyn Fn(&str, f64, f64) -> MetricRow,
) -> Vec<MetricRow> {
    let r = outs.len();
    let min_null: Vec<f64> = outs.iter().map(|(run, o)| min_null_p(o, &run.active)).collect();
    let errors: Vec<f64> = min_null.iter().map(|&v| f64::from(u8::from(v <= alpha))).collect();
    let power: Vec<f64> = outs.iter().map(|(run, o)| fraction_rejected(o, &run.active, alpha)).collect();
    let t = adjusted_threshold(&min_null, alpha);
    let adj: Vec<f64> = outs.iter().map(|(run, o)| fraction_rejected(o, &run.active, t)).collect();
    let fwer = mean(&errors);
    vec![
        row("fwer", fwer, binomial_se(fwer, r)),
        row("power", mean(&power), mean_se(&power)),
        row("adjusted_power", mean(&adj), mean_se(&adj)),
        row("adjusted_threshold", t, 0.0),
    ]
}

fn ci_metrics(
    outs: &[(&RunRecord, &MethodOutcome)],
    p: usize,
    beta: &BetaSpec,
    _m: &MethodSpec,
    seed: u64,
    row: &dyn Fn(&str, f64, f64) -> MetricRow,
) -> Vec<MetricRow> {
    let r = outs.len();
    let mut rows = Vec::new();
    if let BetaSpec::Fixed { active, .. } = beta {
        for &j in active {
            let lens: Vec<f64> =
                outs.iter().map(|(_, o)| o.intervals.as_ref().expect("intervals")[j].length()).collect();
            rows.push(row(&format!("ci_median_length_v{j}"), median(&lens), bootstrap_median_se(&lens, seed)));
        }
    }
    let mut fc_all = Vec::with_capacity(r);
    let mut fc_tested = Vec::with_capacity(r);
    let mut covered = vec![0usize; p];
    let mut quantiles: Vec<Vec<f64>> = vec![Vec::new(); LENGTH_QUANTILES.len()];
    for (_, o) in outs {
        let (tested, missed) = coverage_flags(o, p);
        let n_missed = missed.iter().filter(|&&b| b).count() as f64;
        let n_tested = tested.iter().filter(|&&b| b).count();
        fc_all.push(n_missed / p as f64);
        if n_tested > 0 {
            fc_tested.push(n_missed / n_tested as f64);
        }
        for j in 0..p {
            covered[j] += usize::from(!missed[j]);
        }
        let ci = o.intervals.as_ref().expect("intervals");
        let lens: Vec<f64> = (0..p).filter(|&j| tested[j]).map(|j| ci[j].length()).collect();
        if !lens.is_empty() {
            for (q, store) in LENGTH_QUANTILES.iter().zip(quantiles.iter_mut()) {
                store.push(lower_quantile(&lens, *q));
            }
        }
    }
    rows.push(row("false_coverage_all", mean(&fc_all), mean_se(&fc_all)));
    rows.push(row("false_coverage_tested", mean(&fc_tested), mean_se(&fc_tested)));
    let cov_min = covered.iter().map(|&c| c as f64 / r.max(1) as f64).fold(1.0, f64::min);
    rows.push(row("coverage_event_min", cov_min, binomial_se(cov_min, r)));
    for (q, store) in LENGTH_QUANTILES.iter().zip(&quantiles) {
        rows.push(row(&format!("ci_length_q{}", (q * 100.0).round()), median(store), bootstrap_median_se(store, seed)));
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_matches_sort_oracle() {
        let v: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64 / 100.0 + 0.001).collect();
        let t = adjusted_threshold(&v, 0.05);
        // five runs at or below the threshold
        assert_eq!(v.iter().filter(|&&x| x <= t).count(), 5);
        assert_eq!(adjusted_threshold(&v[..10], 0.05), f64::NEG_INFINITY);
    }

    #[test]
    fn tied_threshold_keeps_error_count() {
        // 97 runs with no testable null variable, three small values
        let mut v = vec![1.0; 97];
        v.extend([0.01, 0.2, 0.3]);
        let t = adjusted_threshold(&v, 0.05);
        assert!((0.3..1.0).contains(&t));
        assert_eq!(v.iter().filter(|&&x| x <= t).count(), 3);
        let mut w = vec![0.5; 10];
        w.extend(vec![0.9; 90]);
        assert_eq!(w.iter().filter(|&&x| x <= adjusted_threshold(&w, 0.05)).count(), 0);
    }

    #[test]
    fn quantile_conventions() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, f64::INFINITY, f64::INFINITY]), f64::INFINITY);
        assert_eq!(lower_quantile(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.0);
        assert_eq!(lower_quantile(&[4.0, 1.0, 3.0, 2.0], 0.3), 2.0);
    }
}
