//! Oracle suites that check the numerical core against independent
//! computations: rejection sampling, the partitioned-Gaussian formula,
//! adaptive quadrature, refitting the Lasso inside its own polyhedron, and
//! uniformity of null p-values.
//!
//! Each suite returns a [`SuiteOutcome`] instead of panicking so the CLI can
//! print a table and the test suite can assert on it.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::carve::{carve_pvalue_saturated, carve_pvalue_selected, CarveTask, SigmaMode, Target, View};
use crate::data::{select_entries, select_rows, Dataset, Family};
use crate::error::Result;
use crate::gauss::constrained::whiten;
use crate::gauss::hit_and_run::{hit_and_run, ChainConfig};
use crate::gauss::law::{condition_on_linear, GaussianLaw};
use crate::multi::{global_sigma, select_splits, MulticarveConfig};
use crate::rng;
use crate::select::{select_on, SelectOptions, Selector};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst discrepancy found.
    pub statistic: f64,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

impl SuiteOutcome {
    fn finish(name: &'static str, statistic: f64, threshold: f64, detail: String, start: Instant) -> Self {
        SuiteOutcome {
            name,
            passed: statistic < threshold,
            statistic,
            threshold,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    fn failed(name: &'static str, threshold: f64, err: impl std::fmt::Display, start: Instant) -> Self {
        SuiteOutcome {
            name,
            passed: false,
            statistic: f64::NAN,
            threshold,
            detail: format!("error: {err}"),
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample KS distance to `Unif[0, 1]`.
pub fn ks_uniform(u: &[f64]) -> f64 {
    let mut u = u.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a one-sample KS distance `d` at sample size `n`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lam = (sn + 0.12 + 0.11 / sn) * d;
    if lam < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lam * lam).exp();
        sum += if k as usize % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Hit-and-run draws of a box-truncated standard normal against rejection
/// sampling, compared marginal by marginal.
pub fn sampler_oracle(seed: u64) -> SuiteOutcome {
    let start = Instant::now();
    const NAME: &str = "sampler_vs_rejection";
    let n = 20_000;
    let lo = [-0.5, 0.3];
    let hi = [1.5, 2.5];
    let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
    let b = DVector::from_vec(vec![hi[0], hi[1], -lo[0], -lo[1]]);
    let law = match GaussianLaw::new(DVector::zeros(2), DMatrix::identity(2, 2)) {
        Ok(l) => l,
        Err(e) => return SuiteOutcome::failed(NAME, 0.05, e, start),
    };
    let origin = DVector::from_vec(vec![0.5, 1.0]);
    let draws = match whiten(&law, &a, &b, &origin).and_then(|st| hit_and_run(&st, &ChainConfig::with_length(n, seed))) {
        Ok((d, _)) => d,
        Err(e) => return SuiteOutcome::failed(NAME, 0.05, e, start),
    };
    let mut r = rng::stream(seed, &[0xB0C5]);
    let mut reference: Vec<[f64; 2]> = Vec::with_capacity(n);
    while reference.len() < n {
        let z: [f64; 2] = [r.sample(StandardNormal), r.sample(StandardNormal)];
        if (0..2).all(|k| z[k] >= lo[k] && z[k] <= hi[k]) {
            reference.push(z);
        }
    }
    let mut worst = 0.0f64;
    for k in 0..2 {
        let chain: Vec<f64> = draws.column(k).iter().copied().collect();
        let oracle: Vec<f64> = reference.iter().map(|z| z[k]).collect();
        worst = worst.max(ks_two_sample(&chain, &oracle));
    }
    SuiteOutcome::finish(NAME, worst, 0.05, format!("{n} draws per sampler, max marginal KS distance"), start)
}

fn random_spd(dim: usize, r: &mut rng::Stream) -> DMatrix<f64> {
    let m = DMatrix::from_fn(dim, dim, |_, _| r.sample::<f64, _>(StandardNormal));
    &m * m.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.1
}

/// Conditional law through a change of basis `W = M X` with `M = [C; D]`
/// and the textbook partitioned formula for `W_2 | W_1 = d`.
pub fn partitioned_condition(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    complement: &DMatrix<f64>,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let (k, m) = c.shape();
    let mut full = DMatrix::zeros(m, m);
    full.rows_mut(0, k).copy_from(c);
    full.rows_mut(k, m - k).copy_from(complement);
    let inv = full.clone().try_inverse()?;
    let mw = &full * mu;
    let sw = &full * sigma * full.transpose();
    let s11 = sw.view((0, 0), (k, k)).into_owned();
    let s21 = sw.view((k, 0), (m - k, k)).into_owned();
    let s22 = sw.view((k, k), (m - k, m - k)).into_owned();
    let s11_inv = s11.try_inverse()?;
    let mean2 = mw.rows(k, m - k) + &s21 * &s11_inv * (d - mw.rows(0, k));
    let cov2 = &s22 - &s21 * &s11_inv * s21.transpose();
    let mut w_mean = DVector::zeros(m);
    w_mean.rows_mut(0, k).copy_from(d);
    w_mean.rows_mut(k, m - k).copy_from(&mean2);
    let mut w_cov = DMatrix::zeros(m, m);
    w_cov.view_mut((k, k), (m - k, m - k)).copy_from(&cov2);
    Some((&inv * w_mean, &inv * w_cov * inv.transpose()))
}

/// `condition_on_linear` on random 5-dimensional instances against
/// [`partitioned_condition`].
pub fn conditioning_oracle(seed: u64, instances: usize) -> SuiteOutcome {
    let start = Instant::now();
    const NAME: &str = "conditioning_vs_partitioned";
    let mut r = rng::stream(seed, &[0xC0D1]);
    let dim = 5;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let k = r.random_range(1..=3usize);
        let mu = DVector::from_fn(dim, |_, _| r.sample::<f64, _>(StandardNormal));
        let sigma = random_spd(dim, &mut r);
        let c = DMatrix::from_fn(k, dim, |_, _| r.sample::<f64, _>(StandardNormal));
        let d = DVector::from_fn(k, |_, _| r.sample::<f64, _>(StandardNormal));
        let comp = DMatrix::from_fn(dim - k, dim, |_, _| r.sample::<f64, _>(StandardNormal));
        let Some((m_ref, s_ref)) = partitioned_condition(&mu, &sigma, &c, &d, &comp) else {
            continue;
        };
        let got = match GaussianLaw::new(mu, sigma).and_then(|law| condition_on_linear(&law, &c, &d)) {
            Ok(g) => g,
            Err(e) => return SuiteOutcome::failed(NAME, 1e-8, e, start),
        };
        worst = worst.max((&got.mu - m_ref).amax()).max((&got.sigma - s_ref).amax());
    }
    SuiteOutcome::finish(NAME, worst, 1e-8, format!("{instances} instances, max elementwise error"), start)
}

/// Adaptive Simpson rule on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if !(b > a) {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `P(T >= s)` (or `<=` when `right` is false) for a standard normal `T`
/// truncated to `[l, u]`, by quadrature of the density.
pub fn truncated_tail_quadrature(s: f64, l: f64, u: f64, right: bool) -> f64 {
    let a = 0.0f64.clamp(l, u);
    let lo = l.max(a - 40.0);
    let hi = u.min(a + 40.0);
    let g = move |x: f64| (-(x * x - a * a) / 2.0).exp();
    let tol = 1e-15 * (hi - lo).min(1.0);
    let total = adaptive_simpson(&g, lo, hi, tol);
    let part = if right {
        adaptive_simpson(&g, s.max(lo), hi, tol)
    } else {
        adaptive_simpson(&g, lo, s.min(hi), tol)
    };
    (part / total).clamp(0.0, 1.0)
}

/// Range of `eta^T y` along `y + t eta` inside `{A y <= b}`, computed row by
/// row on the full response.
fn interval_by_rows(eta: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
    let nn = eta.norm_squared();
    let t0 = eta.dot(y);
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..a.nrows() {
        let row = a.row(i);
        let rate = row.dot(&eta.transpose()) / nn;
        let slack = b[i] - row.dot(&y.transpose());
        if rate.abs() < 1e-14 * row.norm() * nn.sqrt() {
            continue;
        }
        if rate > 0.0 {
            hi = hi.min(t0 + slack / rate);
        } else {
            lo = lo.max(t0 + slack / rate);
        }
    }
    (lo, hi)
}

/// Saturated-view p-values on seeded carving problems against quadrature of
/// the truncated normal density.
pub fn saturated_oracle(seed: u64, instances: usize) -> SuiteOutcome {
    let start = Instant::now();
    const NAME: &str = "saturated_vs_quadrature";
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut attempt = 0u64;
    while checked < instances && attempt < 20 * instances as u64 {
        attempt += 1;
        match saturated_instance(derive(seed, attempt)) {
            Ok(Some(d)) => {
                worst = worst.max(d);
                checked += 1;
            }
            Ok(None) => {}
            Err(e) => return SuiteOutcome::failed(NAME, 1e-8, e, start),
        }
    }
    if checked < instances {
        return SuiteOutcome::failed(NAME, 1e-8, format!("only {checked} usable instances"), start);
    }
    SuiteOutcome::finish(NAME, worst, 1e-8, format!("{checked} instances, max |p - p_quad|"), start)
}

fn derive(seed: u64, k: u64) -> u64 {
    rng::derive_seed(seed, &[0x5A7, k])
}

fn saturated_instance(seed: u64) -> Result<Option<f64>> {
    let (n, p) = (40, 12);
    let mut r = rng::stream(seed, &[0]);
    let x = DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_fn(p, |j, _| if j < 3 { 0.6 } else { 0.0 });
    let y = &x * &beta + DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    let data = Dataset::new(x, y, Family::Gaussian)?;
    let cfg = MulticarveConfig {
        n_splits: 1,
        fraction: 0.75,
        view: View::Saturated,
        sigma: SigmaMode::Known(1.0),
        selector: Selector::Lambda(0.15),
        master_seed: seed,
        ..MulticarveConfig::default()
    };
    let global = global_sigma(&data, &cfg)?;
    let splits = select_splits(&data, &cfg, 1, global)?;
    let s = &splits[0];
    let (Some(event), Some(prep)) = (&s.event, &s.prepared) else {
        return Ok(None);
    };
    let mut worst = 0.0f64;
    for (k, &j) in event.support().iter().enumerate() {
        let task = CarveTask {
            event,
            submodel: &prep.submodel,
            y: &prep.y,
            target: Target::Single(j),
            sigma: prep.sigma,
            view: View::Saturated,
            chain: ChainConfig::with_length(1, 0),
        };
        let got = match carve_pvalue_saturated(&task) {
            Ok(pv) => pv.value,
            Err(_) => continue,
        };
        // direction from the normal equations of the submodel
        let z = &prep.submodel.z;
        let gram_inv = (z.transpose() * z).try_inverse().expect("full-rank submodel");
        let pos = prep.submodel.position(j).expect("selected");
        let eta = (z * gram_inv.column(pos)).into_owned();
        let mut a = DMatrix::zeros(event.a.nrows(), n);
        for (c, &row) in event.split.selection_idx.iter().enumerate() {
            a.set_column(row, &event.a.column(c));
        }
        let (lo, hi) = interval_by_rows(&eta, &a, &event.b, &prep.y);
        let sd = prep.sigma * eta.norm();
        let stat = eta.dot(&prep.y);
        let want = truncated_tail_quadrature(stat / sd, lo / sd, hi / sd, event.signs()[k] > 0.0);
        worst = worst.max((got - want).abs());
    }
    Ok(Some(worst))
}

/// Points strictly inside the full selection polyhedron (active and
/// inactive constraints) refit to the same support and signs.
pub fn polyhedron_soundness(seed: u64, instances: usize, points: usize) -> SuiteOutcome {
    let start = Instant::now();
    const NAME: &str = "polyhedron_soundness";
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    let mut attempt = 0u64;
    let mut done = 0usize;
    while done < instances && attempt < 20 * instances as u64 {
        attempt += 1;
        match soundness_instance(derive(seed ^ 0x9E37, attempt), points) {
            Ok(Some((bad, total))) => {
                mismatches += bad;
                checked += total;
                done += 1;
            }
            Ok(None) => {}
            Err(e) => return SuiteOutcome::failed(NAME, 0.5, e, start),
        }
    }
    if done < instances {
        return SuiteOutcome::failed(NAME, 0.5, format!("only {done} usable instances"), start);
    }
    SuiteOutcome::finish(NAME, mismatches as f64, 0.5, format!("{checked} interior points in {done} instances, refits that changed (S, signs)"), start)
}

fn soundness_instance(seed: u64, points: usize) -> Result<Option<(usize, usize)>> {
    let mut r = rng::stream(seed, &[1]);
    let (n, p) = (30, 15);
    let x = DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal));
    let beta = DVector::from_fn(p, |j, _| if j < 3 { 1.0 } else { 0.0 });
    let y = &x * &beta + DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    let rows: Vec<usize> = (0..n).collect();
    let (x1, y1) = (select_rows(&x, &rows), select_entries(&y, &rows));
    let opts = SelectOptions { selector: Selector::Lambda(0.2), ..SelectOptions::default() };
    let event = match select_on(&x1, &y1, &opts, 0, true) {
        Ok(e) => e,
        Err(crate::Error::EmptySelection) => return Ok(None),
        Err(e) => return Err(e),
    };
    let (a, b) = event.full_system().expect("inactive rows requested");
    let mut bad = 0;
    let mut cur = y1.clone();
    for _ in 0..points {
        // random chord through the current point, then a point well inside it
        let dir = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
        let ad = &a * &dir;
        let slack = &b - &a * &cur;
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..a.nrows() {
            let s = slack[i].max(0.0);
            if ad[i] > 0.0 {
                hi = hi.min(s / ad[i]);
            } else if ad[i] < 0.0 {
                lo = lo.max(s / ad[i]);
            }
        }
        let (lo, hi) = (lo.max(-10.0), hi.min(10.0));
        let t = lo + (hi - lo) * r.random_range(0.05..0.95);
        cur.axpy(t, &dir, 1.0);
        let refit = select_on(&x1, &cur, &opts, 0, false);
        let same = match refit {
            Ok(e) => e.support() == event.support() && e.signs() == event.signs(),
            Err(_) => false,
        };
        if !same {
            bad += 1;
        }
    }
    Ok(Some((bad, points)))
}

/// Largest KS distance that a sample of size `n` may show at `level`.
pub fn ks_critical(n: usize, level: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ks_pvalue(mid, n) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Global-null replicates (n = 60, p = 30, known sigma, fixed penalty,
/// one split at f = 0.75): every selected-view p-value is pooled and
/// compared with `Unif[0, 1]` at level 0.01.
pub fn null_uniformity(seed: u64, replicates: usize) -> SuiteOutcome {
    let start = Instant::now();
    const NAME: &str = "null_uniformity";
    let mut pooled = Vec::new();
    for rep in 0..replicates {
        match null_replicate(derive(seed ^ 0x0A11, rep as u64)) {
            Ok(p) => pooled.extend(p),
            Err(e) => return SuiteOutcome::failed(NAME, f64::NAN, e, start),
        }
    }
    if pooled.len() < 50 {
        return SuiteOutcome::failed(NAME, f64::NAN, format!("only {} p-values", pooled.len()), start);
    }
    let d = ks_uniform(&pooled);
    let crit = ks_critical(pooled.len(), 0.01);
    let detail = format!(
        "{} p-values from {replicates} replicates, KS distance (p = {:.3})",
        pooled.len(),
        ks_pvalue(d, pooled.len())
    );
    SuiteOutcome::finish(NAME, d, crit, detail, start)
}

fn null_replicate(seed: u64) -> Result<Vec<f64>> {
    let (n, p) = (60, 30);
    let mut r = rng::stream(seed, &[0]);
    let x = DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    let data = Dataset::new(x, y, Family::Gaussian)?;
    let cfg = MulticarveConfig {
        n_splits: 1,
        fraction: 0.75,
        view: View::Selected,
        sigma: SigmaMode::Known(1.0),
        selector: Selector::Lambda(0.3),
        master_seed: seed,
        ..MulticarveConfig::default()
    };
    let splits = select_splits(&data, &cfg, 1, None)?;
    let s = &splits[0];
    let (Some(event), Some(prep)) = (&s.event, &s.prepared) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for &j in event.support() {
        let task = CarveTask {
            event,
            submodel: &prep.submodel,
            y: &prep.y,
            target: Target::Single(j),
            sigma: prep.sigma,
            view: View::Selected,
            chain: ChainConfig::with_length(5000, rng::derive_seed(seed, &[rng::tag::CHAIN, j as u64])),
        };
        out.push(carve_pvalue_selected(&task)?.value);
    }
    Ok(out)
}

/// Every suite at its default size.
pub fn run_all(seed: u64) -> Vec<SuiteOutcome> {
    vec![
        sampler_oracle(seed),
        conditioning_oracle(seed, 100),
        saturated_oracle(seed, 50),
        polyhedron_soundness(seed, 20, 100),
        null_uniformity(seed, 500),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_helpers() {
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_two_sample(&[0.0, 0.1], &[5.0, 6.0]), 1.0);
        let grid: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform(&grid) - 0.005).abs() < 1e-12);
        assert!(ks_pvalue(0.005, 100) > 0.99);
        assert!(ks_pvalue(0.3, 100) < 1e-6);
    }

    #[test]
    fn simpson_integrates_gaussian_mass() {
        let f = |x: f64| (-x * x / 2.0).exp();
        let v = adaptive_simpson(&f, -40.0, 40.0, 1e-14);
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((truncated_tail_quadrature(0.0, f64::NEG_INFINITY, f64::INFINITY, true) - 0.5).abs() < 1e-13);
    }

    #[test]
    fn partitioned_matches_coordinate_case() {
        // conditioning on the first coordinate of a bivariate normal
        let mu = DVector::from_vec(vec![1.0, 2.0]);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let comp = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let (m, v) = partitioned_condition(&mu, &s, &c, &DVector::from_vec(vec![3.0]), &comp).unwrap();
        assert!((m[1] - (2.0 + 0.3 * 2.0)).abs() < 1e-14);
        assert!((v[(1, 1)] - (1.0 - 0.18)).abs() < 1e-14);
        assert!(v[(0, 0)].abs() < 1e-14);
    }
}
