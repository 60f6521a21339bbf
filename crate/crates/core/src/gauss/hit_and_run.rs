//! Hit-and-run sampling of a standard Gaussian restricted to a polyhedron.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::inv_beta_reg;

use crate::error::{Error, Result};
use crate::gauss::constrained::{ConstrainedGaussianState, PARALLEL_TOL};
use crate::gauss::truncnorm::sample_truncated_std_normal;
use crate::rng;

/// Consecutive zero-width steps tolerated before the chain is declared stuck.
pub const MAX_ZERO_STEPS: usize = 1000;
/// Shortest chain used by the default length rule.
pub const MIN_CHAIN: usize = 1000;
/// Steps between exact recomputations of the constraint slack.
const REFRESH_EVERY: usize = 256;

/// Stop a tail-count chain once the target p-value is clearly large.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyAbort {
    /// Stop when the 99% lower confidence bound of the tail fraction exceeds this.
    pub threshold: f64,
    pub check_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub early_abort: Option<EarlyAbort>,
}

impl ChainConfig {
    /// `n_samples` recorded draws after a 10% burn-in, no thinning.
    pub fn with_length(n_samples: usize, seed: u64) -> Self {
        ChainConfig { n_samples, burn_in: n_samples / 10, thin: 1, seed, early_abort: None }
    }
}

/// Smallest number of draws that lets an adjusted p-value reach `alpha`
/// after Bonferroni over `s_tilde` tests and quantile aggregation with
/// `gamma_min` (the fixed-quantile case when `optimized` is false).
pub fn min_chain_length(s_tilde: usize, alpha: f64, gamma_min: f64, optimized: bool) -> usize {
    let factor = if optimized { 1.0 - gamma_min.ln() } else { 1.0 };
    (s_tilde.max(1) as f64 * factor / (alpha * gamma_min)).ceil() as usize
}

/// Twice the minimum, and never below `MIN_CHAIN`.
pub fn default_chain_length(s_tilde: usize, alpha: f64, gamma_min: f64, optimized: bool) -> usize {
    (2 * min_chain_length(s_tilde, alpha, gamma_min, optimized)).max(MIN_CHAIN)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub seed: u64,
    pub steps: usize,
    pub recorded: usize,
    pub zero_width_steps: usize,
    pub max_consecutive_zero: usize,
    pub aborted_early: bool,
}

struct Walker<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    row_norms: Vec<f64>,
    x: DVector<f64>,
    slack: DVector<f64>,
    dir: DVector<f64>,
    ad: DVector<f64>,
    rng: rng::Stream,
    consecutive: usize,
    diag: ChainDiagnostics,
}

impl<'a> Walker<'a> {
    fn new(state: &'a ConstrainedGaussianState, seed: u64) -> Self {
        let a = &state.a_w;
        let r = state.dim();
        let row_norms = (0..a.nrows()).map(|i| a.row(i).norm()).collect();
        let x = state.origin.clone();
        let slack = &state.b_w - a * &x;
        Walker {
            a,
            b: &state.b_w,
            row_norms,
            x,
            slack,
            dir: DVector::zeros(r),
            ad: DVector::zeros(a.nrows()),
            rng: rng::stream(seed, &[rng::tag::CHAIN]),
            consecutive: 0,
            diag: ChainDiagnostics { seed, ..Default::default() },
        }
    }

    /// One hit-and-run move; returns the step length along `self.dir`.
    fn step(&mut self) -> Result<f64> {
        let r = self.x.len();
        self.diag.steps += 1;
        if r == 0 {
            return Ok(0.0);
        }
        loop {
            for v in self.dir.iter_mut() {
                *v = StandardNormal.sample(&mut self.rng);
            }
            let nrm = self.dir.norm();
            if nrm > 0.0 {
                self.dir /= nrm;
                break;
            }
        }
        self.ad.gemv(1.0, self.a, &self.dir, 0.0);
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in 0..self.ad.len() {
            let ai = self.ad[i];
            if ai.abs() <= PARALLEL_TOL * self.row_norms[i] {
                continue;
            }
            let t = self.slack[i].max(0.0) / ai;
            if ai > 0.0 {
                hi = hi.min(t);
            } else {
                lo = lo.max(t);
            }
        }
        let c = self.dir.dot(&self.x);
        if !(hi - lo > 1e-14 * (1.0 + c.abs())) {
            self.diag.zero_width_steps += 1;
            self.consecutive += 1;
            self.diag.max_consecutive_zero = self.diag.max_consecutive_zero.max(self.consecutive);
            if self.consecutive > MAX_ZERO_STEPS {
                return Err(Error::StuckChain { consecutive: self.consecutive });
            }
            return Ok(0.0);
        }
        self.consecutive = 0;
        let tau = sample_truncated_std_normal(c + lo, c + hi, &mut self.rng);
        let t = (tau - c).clamp(lo, hi);
        self.x.axpy(t, &self.dir, 1.0);
        self.slack.axpy(-t, &self.ad, 1.0);
        if self.diag.steps.is_multiple_of(REFRESH_EVERY) {
            self.slack = self.b - self.a * &self.x;
        }
        Ok(t)
    }
}

/// Run a chain from `state.origin`, handing every recorded draw to `visit`.
/// `visit` returns `false` to stop early.
pub fn run_chain(
    state: &ConstrainedGaussianState,
    cfg: &ChainConfig,
    mut visit: impl FnMut(&DVector<f64>) -> bool,
) -> Result<ChainDiagnostics> {
    if cfg.n_samples == 0 {
        return Err(Error::Validation("chain needs at least one sample".into()));
    }
    let thin = cfg.thin.max(1);
    let mut w = Walker::new(state, cfg.seed);
    for _ in 0..cfg.burn_in {
        w.step()?;
    }
    while w.diag.recorded < cfg.n_samples {
        for _ in 0..thin {
            w.step()?;
        }
        w.diag.recorded += 1;
        if !visit(&w.x) {
            break;
        }
    }
    Ok(w.diag)
}

/// Recorded draws as rows of a matrix (whitened coordinates).
pub fn hit_and_run(state: &ConstrainedGaussianState, cfg: &ChainConfig) -> Result<(DMatrix<f64>, ChainDiagnostics)> {
    let r = state.dim();
    let mut rows: Vec<f64> = Vec::with_capacity(cfg.n_samples * r);
    let diag = run_chain(state, cfg, |x| {
        rows.extend(x.iter());
        true
    })?;
    Ok((DMatrix::from_row_slice(diag.recorded, r, &rows), diag))
}

/// Tail count of a linear statistic along a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct TailCount {
    pub exceed: usize,
    pub total: usize,
    pub diagnostics: ChainDiagnostics,
}

impl TailCount {
    /// `(exceed + 1) / (total + 1)`.
    pub fn pvalue(&self) -> f64 {
        (self.exceed as f64 + 1.0) / (self.total as f64 + 1.0)
    }

    /// Binomial standard error of the tail fraction. It ignores the chain's
    /// autocorrelation and so understates the Monte-Carlo error.
    pub fn mc_se(&self) -> f64 {
        let p = self.pvalue();
        (p * (1.0 - p) / self.total.max(1) as f64).sqrt()
    }
}

/// Exact 99% lower Clopper-Pearson bound for `k` successes in `n` trials.
pub fn binomial_lower_bound(k: usize, n: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        inv_beta_reg(k as f64, (n - k + 1) as f64, 0.01)
    }
}

/// Count draws with `slope . z + offset >= observed` along a chain.
pub fn tail_count(
    state: &ConstrainedGaussianState,
    slope: &DVector<f64>,
    offset: f64,
    observed: f64,
    cfg: &ChainConfig,
) -> Result<TailCount> {
    let mut exceed = 0usize;
    let mut total = 0usize;
    let abort = cfg.early_abort;
    let diag = run_chain(state, cfg, |x| {
        total += 1;
        if slope.dot(x) + offset >= observed {
            exceed += 1;
        }
        if let Some(ea) = abort {
            if ea.check_every > 0 && total.is_multiple_of(ea.check_every) && binomial_lower_bound(exceed, total) > ea.threshold {
                return false;
            }
        }
        true
    })?;
    let mut diagnostics = diag;
    diagnostics.aborted_early = total < cfg.n_samples;
    Ok(TailCount { exceed, total, diagnostics })
}
