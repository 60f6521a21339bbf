//! Running the simulation grid and archiving per-run outcomes.
//!
//! Within a run every method sees the same design and response. Methods
//! with the same selection fraction share their splits and selections
//! (split `b` is the same for every `B > b`), and single-variable p-values
//! for a (split, variable) pair are computed once with the longest chain
//! any sharing method asks for.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BetaSpec, DesignSpec, MethodSpec, Noise, SimConfig, TestKind};
use super::design;
use crate::carve::View;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io;
use crate::multi::{
    aggregate_columns, carve_batch, carve_groups, chain_seed, confidence_intervals, global_sigma, pvalue_matrices,
    select_splits, selection_counts, submodel_target, testable, CarveRequest, ConfidenceInterval, SplitSelection,
};
use crate::rng::{self, derive_seed};

/// What one method produced in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    /// Index into [`SimConfig::methods`].
    pub method: usize,
    /// Aggregated p-value per variable (single tests) or per group.
    pub aggregated: Vec<f64>,
    pub intervals: Option<Vec<ConfidenceInterval>>,
    /// Per split: `(variable, target coefficient)` for the selected
    /// variables, with the intercept convention of the intervals.
    pub targets: Option<Vec<Vec<(usize, f64)>>>,
    pub warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub active: Vec<usize>,
    #[serde(with = "crate::multi::report::ext_real")]
    pub sigma: f64,
    pub outcomes: Vec<MethodOutcome>,
    pub error: Option<String>,
}

/// Everything needed to recompute the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub config: SimConfig,
    pub runs: Vec<RunRecord>,
}

impl Archive {
    /// One JSON document per line: the config first, then the runs.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.config).expect("config serializes");
        out.push('\n');
        for r in &self.runs {
            out.push_str(&serde_json::to_string(r).expect("run serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |e: serde_json::Error| Error::Validation(format!("invalid archive: {e}"));
        let config: SimConfig = serde_json::from_str(lines.next().ok_or_else(|| Error::Validation("empty archive".into()))?)
            .map_err(bad)?;
        let runs = lines.map(|l| serde_json::from_str(l).map_err(bad)).collect::<Result<Vec<RunRecord>>>()?;
        Ok(Archive { config, runs })
    }
}

/// Design shared by all runs (or drawn for one run when not fixed).
pub fn draw_design(cfg: &SimConfig, seed: u64) -> Result<DMatrix<f64>> {
    let x = match &cfg.design {
        DesignSpec::Toeplitz { rho } => design::gen_toeplitz_design(cfg.n, cfg.p, *rho, seed)?,
        DesignSpec::Block => design::gen_block_design(cfg.n, seed)?,
        DesignSpec::RiboflavinLike => design::gen_riboflavin_like(cfg.n, cfg.p, seed),
        DesignSpec::Csv { path } => {
            let x = io::read_matrix(path)?;
            if x.shape() != (cfg.n, cfg.p) {
                return Err(Error::Validation(format!(
                    "design file is {}x{}, config says {}x{}",
                    x.nrows(),
                    x.ncols(),
                    cfg.n,
                    cfg.p
                )));
            }
            x
        }
    };
    Ok(x)
}

pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, &[rng::tag::RUN, run as u64])
}

fn coefficients(cfg: &SimConfig, seed: u64) -> (Vec<usize>, DVector<f64>) {
    let mut beta = DVector::zeros(cfg.p);
    let active = match &cfg.beta {
        BetaSpec::Fixed { active, values } => {
            for (&j, &v) in active.iter().zip(values) {
                beta[j] = v;
            }
            active.iter().copied().filter(|&j| beta[j] != 0.0).collect()
        }
        BetaSpec::Random { k, value } => {
            let a = design::random_support(cfg.p, *k, seed);
            for &j in &a {
                beta[j] = *value;
            }
            if *value == 0.0 {
                Vec::new()
            } else {
                a
            }
        }
    };
    (active, beta)
}

/// Run every replicate and method; failed runs are kept with their error.
pub fn run_experiment(cfg: &SimConfig) -> Result<Archive> {
    cfg.validate()?;
    let fixed = if cfg.fixed_design { Some(draw_design(cfg, derive_seed(cfg.master_seed, &[rng::tag::DESIGN]))?) } else { None };
    let runs = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let seed = run_seed(cfg.master_seed, r);
            match run_once(cfg, fixed.as_ref(), seed) {
                Ok((active, sigma, outcomes)) => RunRecord { run: r, seed, active, sigma, outcomes, error: None },
                Err(e) => {
                    log::warn!("run {r} failed: {e}");
                    RunRecord { run: r, seed, active: Vec::new(), sigma: f64::NAN, outcomes: Vec::new(), error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    Ok(Archive { config: cfg.clone(), runs })
}

type RunOutput = (Vec<usize>, f64, Vec<MethodOutcome>);

fn run_once(cfg: &SimConfig, fixed: Option<&DMatrix<f64>>, seed: u64) -> Result<RunOutput> {
    let x = match fixed {
        Some(x) => x.clone(),
        None => draw_design(cfg, derive_seed(seed, &[rng::tag::DESIGN]))?,
    };
    let (active, beta) = coefficients(cfg, seed);
    let sigma = match cfg.noise {
        Noise::Sigma(s) => s,
        Noise::Snr(snr) => design::snr_calibrate(&x, &beta, snr)?,
    };
    let y = design::gen_response(&x, &beta, cfg.family, sigma, seed);
    let data = Dataset::new(x, y, cfg.family)?;
    let methods = cfg.methods();
    let base = cfg.multicarve_config(&methods[0], seed);
    let global = global_sigma(&data, &base)?;

    let mut outcomes: Vec<Option<MethodOutcome>> = vec![None; methods.len()];
    let mut fractions: Vec<f64> = Vec::new();
    for m in &methods {
        if !fractions.contains(&m.fraction) {
            fractions.push(m.fraction);
        }
    }
    for &f in &fractions {
        let idx: Vec<usize> = (0..methods.len()).filter(|&i| methods[i].fraction == f).collect();
        let max_b = idx.iter().map(|&i| methods[i].n_splits).max().expect("nonempty");
        let mut sel_cfg = cfg.multicarve_config(&methods[idx[0]], seed);
        sel_cfg.n_splits = max_b;
        let splits = select_splits(&data, &sel_cfg, max_b, global)?;
        match cfg.test {
            TestKind::Single => {
                for view in [View::Selected, View::Saturated] {
                    let group: Vec<usize> = idx.iter().copied().filter(|&i| methods[i].view == view).collect();
                    if !group.is_empty() {
                        for (i, o) in single_tests(cfg, &data, &methods, &group, &splits, seed) {
                            outcomes[i] = Some(o);
                        }
                    }
                }
            }
            TestKind::Group => {
                let g = cfg.group.clone().expect("validated");
                for &i in &idx {
                    let mc = cfg.multicarve_config(&methods[i], seed);
                    let sp = &splits[..methods[i].n_splits];
                    let rows = carve_groups(&mc, sp, std::slice::from_ref(&g), cfg.p, cfg.group_correction);
                    let warnings = rows.iter().flatten().filter(|r| r.2.is_some()).count();
                    let adj: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|c| c.1).collect()).collect();
                    let aggregated = aggregate_columns(&adj, mc.aggregation);
                    outcomes[i] = Some(MethodOutcome { method: i, aggregated, intervals: None, targets: None, warnings });
                }
            }
            TestKind::Ci => {
                for &i in &idx {
                    let mc = cfg.multicarve_config(&methods[i], seed);
                    let sp = &splits[..methods[i].n_splits];
                    let counts = selection_counts(cfg.p, sp);
                    let mut warnings = Vec::new();
                    let ci = confidence_intervals(&data.x, &data.y, &mc, sp, &counts, cfg.ci_intercept, &mut warnings);
                    let targets = sp
                        .iter()
                        .map(|s| {
                            if !s.usable() {
                                return Ok(Vec::new());
                            }
                            let t = submodel_target(&data.x, &beta, s.support(), cfg.ci_intercept)?;
                            Ok(s.support().iter().copied().zip(t.iter().copied()).collect())
                        })
                        .collect::<Result<Vec<_>>>()?;
                    outcomes[i] = Some(MethodOutcome {
                        method: i,
                        aggregated: Vec::new(),
                        intervals: Some(ci),
                        targets: Some(targets),
                        warnings: warnings.len(),
                    });
                }
            }
        }
    }
    Ok((active, sigma, outcomes.into_iter().map(|o| o.expect("every method filled")).collect()))
}

/// Single-variable tests for the methods in `group` (same fraction and
/// view), sharing p-values across methods.
fn single_tests(
    cfg: &SimConfig,
    data: &Dataset,
    methods: &[MethodSpec],
    group: &[usize],
    splits: &[SplitSelection],
    seed: u64,
) -> Vec<(usize, MethodOutcome)> {
    let view = methods[group[0]].view;
    let p = data.p();
    let needs: Vec<Vec<bool>> = group
        .iter()
        .map(|&i| {
            let b = methods[i].n_splits;
            testable(&selection_counts(p, &splits[..b]), b, methods[i].aggregation)
        })
        .collect();
    let mut requests = Vec::new();
    for (k, s) in splits.iter().enumerate().filter(|(_, s)| s.usable()) {
        for &j in s.support() {
            let mut chain: Option<crate::gauss::hit_and_run::ChainConfig> = None;
            for (gi, &i) in group.iter().enumerate() {
                if k >= methods[i].n_splits || !needs[gi][j] {
                    continue;
                }
                let c = cfg.multicarve_config(&methods[i], seed).chain_config(s.s_tilde(), chain_seed(seed, s.index, j));
                chain = Some(match chain {
                    None => c,
                    Some(mut prev) => {
                        if c.n_samples > prev.n_samples {
                            prev.n_samples = c.n_samples;
                            prev.burn_in = c.burn_in;
                        }
                        prev.early_abort = match (prev.early_abort, c.early_abort) {
                            (Some(a), Some(b)) => Some(if b.threshold > a.threshold { b } else { a }),
                            _ => None,
                        };
                        prev
                    }
                });
            }
            if let Some(chain) = chain {
                requests.push(CarveRequest { split: k, variable: j, chain });
            }
        }
    }
    let raw = carve_batch(splits, view, requests);
    group
        .iter()
        .enumerate()
        .map(|(gi, &i)| {
            let b = methods[i].n_splits;
            let mine: Vec<_> = raw.iter().filter(|r| r.split < b && needs[gi][r.variable]).cloned().collect();
            let (_, adj) = pvalue_matrices(p, &splits[..b], &mine);
            let warnings = mine.iter().filter(|r| r.outcome.is_err()).count()
                + splits[..b].iter().filter(|s| s.warning.is_some()).count();
            let aggregated = aggregate_columns(&adj, methods[i].aggregation);
            (i, MethodOutcome { method: i, aggregated, intervals: None, targets: None, warnings })
        })
        .collect()
}
