//! Multicarving: carving over many random splits, quantile aggregation,
//! group tests, and confidence intervals.

pub mod aggregate;
pub mod ci;
pub mod report;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carve::{
    bonferroni_adjust, carve_pvalue, estimate_sigma, CarveTask, PValue, SigmaMode, Submodel, Target, View,
};
use crate::data::{select_entries, select_rows, Dataset, Family, SplitPlan};
use crate::error::{Error, Result};
use crate::gauss::hit_and_run::{default_chain_length, min_chain_length, ChainConfig, EarlyAbort, MIN_CHAIN};
use crate::glm::logistic_carving_data;
use crate::rng::{self, derive_seed};
use crate::select::{select_on, SelectOptions, SelectionEvent, Selector};

pub use aggregate::{aggregate_fixed, aggregate_optimized, Aggregation};
pub use ci::{confidence_intervals, ConfidenceInterval};
pub use report::{ChainRecord, GroupReport, InferenceReport, SplitTrace};

/// MCMC budget per chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    /// Fixed number of recorded draws; `None` uses the default length rule.
    pub n_samples: Option<usize>,
    /// Lower bound for the default rule.
    pub min_samples: usize,
    /// Stop chains whose p-value clearly cannot matter for a rejection.
    pub early_abort: bool,
    pub check_every: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings { n_samples: None, min_samples: MIN_CHAIN, early_abort: true, check_every: 500 }
    }
}

/// Multiplicity factor applied to a group p-value on each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupCorrection {
    #[default]
    None,
    /// `p / |G|`.
    Size,
    /// `|S~| / |S~ and G|`, which varies by split.
    Selected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticarveConfig {
    pub n_splits: usize,
    pub fraction: f64,
    pub aggregation: Aggregation,
    pub alpha: f64,
    pub view: View,
    pub family: Family,
    pub sigma: SigmaMode,
    pub selector: Selector,
    pub intercept: bool,
    pub n_folds: usize,
    pub master_seed: u64,
    pub chain: ChainSettings,
}

impl Default for MulticarveConfig {
    fn default() -> Self {
        MulticarveConfig {
            n_splits: 50,
            fraction: 0.9,
            aggregation: Aggregation::Optimized(0.05),
            alpha: 0.05,
            view: View::Selected,
            family: Family::Gaussian,
            sigma: SigmaMode::GlobalCv,
            selector: Selector::Cv1se,
            intercept: false,
            n_folds: 10,
            master_seed: 0,
            chain: ChainSettings::default(),
        }
    }
}

impl MulticarveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_splits == 0 {
            return Err(Error::Validation("need at least one split".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Validation(format!("selection fraction {} not in (0, 1]", self.fraction)));
        }
        if self.fraction == 1.0 && self.n_splits > 1 {
            return Err(Error::Validation("a selection fraction of 1 only allows a single split".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        self.aggregation.validate()?;
        if self.family == Family::Binomial && self.view == View::Saturated {
            return Err(Error::Validation("the saturated view is only available for the Gaussian family".into()));
        }
        Ok(())
    }

    /// Draws per chain for a split with `s_tilde` tested variables.
    pub fn chain_length(&self, s_tilde: usize) -> usize {
        if let Some(n) = self.chain.n_samples {
            return n.max(1);
        }
        let optimized = matches!(self.aggregation, Aggregation::Optimized(_));
        let g = self.aggregation.gamma_min();
        default_chain_length(s_tilde, self.alpha, g, optimized).max(self.chain.min_samples)
    }

    /// Raw p-value above which a split can never contribute to a rejection.
    pub fn abort_threshold(&self, s_tilde: usize) -> f64 {
        self.alpha * self.aggregation.gamma_min() / (s_tilde.max(1) as f64 * self.aggregation.penalty())
    }

    pub fn chain_config(&self, s_tilde: usize, seed: u64) -> ChainConfig {
        let mut cfg = ChainConfig::with_length(self.chain_length(s_tilde), seed);
        if self.chain.early_abort {
            cfg.early_abort = Some(EarlyAbort { threshold: self.abort_threshold(s_tilde), check_every: self.chain.check_every });
        }
        cfg
    }

    fn select_options(&self) -> SelectOptions {
        SelectOptions { selector: self.selector, family: self.family, intercept: self.intercept, n_folds: self.n_folds }
    }
}

/// Smallest number of draws that could make a split significant; exposed
/// for reporting.
pub fn required_samples(cfg: &MulticarveConfig, s_tilde: usize) -> usize {
    let optimized = matches!(cfg.aggregation, Aggregation::Optimized(_));
    min_chain_length(s_tilde, cfg.alpha, cfg.aggregation.gamma_min(), optimized)
}

/// Submodel design, response, and noise level used for carving on one split.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub submodel: Submodel,
    pub y: DVector<f64>,
    pub sigma: f64,
}

/// Outcome of the selection stage on one split.
#[derive(Debug, Clone)]
pub struct SplitSelection {
    pub index: usize,
    pub split: SplitPlan,
    pub event: Option<SelectionEvent>,
    pub prepared: Option<PreparedSplit>,
    pub warning: Option<String>,
}

impl SplitSelection {
    pub fn support(&self) -> &[usize] {
        self.event.as_ref().map_or(&[], |e| e.support())
    }

    pub fn s_tilde(&self) -> usize {
        self.support().len()
    }

    /// Usable for inference: selected something and prepared without error.
    pub fn usable(&self) -> bool {
        self.prepared.is_some()
    }

    pub fn trace(&self) -> SplitTrace {
        let ev = self.event.as_ref();
        SplitTrace {
            index: self.index,
            seed: self.split.seed,
            n_selection: self.split.n1(),
            support: self.support().to_vec(),
            signs: ev.map_or_else(Vec::new, |e| e.signs().to_vec()),
            lambda: ev.map(|e| e.fit.lambda),
            coefficients: ev.map_or_else(Vec::new, |e| e.support().iter().map(|&j| e.coef[j]).collect()),
            sigma: self.prepared.as_ref().map(|p| p.sigma),
            warning: self.warning.clone(),
        }
    }
}

/// Noise level shared by all splits, when the mode calls for one.
pub fn global_sigma(data: &Dataset, cfg: &MulticarveConfig) -> Result<Option<f64>> {
    if data.family == Family::Binomial {
        return Ok(None);
    }
    match cfg.sigma {
        SigmaMode::GlobalCv => Ok(Some(estimate_sigma(
            &data.x,
            &data.y,
            SigmaMode::GlobalCv,
            None,
            cfg.intercept,
            cfg.n_folds,
            cfg.master_seed,
        )?)),
        SigmaMode::Known(s) => Ok(Some(s)),
        SigmaMode::PerSplit => Ok(None),
    }
}

fn prepare_split(
    data: &Dataset,
    cfg: &MulticarveConfig,
    event: &SelectionEvent,
    global: Option<f64>,
) -> Result<PreparedSplit> {
    match data.family {
        Family::Gaussian => {
            let sigma = match (cfg.sigma, global) {
                (SigmaMode::PerSplit, _) => {
                    estimate_sigma(&data.x, &data.y, SigmaMode::PerSplit, Some(event), cfg.intercept, cfg.n_folds, 0)?
                }
                (_, Some(s)) => s,
                (mode, None) => estimate_sigma(&data.x, &data.y, mode, Some(event), cfg.intercept, cfg.n_folds, cfg.master_seed)?,
            };
            let ones = DVector::from_element(data.n(), 1.0);
            let submodel = Submodel::new(&data.x, event.support(), cfg.intercept.then_some(&ones));
            Ok(PreparedSplit { submodel, y: data.y.clone(), sigma })
        }
        Family::Binomial => {
            let (submodel, y) = logistic_carving_data(&data.x, &data.y, event, cfg.intercept)?;
            Ok(PreparedSplit { submodel, y, sigma: 1.0 })
        }
    }
}

/// Seed of the split with index `b`.
pub fn split_seed(master: u64, b: usize) -> u64 {
    derive_seed(master, &[rng::tag::SPLIT, b as u64])
}

/// Split the data, select, and prepare carving inputs for splits `0..n_splits`.
/// Failures other than invalid input become skipped splits with a warning.
pub fn select_splits(
    data: &Dataset,
    cfg: &MulticarveConfig,
    n_splits: usize,
    global: Option<f64>,
) -> Result<Vec<SplitSelection>> {
    let n = data.n();
    let opts = cfg.select_options();
    (0..n_splits)
        .into_par_iter()
        .map(|b| {
            let split = SplitPlan::random(n, cfg.fraction, split_seed(cfg.master_seed, b))?;
            let x1 = select_rows(&data.x, &split.selection_idx);
            let y1 = select_entries(&data.y, &split.selection_idx);
            let cv_seed = derive_seed(cfg.master_seed, &[rng::tag::CV_FOLDS, b as u64]);
            let mut out = SplitSelection { index: b, split: split.clone(), event: None, prepared: None, warning: None };
            match select_on(&x1, &y1, &opts, cv_seed, false) {
                Ok(mut ev) => {
                    ev.split = split;
                    match prepare_split(data, cfg, &ev, global) {
                        Ok(p) => out.prepared = Some(p),
                        Err(e) => out.warning = Some(format!("split {b} skipped: {e}")),
                    }
                    out.event = Some(ev);
                }
                Err(Error::EmptySelection) => {}
                Err(e) => out.warning = Some(format!("split {b} skipped: {e}")),
            }
            if let Some(w) = &out.warning {
                warn!("{w}");
            }
            Ok(out)
        })
        .collect()
}

/// How many usable splits selected each variable.
pub fn selection_counts(p: usize, splits: &[SplitSelection]) -> Vec<usize> {
    let mut counts = vec![0; p];
    for s in splits.iter().filter(|s| s.usable()) {
        for &j in s.support() {
            counts[j] += 1;
        }
    }
    counts
}

/// Raw p-value of one variable on one split.
#[derive(Debug, Clone)]
pub struct RawPValue {
    pub split: usize,
    pub variable: usize,
    pub seed: u64,
    pub outcome: std::result::Result<PValue, String>,
}

/// One single-variable carving computation.
#[derive(Debug, Clone)]
pub struct CarveRequest {
    /// Position of the split in the slice passed to [`carve_batch`].
    pub split: usize,
    pub variable: usize,
    pub chain: ChainConfig,
}

/// Seed of the chain for variable `j` on split `b`.
pub fn chain_seed(master: u64, b: usize, j: usize) -> u64 {
    derive_seed(master, &[rng::tag::CHAIN, b as u64, j as u64])
}

/// Run carving requests in parallel; results come back in request order.
pub fn carve_batch(splits: &[SplitSelection], view: View, requests: Vec<CarveRequest>) -> Vec<RawPValue> {
    requests
        .into_par_iter()
        .map(|req| {
            let s = &splits[req.split];
            let prep = s.prepared.as_ref().expect("usable split");
            let event = s.event.as_ref().expect("usable split");
            let j = req.variable;
            let seed = req.chain.seed;
            let task = CarveTask {
                event,
                submodel: &prep.submodel,
                y: &prep.y,
                target: Target::Single(j),
                sigma: prep.sigma,
                view,
                chain: req.chain,
            };
            let outcome = carve_pvalue(&task).map_err(|e| {
                let msg = format!("split {} variable {j}: {e}; using p = 1", s.index);
                warn!("{msg}");
                msg
            });
            RawPValue { split: s.index, variable: j, seed, outcome }
        })
        .collect()
}

/// Carve every selected variable with `test[j]` on the usable splits.
pub fn carve_splits(cfg: &MulticarveConfig, splits: &[SplitSelection], test: &[bool]) -> Vec<RawPValue> {
    let requests = splits
        .iter()
        .enumerate()
        .filter(|(_, s)| s.usable())
        .flat_map(|(k, s)| {
            s.support().iter().filter(|&&j| test[j]).map(move |&j| CarveRequest {
                split: k,
                variable: j,
                chain: cfg.chain_config(s.s_tilde(), chain_seed(cfg.master_seed, s.index, j)),
            })
        })
        .collect();
    carve_batch(splits, cfg.view, requests)
}

/// `B x p` raw and Bonferroni-adjusted p-values; 1 where a variable was not
/// selected, its split was skipped, or its computation failed.
pub fn pvalue_matrices(p: usize, splits: &[SplitSelection], raw: &[RawPValue]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let b = splits.len();
    let mut raw_m = vec![vec![1.0; p]; b];
    let mut adj = vec![vec![1.0; p]; b];
    let row_of: std::collections::HashMap<usize, usize> = splits.iter().enumerate().map(|(k, s)| (s.index, k)).collect();
    for r in raw {
        let k = row_of[&r.split];
        if let Ok(pv) = &r.outcome {
            raw_m[k][r.variable] = pv.value;
            adj[k][r.variable] = bonferroni_adjust(pv.value, splits[k].s_tilde());
        }
    }
    (raw_m, adj)
}

/// Aggregate each column of an adjusted `B x p` matrix.
pub fn aggregate_columns(adj: &[Vec<f64>], agg: Aggregation) -> Vec<f64> {
    let p = adj.first().map_or(0, |r| r.len());
    (0..p)
        .map(|j| {
            let col: Vec<f64> = adj.iter().map(|r| r[j]).collect();
            agg.apply(&col)
        })
        .collect()
}

/// Variables that can still reach significance: selected on at least the
/// number of splits the aggregation needs.
pub fn testable(counts: &[usize], n_splits: usize, agg: Aggregation) -> Vec<bool> {
    let need = agg.min_selected(n_splits);
    counts.iter().map(|&c| c >= need).collect()
}

/// Full multicarving run for single variables.
pub fn multicarve(data: &Dataset, cfg: &MulticarveConfig) -> Result<InferenceReport> {
    cfg.validate()?;
    if cfg.family != data.family {
        return Err(Error::Validation(format!(
            "configured family {} does not match the data ({})",
            cfg.family, data.family
        )));
    }
    let global = global_sigma(data, cfg)?;
    let splits = select_splits(data, cfg, cfg.n_splits, global)?;
    let counts = selection_counts(data.p(), &splits);
    let test = testable(&counts, cfg.n_splits, cfg.aggregation);
    let raw = carve_splits(cfg, &splits, &test);
    Ok(InferenceReport::assemble(data, cfg, global, &splits, &counts, &raw))
}

/// Multicarving tests plus confidence intervals from the same splits. The
/// interval target includes an intercept when `ci_intercept` is set.
pub fn multicarve_with_intervals(data: &Dataset, cfg: &MulticarveConfig, ci_intercept: bool) -> Result<InferenceReport> {
    cfg.validate()?;
    if data.family != Family::Gaussian {
        return Err(Error::Validation("confidence intervals are only available for the Gaussian family".into()));
    }
    let global = global_sigma(data, cfg)?;
    let splits = select_splits(data, cfg, cfg.n_splits, global)?;
    let counts = selection_counts(data.p(), &splits);
    let test = testable(&counts, cfg.n_splits, cfg.aggregation);
    let raw = carve_splits(cfg, &splits, &test);
    let mut report = InferenceReport::assemble(data, cfg, global, &splits, &counts, &raw);
    let mut warnings = Vec::new();
    let ci = confidence_intervals(&data.x, &data.y, cfg, &splits, &counts, ci_intercept, &mut warnings);
    report.confidence_intervals = Some(ci);
    report.warnings.extend(warnings);
    Ok(report)
}

/// Multicarving group tests; one aggregated p-value per group.
pub fn multicarve_groups(
    data: &Dataset,
    cfg: &MulticarveConfig,
    groups: &[Vec<usize>],
    correction: GroupCorrection,
) -> Result<GroupReport> {
    cfg.validate()?;
    if cfg.view != View::Selected {
        return Err(Error::Validation("group tests are only available in the selected view".into()));
    }
    let p = data.p();
    for g in groups {
        if g.is_empty() || g.iter().any(|&j| j >= p) {
            return Err(Error::Validation(format!("group {g:?} is empty or out of range for p = {p}")));
        }
    }
    let global = global_sigma(data, cfg)?;
    let splits = select_splits(data, cfg, cfg.n_splits, global)?;
    let raw = carve_groups(cfg, &splits, groups, p, correction);
    Ok(GroupReport::assemble(cfg, groups, &splits, raw))
}

/// Per split and group: raw p (None if no member selected or split
/// unusable) and adjusted p.
pub fn carve_groups(
    cfg: &MulticarveConfig,
    splits: &[SplitSelection],
    groups: &[Vec<usize>],
    p: usize,
    correction: GroupCorrection,
) -> Vec<Vec<(Option<PValue>, f64, Option<String>)>> {
    let tasks: Vec<(usize, usize)> = (0..splits.len()).flat_map(|k| (0..groups.len()).map(move |g| (k, g))).collect();
    let flat: Vec<(Option<PValue>, f64, Option<String>)> = tasks
        .into_par_iter()
        .map(|(k, g)| {
            let s = &splits[k];
            let group = &groups[g];
            let (Some(prep), Some(event)) = (s.prepared.as_ref(), s.event.as_ref()) else {
                return (None, 1.0, None);
            };
            let hit = group.iter().filter(|j| event.support().contains(j)).count();
            if hit == 0 {
                return (None, 1.0, None);
            }
            let seed = derive_seed(cfg.master_seed, &[rng::tag::GROUP_CHAIN, s.index as u64, g as u64]);
            let factor = match correction {
                GroupCorrection::None => 1.0,
                GroupCorrection::Size => p as f64 / group.len() as f64,
                GroupCorrection::Selected => s.s_tilde() as f64 / hit as f64,
            };
            let mut chain = cfg.chain_config(1, seed);
            if let Some(ea) = chain.early_abort.as_mut() {
                ea.threshold /= factor;
            }
            let task = CarveTask {
                event,
                submodel: &prep.submodel,
                y: &prep.y,
                target: Target::Group(group.clone()),
                sigma: prep.sigma,
                view: View::Selected,
                chain,
            };
            match carve_pvalue(&task) {
                Ok(pv) => {
                    let adj = (pv.value * factor).min(1.0);
                    (Some(pv), adj, None)
                }
                Err(e) => {
                    let msg = format!("split {} group {g}: {e}; using p = 1", s.index);
                    warn!("{msg}");
                    (None, 1.0, Some(msg))
                }
            }
        })
        .collect();
    flat.chunks(groups.len().max(1)).map(|c| c.to_vec()).collect()
}

/// `X^+_{S} X beta` with the optional intercept column: the coefficients of
/// the best linear predictor within the submodel.
pub fn submodel_target(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    support: &[usize],
    intercept: bool,
) -> Result<DVector<f64>> {
    let ones = DVector::from_element(x.nrows(), 1.0);
    let sm = Submodel::new(x, support, intercept.then_some(&ones));
    let ls = crate::linalg::LeastSquares::new(&sm.z)?;
    let coef = ls.solve(&(x * beta));
    Ok(coef.rows(sm.offset, support.len()).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut cfg = MulticarveConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.fraction = 1.0;
        assert!(cfg.validate().is_err());
        cfg.n_splits = 1;
        assert!(cfg.validate().is_ok());
        cfg.aggregation = Aggregation::Optimized(0.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn chain_length_follows_rule() {
        let cfg = MulticarveConfig { aggregation: Aggregation::Optimized(0.3), ..Default::default() };
        let s = 10;
        let expect = 2 * (s as f64 * (1.0 - 0.3f64.ln()) / (0.05 * 0.3)).ceil() as usize;
        assert_eq!(cfg.chain_length(s), expect);
        assert_eq!(cfg.chain_length(0), MIN_CHAIN.max(cfg.chain_length(0)));
    }

    #[test]
    fn target_with_screening() {
        let x = DMatrix::from_fn(30, 6, |i, j| ((i * 7 + j * 13) % 11) as f64 - 5.0 + if i == j { 3.0 } else { 0.0 });
        let beta = DVector::from_vec(vec![1.0, 0.0, -2.0, 0.0, 0.0, 0.0]);
        let t = submodel_target(&x, &beta, &[0, 2, 4], false).unwrap();
        assert!((t - DVector::from_vec(vec![1.0, -2.0, 0.0])).amax() < 1e-10);
    }
}
