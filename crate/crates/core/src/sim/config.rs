//! Simulation configuration and its `key = value` text format.
//!
//! ```text
//! # Toeplitz benchmark
//! design = toeplitz        # toeplitz | block | riboflavin_like | csv
//! rho = 0.6
//! n = 100
//! p = 200
//! active = 0,4,9,14,19     # 0-based; ranges like 24-49 allowed
//! coef = 1                 # one value for all actives, or one per active
//! sigma = 2                # or: snr = 16
//! runs = 100
//! B = 1, 25
//! frac = 0.9
//! gamma_min = 0.3
//! ```
//!
//! List-valued keys (`B`, `frac`, `gamma_min`, `gamma`, `view`) span the
//! method grid. Unknown keys are rejected.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::carve::{SigmaMode, View};
use crate::data::Family;
use crate::error::{Error, Result};
use crate::io::parse_index_list;
use crate::multi::{Aggregation, ChainSettings, GroupCorrection};
use crate::select::Selector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignSpec {
    Toeplitz { rho: f64 },
    Block,
    RiboflavinLike,
    Csv { path: PathBuf },
}

impl DesignSpec {
    pub fn label(&self) -> String {
        match self {
            DesignSpec::Toeplitz { rho } => format!("toeplitz(rho={rho})"),
            DesignSpec::Block => "block".into(),
            DesignSpec::RiboflavinLike => "riboflavin_like".into(),
            DesignSpec::Csv { path } => format!("csv({})", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSpec {
    Fixed { active: Vec<usize>, values: Vec<f64> },
    /// `k` actives drawn afresh in every run, all with coefficient `value`.
    Random { k: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Sigma(f64),
    Snr(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Single,
    Group,
    Ci,
}

/// One point of the method grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub n_splits: usize,
    pub fraction: f64,
    pub aggregation: Aggregation,
    pub view: View,
}

impl MethodSpec {
    pub fn gamma_mode(&self) -> String {
        if self.n_splits == 1 {
            return "single".into();
        }
        match self.aggregation {
            Aggregation::Optimized(g) => format!("gamma_min={g}"),
            Aggregation::Fixed(g) => format!("gamma={g}"),
        }
    }

    pub fn view_label(&self) -> &'static str {
        match self.view {
            View::Selected => "selected",
            View::Saturated => "saturated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub design: DesignSpec,
    pub n: usize,
    pub p: usize,
    pub beta: BetaSpec,
    pub noise: Noise,
    pub family: Family,
    pub runs: usize,
    /// Draw the design once and keep it fixed over runs.
    pub fixed_design: bool,
    pub splits: Vec<usize>,
    pub fractions: Vec<f64>,
    pub gamma_min: Vec<f64>,
    pub gamma: Vec<f64>,
    pub views: Vec<View>,
    pub alpha: f64,
    pub master_seed: u64,
    pub sigma_mode: SigmaMode,
    pub selector: Selector,
    pub intercept: bool,
    pub n_folds: usize,
    pub test: TestKind,
    pub group: Option<Vec<usize>>,
    pub group_correction: GroupCorrection,
    /// Include an intercept in the interval target.
    pub ci_intercept: bool,
    pub chain: ChainSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            design: DesignSpec::Toeplitz { rho: 0.6 },
            n: 100,
            p: 200,
            beta: BetaSpec::Fixed { active: vec![0, 4, 9, 14, 19], values: vec![1.0; 5] },
            noise: Noise::Sigma(2.0),
            family: Family::Gaussian,
            runs: 100,
            fixed_design: true,
            splits: vec![1],
            fractions: vec![0.9],
            gamma_min: vec![0.05],
            gamma: vec![],
            views: vec![View::Selected],
            alpha: 0.05,
            master_seed: 1,
            sigma_mode: SigmaMode::GlobalCv,
            selector: Selector::Cv1se,
            intercept: false,
            n_folds: 10,
            test: TestKind::Single,
            group: None,
            group_correction: GroupCorrection::None,
            ci_intercept: true,
            chain: ChainSettings::default(),
        }
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::Validation(format!("`{key}`: cannot parse `{s}`"))))
        .collect()
}

fn one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse::<T>().map_err(|_| Error::Validation(format!("`{key}`: cannot parse `{v}`")))
}

impl SimConfig {
    /// Parse the text format; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        let mut rho = 0.6;
        let mut design = None::<String>;
        let mut design_file = None::<PathBuf>;
        let mut active = None::<Vec<usize>>;
        let mut coef = vec![1.0];
        let mut random_active = None::<usize>;
        let mut sigma = None::<f64>;
        let mut snr = None::<f64>;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "design" => design = Some(v.to_string()),
                "rho" => rho = one(k, v)?,
                "design_file" => design_file = Some(PathBuf::from(v)),
                "n" => cfg.n = one(k, v)?,
                "p" => cfg.p = one(k, v)?,
                "active" => active = Some(parse_index_list(v)?),
                "coef" => coef = list(k, v)?,
                "random_active" => random_active = Some(one(k, v)?),
                "sigma" => sigma = Some(one(k, v)?),
                "snr" => snr = Some(one(k, v)?),
                "family" => cfg.family = v.parse()?,
                "runs" => cfg.runs = one(k, v)?,
                "fixed_design" => cfg.fixed_design = one(k, v)?,
                "B" => cfg.splits = list(k, v)?,
                "frac" => cfg.fractions = list(k, v)?,
                "gamma_min" => cfg.gamma_min = list(k, v)?,
                "gamma" => cfg.gamma = list(k, v)?,
                "view" => cfg.views = list(k, v)?,
                "alpha" => cfg.alpha = one(k, v)?,
                "master_seed" | "seed" => cfg.master_seed = one(k, v)?,
                "sigma_mode" => cfg.sigma_mode = v.replace('-', "_").parse()?,
                "selector" => cfg.selector = v.parse()?,
                "intercept" => cfg.intercept = one(k, v)?,
                "n_folds" => cfg.n_folds = one(k, v)?,
                "test" => {
                    cfg.test = match v {
                        "single" => TestKind::Single,
                        "group" => TestKind::Group,
                        "ci" => TestKind::Ci,
                        _ => return Err(Error::Validation(format!("unknown test kind `{v}`"))),
                    }
                }
                "group" => cfg.group = Some(parse_index_list(v)?),
                "group_correction" => {
                    cfg.group_correction = match v {
                        "none" => GroupCorrection::None,
                        "size" => GroupCorrection::Size,
                        "selected" => GroupCorrection::Selected,
                        _ => return Err(Error::Validation(format!("unknown group correction `{v}`"))),
                    }
                }
                "ci_intercept" => cfg.ci_intercept = one(k, v)?,
                "chain_samples" => cfg.chain.n_samples = Some(one(k, v)?),
                "min_chain" => cfg.chain.min_samples = one(k, v)?,
                "early_abort" => cfg.chain.early_abort = one(k, v)?,
                _ => return Err(Error::Validation(format!("line {}: unknown key `{k}`", lineno + 1))),
            }
        }
        cfg.design = match design.as_deref().unwrap_or("toeplitz") {
            "toeplitz" => DesignSpec::Toeplitz { rho },
            "block" => DesignSpec::Block,
            "riboflavin_like" => DesignSpec::RiboflavinLike,
            "csv" => DesignSpec::Csv {
                path: design_file.ok_or_else(|| Error::Validation("design = csv needs design_file".into()))?,
            },
            other => return Err(Error::Validation(format!("unknown design `{other}`"))),
        };
        cfg.noise = match (sigma, snr) {
            (Some(s), None) => Noise::Sigma(s),
            (None, Some(s)) => Noise::Snr(s),
            (None, None) => cfg.noise,
            _ => return Err(Error::Validation("give exactly one of `sigma` and `snr`".into())),
        };
        cfg.beta = match (active, random_active) {
            (Some(a), None) => {
                let values = if coef.len() == 1 { vec![coef[0]; a.len()] } else { coef };
                BetaSpec::Fixed { active: a, values }
            }
            (None, Some(k)) => BetaSpec::Random { k, value: coef[0] },
            (None, None) => {
                let BetaSpec::Fixed { active, .. } = &cfg.beta else { unreachable!() };
                let values = if coef.len() == 1 { vec![coef[0]; active.len()] } else { coef };
                BetaSpec::Fixed { active: active.clone(), values }
            }
            _ => return Err(Error::Validation("give only one of `active` and `random_active`".into())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n < 2 || self.p < 1 || self.runs < 1 {
            return bad("n, p and runs must be positive".into());
        }
        if let DesignSpec::Toeplitz { rho } = self.design {
            if !(rho.abs() < 1.0) {
                return bad(format!("rho = {rho} must satisfy |rho| < 1"));
            }
        }
        if self.design == DesignSpec::Block && self.p != 500 {
            return bad("the block design has p = 500".into());
        }
        match &self.beta {
            BetaSpec::Fixed { active, values } => {
                if active.len() != values.len() {
                    return bad("`coef` must have one value or one per active index".into());
                }
                if let Some(&j) = active.iter().find(|&&j| j >= self.p) {
                    return bad(format!("active index {j} out of range for p = {}", self.p));
                }
            }
            BetaSpec::Random { k, .. } => {
                if *k > self.p {
                    return bad("more random actives than variables".into());
                }
            }
        }
        let (Noise::Sigma(s) | Noise::Snr(s)) = self.noise;
        if !(s >= 0.0 && s.is_finite()) {
            return bad("noise level must be finite and nonnegative".into());
        }
        if self.splits.is_empty() || self.fractions.is_empty() || self.views.is_empty() {
            return bad("B, frac and view need at least one value".into());
        }
        if self.splits.iter().any(|&b| b > 1) && self.gamma_min.is_empty() && self.gamma.is_empty() {
            return bad("multiple splits need `gamma_min` or `gamma`".into());
        }
        if self.test == TestKind::Group {
            match &self.group {
                Some(g) if !g.is_empty() && g.iter().all(|&j| j < self.p) => {}
                _ => return bad("group tests need a nonempty in-range `group`".into()),
            }
        }
        for m in self.methods() {
            self.multicarve_config(&m, 0).validate()?;
        }
        Ok(())
    }

    /// The method grid in a fixed order: fraction, view, B, aggregation.
    pub fn methods(&self) -> Vec<MethodSpec> {
        let views: Vec<View> = if self.test == TestKind::Ci { vec![View::Saturated] } else { self.views.clone() };
        let mut out = Vec::new();
        for &fraction in &self.fractions {
            for &view in &views {
                for &b in &self.splits {
                    if b == 1 {
                        out.push(MethodSpec { n_splits: 1, fraction, aggregation: Aggregation::Fixed(1.0), view });
                        continue;
                    }
                    for &g in &self.gamma_min {
                        out.push(MethodSpec { n_splits: b, fraction, aggregation: Aggregation::Optimized(g), view });
                    }
                    for &g in &self.gamma {
                        out.push(MethodSpec { n_splits: b, fraction, aggregation: Aggregation::Fixed(g), view });
                    }
                }
            }
        }
        out
    }

    pub fn multicarve_config(&self, m: &MethodSpec, seed: u64) -> crate::multi::MulticarveConfig {
        crate::multi::MulticarveConfig {
            n_splits: m.n_splits,
            fraction: m.fraction,
            aggregation: m.aggregation,
            alpha: self.alpha,
            view: m.view,
            family: self.family,
            sigma: self.sigma_mode,
            selector: self.selector,
            intercept: self.intercept,
            n_folds: self.n_folds,
            master_seed: seed,
            chain: self.chain,
        }
    }
}
