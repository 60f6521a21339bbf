//! Serializable results of a multicarving run.

use serde::{Deserialize, Serialize};

use super::ci::ConfidenceInterval;
use super::{aggregate_columns, pvalue_matrices, MulticarveConfig, RawPValue, SplitSelection};
use crate::carve::PValue;
use crate::data::Dataset;

pub const SCHEMA_VERSION: u32 = 1;

/// Serde helper writing non-finite floats as the strings `inf`, `-inf`, `nan`.
pub mod ext_real {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&format_ext(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => parse_ext(&s).ok_or_else(|| de::Error::custom(format!("not a number: {s}"))),
        }
    }

    pub fn format_ext(v: f64) -> String {
        if v.is_nan() {
            "nan".into()
        } else if v == f64::INFINITY {
            "inf".into()
        } else if v == f64::NEG_INFINITY {
            "-inf".into()
        } else {
            format!("{v}")
        }
    }

    pub fn parse_ext(s: &str) -> Option<f64> {
        match s {
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            _ => s.parse().ok(),
        }
    }
}

/// What was selected on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTrace {
    pub index: usize,
    pub seed: u64,
    pub n_selection: usize,
    pub support: Vec<usize>,
    pub signs: Vec<f64>,
    /// Penalty of the selected fit in the half residual-sum-of-squares scale.
    pub lambda: Option<f64>,
    /// Selection-stage coefficients of the support, original scale.
    pub coefficients: Vec<f64>,
    pub sigma: Option<f64>,
    pub warning: Option<String>,
}

/// Diagnostics of one carving computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub split: usize,
    pub variable: usize,
    pub seed: u64,
    pub pvalue: Option<f64>,
    pub n_samples: usize,
    pub mc_se: f64,
    pub aborted_early: bool,
    pub max_consecutive_zero: usize,
    pub error: Option<String>,
}

impl ChainRecord {
    fn from_raw(r: &RawPValue) -> Self {
        match &r.outcome {
            Ok(pv) => ChainRecord {
                split: r.split,
                variable: r.variable,
                seed: r.seed,
                pvalue: Some(pv.value),
                n_samples: pv.n_samples_used,
                mc_se: pv.mc_se,
                aborted_early: pv.diagnostics.as_ref().is_some_and(|d| d.aborted_early),
                max_consecutive_zero: pv.diagnostics.as_ref().map_or(0, |d| d.max_consecutive_zero),
                error: None,
            },
            Err(e) => ChainRecord {
                split: r.split,
                variable: r.variable,
                seed: r.seed,
                pvalue: None,
                n_samples: 0,
                mc_se: 0.0,
                aborted_early: false,
                max_consecutive_zero: 0,
                error: Some(e.clone()),
            },
        }
    }
}

/// Result of single-variable multicarving (JSON schema version 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub schema_version: u32,
    pub config: MulticarveConfig,
    pub n: usize,
    pub p: usize,
    /// Noise level shared by all splits, if any.
    pub sigma: Option<f64>,
    pub splits: Vec<SplitTrace>,
    /// `B x p` raw p-values; 1 where the variable was not tested.
    pub raw_pvalues: Vec<Vec<f64>>,
    /// `B x p` Bonferroni-adjusted p-values.
    pub adjusted_pvalues: Vec<Vec<f64>>,
    pub aggregated: Vec<f64>,
    pub rejected: Vec<usize>,
    pub selection_counts: Vec<usize>,
    pub confidence_intervals: Option<Vec<ConfidenceInterval>>,
    pub chains: Vec<ChainRecord>,
    pub warnings: Vec<String>,
}

impl InferenceReport {
    pub fn assemble(
        data: &Dataset,
        cfg: &MulticarveConfig,
        sigma: Option<f64>,
        splits: &[SplitSelection],
        counts: &[usize],
        raw: &[RawPValue],
    ) -> Self {
        let (raw_m, adj) = pvalue_matrices(data.p(), splits, raw);
        let aggregated = aggregate_columns(&adj, cfg.aggregation);
        let rejected = (0..data.p()).filter(|&j| aggregated[j] <= cfg.alpha).collect();
        let mut chains: Vec<ChainRecord> = raw.iter().map(ChainRecord::from_raw).collect();
        chains.sort_by_key(|c| (c.split, c.variable));
        let mut warnings: Vec<String> = splits.iter().filter_map(|s| s.warning.clone()).collect();
        warnings.extend(chains.iter().filter_map(|c| c.error.clone()));
        InferenceReport {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            n: data.n(),
            p: data.p(),
            sigma,
            splits: splits.iter().map(SplitSelection::trace).collect(),
            raw_pvalues: raw_m,
            adjusted_pvalues: adj,
            aggregated,
            rejected,
            selection_counts: counts.to_vec(),
            confidence_intervals: None,
            chains,
            warnings,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> crate::Result<Self> {
        serde_json::from_str(s).map_err(|e| crate::Error::Validation(format!("invalid report: {e}")))
    }

    /// One row per variable: `variable,aggregated_p,reject,ci_lower,ci_upper,selected_count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable,aggregated_p,reject,ci_lower,ci_upper,selected_count\n");
        for j in 0..self.p {
            let (lo, hi) = match &self.confidence_intervals {
                Some(ci) => (ext_real::format_ext(ci[j].lower), ext_real::format_ext(ci[j].upper)),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{j},{},{},{lo},{hi},{}\n",
                self.aggregated[j],
                u8::from(self.aggregated[j] <= self.config.alpha),
                self.selection_counts[j]
            ));
        }
        out
    }
}

/// Result of multicarving group tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub schema_version: u32,
    pub config: MulticarveConfig,
    pub groups: Vec<Vec<usize>>,
    pub splits: Vec<SplitTrace>,
    /// `B x groups` raw p-values; 1 where no member was selected.
    pub raw_pvalues: Vec<Vec<f64>>,
    pub adjusted_pvalues: Vec<Vec<f64>>,
    pub aggregated: Vec<f64>,
    pub rejected: Vec<usize>,
    pub warnings: Vec<String>,
}

impl GroupReport {
    pub fn assemble(
        cfg: &MulticarveConfig,
        groups: &[Vec<usize>],
        splits: &[SplitSelection],
        rows: Vec<Vec<(Option<PValue>, f64, Option<String>)>>,
    ) -> Self {
        let raw: Vec<Vec<f64>> =
            rows.iter().map(|r| r.iter().map(|(pv, _, _)| pv.as_ref().map_or(1.0, |p| p.value)).collect()).collect();
        let adj: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|(_, a, _)| *a).collect()).collect();
        let aggregated = if adj.is_empty() { vec![1.0; groups.len()] } else { aggregate_columns(&adj, cfg.aggregation) };
        let rejected = (0..groups.len()).filter(|&g| aggregated[g] <= cfg.alpha).collect();
        let mut warnings: Vec<String> = splits.iter().filter_map(|s| s.warning.clone()).collect();
        warnings.extend(rows.iter().flatten().filter_map(|(_, _, w)| w.clone()));
        GroupReport {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            groups: groups.to_vec(),
            splits: splits.iter().map(SplitSelection::trace).collect(),
            raw_pvalues: raw,
            adjusted_pvalues: adj,
            aggregated,
            rejected,
            warnings,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per group: `group,aggregated_p,reject,size`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,aggregated_p,reject,size\n");
        for (g, members) in self.groups.iter().enumerate() {
            out.push_str(&format!(
                "{g},{},{},{}\n",
                self.aggregated[g],
                u8::from(self.aggregated[g] <= self.config.alpha),
                members.len()
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::ext_real::{format_ext, parse_ext};
    use super::*;

    #[test]
    fn ext_real_roundtrip() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct W(#[serde(with = "ext_real")] f64);
        for v in [0.5, -2.0, f64::INFINITY, f64::NEG_INFINITY] {
            let s = serde_json::to_string(&W(v)).unwrap();
            assert_eq!(serde_json::from_str::<W>(&s).unwrap(), W(v));
        }
        assert_eq!(serde_json::to_string(&W(f64::INFINITY)).unwrap(), "\"inf\"");
        assert_eq!(format_ext(1.25), "1.25");
        assert_eq!(parse_ext("-inf"), Some(f64::NEG_INFINITY));
    }
}
