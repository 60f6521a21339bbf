//! Carving p-values for single coefficients and groups of a selected
//! submodel, in the selected view (MCMC) and the saturated view (exact).

pub mod sigma;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::select_cols;
use crate::error::{Error, Result};
use crate::gauss::constrained::{truncated_interval, whiten, ConstrainedGaussianState};
use crate::gauss::hit_and_run::{tail_count, ChainConfig, ChainDiagnostics};
use crate::gauss::law::condition_on_linear;
use crate::gauss::transform::carve_transform;
use crate::gauss::truncnorm::{truncated_cdf, truncated_sf};
use crate::linalg::LeastSquares;
use crate::select::SelectionEvent;

pub use sigma::{estimate_sigma, SigmaMode};

/// Which conditional model the test is carried out in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Selected,
    Saturated,
}

impl std::str::FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selected" => Ok(View::Selected),
            "saturated" => Ok(View::Saturated),
            _ => Err(Error::Validation(format!("unknown view '{s}' (expected selected or saturated)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Right,
    Left,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub value: f64,
    pub side: Side,
    pub n_samples_used: usize,
    /// Monte-Carlo standard error; zero for exact computations.
    pub mc_se: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<ChainDiagnostics>,
}

impl PValue {
    pub fn exact(value: f64, side: Side) -> Self {
        PValue { value: value.clamp(0.0, 1.0), side, n_samples_used: 0, mc_se: 0.0, diagnostics: None }
    }
}

/// `min(p * s_tilde, 1)`; an unselected variable (`s_tilde = 0`) gets 1.
pub fn bonferroni_adjust(p: f64, s_tilde: usize) -> f64 {
    if s_tilde == 0 {
        1.0
    } else {
        (p * s_tilde as f64).min(1.0)
    }
}

/// Design of the selected submodel: an optional leading unpenalized column
/// followed by the selected variables.
#[derive(Debug, Clone)]
pub struct Submodel {
    pub z: DMatrix<f64>,
    /// Original index of each selected column, in order.
    pub vars: Vec<usize>,
    /// 1 when the first column is the unpenalized offset column.
    pub offset: usize,
}

impl Submodel {
    pub fn new(x: &DMatrix<f64>, support: &[usize], lead: Option<&DVector<f64>>) -> Self {
        let xs = select_cols(x, support);
        let offset = usize::from(lead.is_some());
        let mut z = DMatrix::zeros(x.nrows(), support.len() + offset);
        if let Some(u) = lead {
            z.set_column(0, u);
        }
        z.columns_mut(offset, support.len()).copy_from(&xs);
        Submodel { z, vars: support.to_vec(), offset }
    }

    /// Column of original variable `j`, if selected.
    pub fn position(&self, j: usize) -> Option<usize> {
        self.vars.iter().position(|&v| v == j).map(|k| k + self.offset)
    }

    pub fn ncols(&self) -> usize {
        self.z.ncols()
    }
}

/// What is being tested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Single(usize),
    Group(Vec<usize>),
}

/// Everything needed to test one target after one selection.
#[derive(Debug, Clone)]
pub struct CarveTask<'a> {
    /// Selection event; `event.split` must describe the real split.
    pub event: &'a SelectionEvent,
    pub submodel: &'a Submodel,
    /// Response on all rows.
    pub y: &'a DVector<f64>,
    pub target: Target,
    pub sigma: f64,
    pub view: View,
    pub chain: ChainConfig,
}

impl CarveTask<'_> {
    fn sign_of(&self, j: usize) -> Result<f64> {
        let k = self
            .event
            .support()
            .iter()
            .position(|&v| v == j)
            .ok_or_else(|| Error::Validation(format!("variable {j} is not in the selected set")))?;
        Ok(self.event.signs()[k])
    }

    fn position(&self, j: usize) -> Result<usize> {
        self.submodel
            .position(j)
            .ok_or_else(|| Error::Validation(format!("variable {j} is not in the submodel")))
    }
}

/// Null law of a linear statistic in the selected view, ready to sample.
#[derive(Debug, Clone)]
pub struct SelectedNull {
    pub state: ConstrainedGaussianState,
    /// The statistic is `slope . z + offset` in whitened coordinates.
    pub slope: DVector<f64>,
    pub offset: f64,
    pub observed: f64,
}

impl SelectedNull {
    /// Add-one smoothed right-tail Monte-Carlo p-value.
    pub fn right_tail(&self, chain: &ChainConfig, side: Side) -> Result<PValue> {
        let tc = tail_count(&self.state, &self.slope, self.offset, self.observed, chain)?;
        Ok(PValue {
            value: tc.pvalue(),
            side,
            n_samples_used: tc.total,
            mc_se: tc.mc_se(),
            diagnostics: Some(tc.diagnostics),
        })
    }
}

/// Null law of `w . beta_full` with the coefficients in `tested` set to zero,
/// conditioning on the remaining submodel scores and the selection event.
pub fn prepare_selected(task: &CarveTask<'_>, tested: &[usize], w: &DVector<f64>) -> Result<SelectedNull> {
    let split = &task.event.split;
    let sys = carve_transform(&task.submodel.z, task.y, split, &task.event.a, &task.event.b, tested, task.sigma)?;
    let law = condition_on_linear(&sys.law, &sys.eq_c, &sys.eq_d)?;
    let state = whiten(&law, &sys.ineq_a, &sys.ineq_b, &sys.observed)?;
    let g = sys.statistic(w);
    let (slope, offset) = state.pullback(&g);
    let observed = slope.dot(&state.origin) + offset;
    Ok(SelectedNull { state, slope, offset, observed })
}

/// One-sided selected-view p-value for a single coefficient; the tail
/// follows the sign of its Lasso estimate.
pub fn carve_pvalue_selected(task: &CarveTask<'_>) -> Result<PValue> {
    let Target::Single(j) = task.target else {
        return Err(Error::Validation("single-variable test needs a single target".into()));
    };
    let sign = task.sign_of(j)?;
    let pos = task.position(j)?;
    let mut w = DVector::zeros(task.submodel.ncols());
    w[pos] = sign;
    let null = prepare_selected(task, &[pos], &w)?;
    null.right_tail(&task.chain, if sign > 0.0 { Side::Right } else { Side::Left })
}

/// Selected-view group test with the directed sum of the selected group
/// members' coefficients. A group with no selected member gets 1.
pub fn group_pvalue(task: &CarveTask<'_>) -> Result<PValue> {
    let group = match &task.target {
        Target::Group(g) => g.clone(),
        Target::Single(j) => vec![*j],
    };
    let mut tested = Vec::new();
    let mut w = DVector::zeros(task.submodel.ncols());
    for &j in &group {
        if let Some(pos) = task.submodel.position(j) {
            if !tested.contains(&pos) {
                tested.push(pos);
                w[pos] = task.sign_of(j)?;
            }
        }
    }
    if tested.is_empty() {
        return Ok(PValue::exact(1.0, Side::Right));
    }
    let null = prepare_selected(task, &tested, &w)?;
    null.right_tail(&task.chain, Side::Right)
}

/// Exact law of `eta . Y` in the saturated view: `N(mean, sd^2)` truncated
/// to `[lower, upper]`, observed at `stat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturatedNull {
    pub stat: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl SaturatedNull {
    /// `P(T >= stat)` for `T` with mean `c`.
    pub fn right_at(&self, c: f64) -> f64 {
        truncated_sf((self.stat - c) / self.sd, (self.lower - c) / self.sd, (self.upper - c) / self.sd)
    }

    /// `P(T <= stat)` for `T` with mean `c`.
    pub fn left_at(&self, c: f64) -> f64 {
        truncated_cdf((self.stat - c) / self.sd, (self.lower - c) / self.sd, (self.upper - c) / self.sd)
    }

    /// `2 min(right, left)`, capped at 1.
    pub fn two_sided_at(&self, c: f64) -> f64 {
        (2.0 * self.right_at(c).min(self.left_at(c))).min(1.0)
    }
}

/// Truncated law of the least-squares coefficient of variable `j` in the
/// submodel, holding the orthogonal complement of its direction fixed.
pub fn prepare_saturated(task: &CarveTask<'_>, j: usize) -> Result<SaturatedNull> {
    if !(task.sigma > 0.0 && task.sigma.is_finite()) {
        return Err(Error::DegenerateSigma(task.sigma));
    }
    let pos = task.position(j)?;
    let z = &task.submodel.z;
    let n = z.nrows();
    let eta = LeastSquares::new(z)?.pinv().row(pos).transpose();
    let split = &task.event.split;
    let a1 = &task.event.a;
    let mut a = DMatrix::zeros(a1.nrows(), n);
    for (k, &row) in split.selection_idx.iter().enumerate() {
        a.set_column(row, &a1.column(k));
    }
    let (lower, upper) = truncated_interval(&eta, &a, &task.event.b, task.y)?;
    let stat = eta.dot(task.y);
    let sd = task.sigma * eta.norm();
    if !(upper - lower > 1e-12 * sd) {
        return Err(Error::DegenerateTruncation { lower, upper });
    }
    Ok(SaturatedNull { stat, sd, lower, upper })
}

/// Exact one-sided saturated-view p-value for a single coefficient.
pub fn carve_pvalue_saturated(task: &CarveTask<'_>) -> Result<PValue> {
    let Target::Single(j) = task.target else {
        return Err(Error::Validation("single-variable test needs a single target".into()));
    };
    let sign = task.sign_of(j)?;
    let null = prepare_saturated(task, j)?;
    Ok(if sign > 0.0 {
        PValue::exact(null.right_at(0.0), Side::Right)
    } else {
        PValue::exact(null.left_at(0.0), Side::Left)
    })
}

/// Dispatch on the task's view and target.
pub fn carve_pvalue(task: &CarveTask<'_>) -> Result<PValue> {
    match (&task.target, task.view) {
        (Target::Group(_), View::Saturated) => {
            Err(Error::Validation("group tests are only available in the selected view".into()))
        }
        (Target::Group(_), View::Selected) => group_pvalue(task),
        (Target::Single(_), View::Selected) => carve_pvalue_selected(task),
        (Target::Single(_), View::Saturated) => carve_pvalue_saturated(task),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bonferroni() {
        assert!((bonferroni_adjust(0.01, 5) - 0.05).abs() < 1e-15);
        assert_eq!(bonferroni_adjust(0.5, 3), 1.0);
        assert_eq!(bonferroni_adjust(0.01, 0), 1.0);
    }

    #[test]
    fn saturated_symmetry() {
        let null = SaturatedNull { stat: 0.0, sd: 2.0, lower: f64::NEG_INFINITY, upper: f64::INFINITY };
        assert!((null.right_at(0.0) - 0.5).abs() < 1e-15);
        assert!((null.two_sided_at(0.0) - 1.0).abs() < 1e-15);
        // two-sided at stat +- 1.96 sd is 0.05
        assert!((null.two_sided_at(2.0 * 1.959963984540054) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn submodel_positions() {
        let x = DMatrix::from_fn(5, 4, |i, j| (i * 4 + j) as f64);
        let ones = DVector::from_element(5, 1.0);
        let sm = Submodel::new(&x, &[1, 3], Some(&ones));
        assert_eq!(sm.ncols(), 3);
        assert_eq!(sm.position(3), Some(2));
        assert_eq!(sm.position(0), None);
        assert_eq!(sm.z[(2, 2)], x[(2, 3)]);
        assert_eq!(sm.z[(4, 0)], 1.0);
    }
}
