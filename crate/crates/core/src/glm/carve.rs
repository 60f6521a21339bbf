//! Carving data for the logistic model.
//!
//! After the penalized IRLS fit on the selection rows, the weighted
//! response `y_w = sqrt(W) y_adj` behaves like `N(X_w beta, I)`. Weights on
//! the inference rows come from the same selection-stage fit so that the
//! polyhedron and the statistic refer to one linear model.

use nalgebra::{DMatrix, DVector};

use crate::carve::Submodel;
use crate::error::{Error, Result};
use crate::glm::irls::working_response;
use crate::select::SelectionEvent;

/// Weighted submodel design and response on all rows for the split behind
/// `event`. With an intercept the first column is `sqrt(w)`.
pub fn logistic_carving_data(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    event: &SelectionEvent,
    intercept: bool,
) -> Result<(Submodel, DVector<f64>)> {
    let (n, p) = x.shape();
    if y.len() != n || event.coef.len() != p {
        return Err(Error::Validation("logistic carving: dimensions disagree".into()));
    }
    let beta = DVector::from_column_slice(&event.coef);
    let eta = (x * beta).add_scalar(event.intercept.unwrap_or(0.0));
    let (_, w, y_adj) = working_response(y, &eta);
    let sw = DVector::from_iterator(n, w.iter().map(|v| v.sqrt()));
    let mut xw = x.clone();
    for i in 0..n {
        xw.row_mut(i).scale_mut(sw[i]);
    }
    let yw = DVector::from_iterator(n, (0..n).map(|i| sw[i] * y_adj[i]));
    let lead = intercept.then_some(&sw);
    Ok((Submodel::new(&xw, event.support(), lead), yw))
}

/// Multicarving for a binary response: selection by penalized IRLS on each
/// split, carving on the weighted adjusted response with unit variance.
pub fn carve_logistic(
    data: &crate::data::Dataset,
    cfg: &crate::multi::MulticarveConfig,
) -> Result<crate::multi::InferenceReport> {
    if data.family != crate::data::Family::Binomial || cfg.family != crate::data::Family::Binomial {
        return Err(Error::Validation("logistic carving needs binomial data and configuration".into()));
    }
    crate::multi::multicarve(data, cfg)
}
