//! Logistic regression: penalized IRLS and the weighted-data carving transform.

pub mod carve;
pub mod irls;

pub use carve::{carve_logistic, logistic_carving_data};
pub use irls::{irls_logistic_lasso, IrlsOptions, IrlsState};
