//! Selective inference after Lasso selection: data carving, multicarving over
//! random splits, group tests, confidence intervals, and logistic carving.

pub mod carve;
pub mod data;
pub mod error;
pub mod gauss;
pub mod glm;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod multi;
pub mod select;
pub mod selftest;
pub mod sim;

pub use data::{Dataset, Family, SplitPlan};
pub use error::{Error, Result};
