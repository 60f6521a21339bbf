//! Gaussian laws under linear equality and inequality constraints: exact
//! conditioning, reduced carving coordinates, whitening, hit-and-run
//! sampling, and univariate truncated normals.

pub mod constrained;
pub mod hit_and_run;
pub mod law;
pub mod transform;
pub mod truncnorm;

pub use constrained::{truncated_interval, whiten, ConstrainedGaussianState};
pub use hit_and_run::{hit_and_run, run_chain, tail_count, ChainConfig, ChainDiagnostics, EarlyAbort, TailCount};
pub use law::{condition_on_linear, GaussianLaw};
pub use transform::{carve_transform, CarveSystem, Coordinates};
pub use truncnorm::{sample_truncated_std_normal, truncated_sf};
