//! Surrogate modeling for expensive computer experiments.
//!
//! The centerpiece is a composite Gaussian process: a smooth global trend
//! plus a rougher local process whose variance follows the data, so that a
//! single model can track surfaces whose activity varies across the input
//! space. Stationary kriging variants (ordinary, universal, nugget) are
//! included as baselines, along with space-filling designs, a benchmark
//! harness over standard test functions, and versioned model archives.

pub mod bench;
pub mod cgp;
pub mod design;
mod error;
pub mod estimate;
pub mod kernels;
pub mod kriging;
pub mod persistence;
mod types;

pub use error::{Error, Result};
pub use types::{normal_quantile_two_sided, Dataset, Prediction, StandardizationMap};
