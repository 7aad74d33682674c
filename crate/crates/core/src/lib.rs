pub mod baselines;
pub mod dataset;
pub mod diff;
pub mod error;
pub mod library;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod pipeline;
pub mod pruner;
pub mod regression;
pub mod sampling;
pub mod simulate;

pub use dataset::{load_dataset, save_dataset, BoundaryKind, Dataset, Field, UniformAxis};
pub use error::{Error, Result};
