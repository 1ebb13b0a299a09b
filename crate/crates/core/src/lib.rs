//! Closed-form spectral precision estimation for many variables and few samples.
//!
//! The pipeline is: load a [`DataMatrix`], take its thin SVD into a
//! [`SpectralBasis`], then map the spectrum through the Riccati or Tikhonov
//! solution to get a [`LowRankPrecision`] in factored form `A·diag(d)·Aᵀ + c·I`.
//! All fast-path operations run in O(N·T²) time and O(N·T) memory.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod persist;
pub mod precision;
pub mod sparsify;
pub mod spectral;
pub mod spiked;

pub use dataset::{CsvOptions, DataMatrix, Orientation};
pub use error::{Error, ErrorClass, Result};
pub use precision::{Certification, Edge, LowRankPrecision, Screening};
pub use sparsify::{SparseFactor, SparsifyReport, ThresholdMode};
pub use spectral::{EigenBounds, Method, RegularizationPath, SpectralBasis};
pub use spiked::{EntryDist, FactoredCovariance, ScenarioConfig, SpikedModel};
