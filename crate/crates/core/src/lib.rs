//! Multivariate Hawkes point processes.
//!
//! - [`kernels`]: kernel families, norms, Laplace transforms, stability.
//! - [`model`]: baseline + kernel matrix + transfer + marks, and the text spec format.
//! - [`analytics`]: mean intensity, covariance, causality, prediction, diffusion limits.
//! - [`simulate`]: thinning, time-change and cluster samplers.
//! - [`estimate`]: likelihood, MLE, EM, Wiener–Hopf, contrast, moments, variance ratio, goodness of fit.
//! - [`finance`]: price paths, signature plots, Epps covariation, reflexivity, impact curves.
//! - [`ingest`]: labelled event-file ingestion.

pub mod analytics;
pub mod estimate;
pub mod error;
pub mod events;
pub mod finance;
pub mod ingest;
pub mod kernels;
pub mod model;
pub mod numerics;
pub mod simulate;

pub use error::{ErrorClass, HawkesError, Result};
pub use events::{EventSequence, Genealogy};
pub use kernels::{Kernel, KernelMatrix, StabilityReport};
pub use model::{HawkesModel, MarkImpact, MarkLaw, MarkSpec, Transfer};
pub use simulate::{Algorithm, SimConfig, Simulation};
