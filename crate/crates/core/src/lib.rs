//! Identification of planar quadratic dynamics from two-species
//! concentration time series.
//!
//! The crate covers the full pipeline:
//!
//! 1. [`dataset`] — long-format CSV ingestion, uniform-grid validation,
//!    window extraction.
//! 2. [`preprocess`] — standardization, Gaussian smoothing, modified-Akima
//!    spline refinement, backward-difference derivatives.
//! 3. [`regression`] — quadratic feature library, exhaustive best-subset
//!    selection scored by information criteria, and a LASSO baseline.
//! 4. [`ode`] — a TR-BDF2 integrator with a derivative-magnitude guard, and
//!    rank-ordered model selection that discards dynamically infeasible fits.
//! 5. [`sweep`] — smoothing-strength sweeps scored by reconstruction RMSE
//!    with a min-max rule across species.
//! 6. [`stability`] — critical points of the fitted system via polynomial
//!    resultants, with linear stability classification.
//! 7. [`embedding`] — average-mutual-information lag selection, delay
//!    embedding, and orthogonal-transform alignment of reconstructed states.
//! 8. [`synth`] — a three-species photochemical kinetics generator for
//!    ground-truth experiments.
//! 9. [`plot`] — dependency-free SVG charts for series and phase portraits.

pub mod dataset;
pub mod embedding;
pub mod ode;
pub mod plot;
pub mod preprocess;
pub mod regression;
pub mod stability;
pub mod sweep;
pub mod synth;

pub use dataset::{RawSeries, SpeciesId, StationDataset, StationId, TimeWindow};
pub use ode::{IntegratorConfig, QuadraticModel, SelectedModel, Trajectory};
pub use preprocess::{NormalizedSeries, ProcessedSeries, SmoothingFactor};
pub use regression::{Criterion, FeatureLibrary, ModelRanking, RegressionFit, SubsetMask};
pub use stability::{CriticalPoint, StabilityClass, StabilityReport};
pub use sweep::{AlphaGrid, FitOutcome, FitStatus, SweepConfig, SweepReport};
pub use synth::{SourceModel, SyntheticSpec};
