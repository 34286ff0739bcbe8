//! Linear latent structure analysis for categorical response data.

pub mod error;
pub mod ingest;
pub mod linalg;
pub mod lp;
pub mod mixing;
pub mod moment_matrix;
pub mod moments;
pub mod pattern;
pub mod pipeline;
pub mod scalar;
pub mod simulator;
pub mod solver;
pub mod subspace;

pub use error::{LlsError, Result};
pub use ingest::{read_csv, Dataset, FrequencyTable, PairCounts};
pub use mixing::{histogram, wasserstein1_1d, Distribution1D, Histogram1D};
pub use moment_matrix::{build_moment_matrix, complete_matrix, computational_rank};
pub use moments::{ExactMoments, MomentSource};
pub use pattern::{Level, Pattern, Schema};
pub use pipeline::{estimate, evaluate, rank_scan, EstimateOptions};
pub use scalar::Real;
pub use solver::{solve_expectations, solve_higher_moments, Averaging, MomentOrder, SolverOptions};
pub use subspace::{check_identifiability, fit_subspace, IdentifiabilityVerdict};

/// Double-precision instances of the generic types.
pub type Basis = subspace::Subspace<f64>;
pub type MomentTable = ExactMoments<f64>;
pub type Matrix = moment_matrix::MomentMatrix<f64>;
pub type Mixing = mixing::MixingEstimate<f64>;
pub type Conditional = solver::ConditionalMoments<f64>;
pub type Estimated = pipeline::Estimate<f64>;
