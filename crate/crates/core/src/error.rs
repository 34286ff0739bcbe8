use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LlsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LlsError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("pattern does not conform to schema: {0}")]
    SchemaMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("row {row}, column {column}: category {value} outside 1..={max}")]
    CategoryOutOfRange {
        row: usize,
        column: usize,
        value: i64,
        max: u16,
    },

    #[error("no rows")]
    NoRows,

    #[error("moment missing for required pattern {0}")]
    MissingMoment(String),

    #[error("completion bound violated: 2K + 2p - 1 = {lhs} > n = {n} (K = {k}, p = {p})")]
    CompletionBound { k: usize, p: usize, n: usize, lhs: usize },

    #[error("no nondegenerate minor for masked entry (row {row}, column {col}); best condition number {condition:e}")]
    DegenerateMinor { row: usize, col: usize, condition: f64 },

    #[error("no fully defined submatrix available")]
    NoDefinedSubmatrix,

    #[error("alternating least squares did not converge in {iterations} iterations (objective {objective:e})")]
    NotConverged { iterations: usize, objective: f64 },

    #[error("rank {k} exceeds the {available} available rows")]
    RankTooLarge { k: usize, available: usize },

    #[error("affine slice of the fitted span is empty")]
    EmptyAffineSlice,

    #[error("unobserved condition: M = 0 for pattern {0}")]
    UnobservedCondition(String),

    #[error(
        "underdetermined system for pattern {pattern}: rank {rank} below {k} unknowns (l(pattern) - p = {capacity})"
    )]
    Underdetermined {
        pattern: String,
        rank: usize,
        k: usize,
        capacity: usize,
    },

    #[error("dependency moment unavailable: pattern {pattern}, order {order}")]
    MissingDependency { pattern: String, order: String },

    #[error("pattern family does not cover the data: {uncovered} individuals uncovered")]
    NotExhaustive { uncovered: u64 },

    #[error("mixing distribution has no finite support; discretize it first")]
    NonFiniteSupport,

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("model not identifiable: K = {k} exceeds bound {bound}")]
    NotIdentifiable { k: usize, bound: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
