//! Crate-wide error type. Display strings lead with the error name so the
//! CLI can report failures by the name of the operation contract that broke.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("NotPositiveDefinite: factorization pivot {pivot:e} at column {column} is at or below the {floor:e} floor")]
    NotPositiveDefinite {
        column: usize,
        pivot: f64,
        floor: f64,
    },

    #[error("RankCollapse: removal leverage q = {q} would make the scatter singular")]
    RankCollapse { q: f64 },

    #[error("DegenerateCentering: centering factor r = {r} puts all remaining mass on the mean direction")]
    DegenerateCentering { r: f64 },

    #[error("EmptyInput: no usable data rows")]
    EmptyInput,

    #[error("DuplicateRowId: row id {0:?} appears more than once")]
    DuplicateRowId(String),

    #[error("NoCovariateColumns: the header declares an id column but no covariates")]
    NoCovariateColumns,

    #[error("ConstantColumn: covariate {0:?} has no variation to standardize away")]
    ConstantColumn(String),

    #[error("AlreadyStandardized: the table has already been standardized")]
    AlreadyStandardized,

    #[error("NonPositiveDefiniteCorrelation: the requested correlation matrix is not positive definite")]
    NonPositiveDefiniteCorrelation,

    #[error("UnknownId: row id {0:?} is not present in the table")]
    UnknownId(String),

    #[error("UnstandardizedTable: this operation requires a standardized table")]
    UnstandardizedTable,

    #[error("SingularInformation: the Fisher information matrix is singular")]
    SingularInformation,

    #[error("SampleTooSmall: {size} rows cannot identify {params} parameters")]
    SampleTooSmall { size: usize, params: usize },

    #[error("SampleTooLarge: sample size {size} exceeds the table's {rows} rows")]
    SampleTooLarge { size: usize, rows: usize },

    #[error("SingularScatter: the sample covariance of the selection is singular")]
    SingularScatter,

    #[error("DegenerateSelection: the selection cannot support a nonsingular sample covariance")]
    DegenerateSelection,

    #[error("SingularInitialScatter: X'X over the full table is singular")]
    SingularInitialScatter,

    #[error("AllCandidatesCollapseRank: every candidate removal leaves a singular scatter")]
    AllCandidatesCollapseRank,

    #[error("TargetTooLarge: target size {target} exceeds the table's {rows} rows")]
    TargetTooLarge { target: usize, rows: usize },

    #[error("OddSelectionSize: {0} rows cannot be split into equal halves")]
    OddSelectionSize(usize),

    #[error("InvalidAllocation: {0}")]
    InvalidAllocation(String),

    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error("Io: {0}")]
    Io(#[from] std::io::Error),

    #[error("Csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("Json: {0}")]
    Json(#[from] serde_json::Error),
}
