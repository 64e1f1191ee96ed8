use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` declared in the schema is missing")]
    MissingColumn(String),
    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    UnparseableValue { column: String, row: usize, value: String },
    #[error("row {row}: unknown level `{level}` in column `{column}`")]
    UnknownLevel { column: String, row: usize, level: String },
    #[error("row {row}: missing value in column `{column}`")]
    MissingValue { column: String, row: usize },
    #[error("no rows left: {0}")]
    EmptyResult(String),
    #[error("row {row}: sampling weight {value} is not positive and finite")]
    InvalidWeight { row: usize, value: f64 },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("empty variable selection")]
    EmptySelection,
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("perfect separation detected in {0} (max |coefficient| {1:.3e})")]
    Separation(String, f64),
    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("entropy balancing targets infeasible: {0}")]
    Infeasible(String),
    #[error("all candidate features are constant")]
    DegenerateFeatures,
    #[error("only one membership class is present")]
    PureClass,
    #[error("probability {0} is not strictly inside (0, 1); trim first")]
    BoundaryProbability(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("the proposed variance needs a logistic-family weight model, got {0}")]
    UnsupportedForProposedVariance(String),
    #[error("estimated weights too extreme (max/min ratio {0:.3e})")]
    ExtremeWeights(f64),
    #[error("need at least {needed} successful replicates, have {have}")]
    NotEnoughReplicates { needed: usize, have: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
            Error::InvalidSchema(_) => "InvalidSchema",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::MissingColumn(_) => "MissingColumn",
            Error::UnparseableValue { .. } => "UnparseableValue",
            Error::UnknownLevel { .. } => "UnknownLevel",
            Error::MissingValue { .. } => "MissingValue",
            Error::EmptyResult(_) => "EmptyResult",
            Error::InvalidWeight { .. } => "InvalidWeight",
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::EmptySelection => "EmptySelection",
            Error::RankDeficient(_) => "RankDeficient",
            Error::Separation(..) => "Separation",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::Singular(_) => "Singular",
            Error::Infeasible(_) => "Infeasible",
            Error::DegenerateFeatures => "DegenerateFeatures",
            Error::PureClass => "PureClass",
            Error::BoundaryProbability(_) => "BoundaryProbability",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::UnsupportedForProposedVariance(_) => "UnsupportedForProposedVariance",
            Error::ExtremeWeights(_) => "ExtremeWeights",
            Error::NotEnoughReplicates { .. } => "NotEnoughReplicates",
            Error::NonFinite(_) => "NonFinite",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
