use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unbalanced panel: missing (unit, time) cells {}", format_cells(.missing))]
    UnbalancedPanel { missing: Vec<(String, String)> },

    #[error("duplicate cell for unit `{unit}` at time `{time}`")]
    DuplicateCell { unit: String, time: String },

    #[error("non-finite value in row {row}, column `{column}`")]
    NonFiniteValue { row: usize, column: String },

    #[error("column `{column}` is flagged time-only but varies across units at time `{time}`")]
    TimeVaryingColumnViolation { column: String, time: String },

    #[error("regressor `{column}` is (near-)constant; the intercept is absorbed by g")]
    ConstantRegressor { column: String },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate scale: sample standard deviation is zero")]
    DegenerateScale,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient local data for the local-linear fit{}", format_row(.row))]
    InsufficientLocalData { row: Option<usize> },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("zero variance: every kernel-weighted residual product vanishes (V_NT = {v_nt})")]
    ZeroVariance { v_nt: f64 },

    #[error("grid point {point} lies outside the observed range of w in coordinate {coord}")]
    GridOutsideHull { point: usize, coord: usize },

    #[error("{failed} of {total} bootstrap or Monte Carlo replications failed (limit 5%): {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
}

impl Error {
    /// True for errors caused by malformed input or configuration, as opposed
    /// to numerical failures during estimation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::UnbalancedPanel { .. }
                | Error::DuplicateCell { .. }
                | Error::NonFiniteValue { .. }
                | Error::TimeVaryingColumnViolation { .. }
                | Error::ConstantRegressor { .. }
                | Error::Csv(_)
                | Error::Io(_)
                | Error::IndexOutOfRange { .. }
                | Error::DimensionMismatch { .. }
                | Error::DegenerateScale
                | Error::InvalidArgument(_)
                | Error::GridOutsideHull { .. }
        )
    }

    /// Short variant name, used in CLI messages and FFI error strings.
    pub fn name(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::UnbalancedPanel { .. } => "UnbalancedPanel",
            Error::DuplicateCell { .. } => "DuplicateCell",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::TimeVaryingColumnViolation { .. } => "TimeVaryingColumnViolation",
            Error::ConstantRegressor { .. } => "ConstantRegressor",
            Error::Csv(_) => "Csv",
            Error::Io(_) => "Io",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::DegenerateScale => "DegenerateScale",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::InsufficientLocalData { .. } => "InsufficientLocalData",
            Error::SingularDesign(_) => "SingularDesign",
            Error::ZeroVariance { .. } => "ZeroVariance",
            Error::GridOutsideHull { .. } => "GridOutsideHull",
            Error::TooManyFailures { .. } => "TooManyFailures",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

fn format_cells(cells: &[(String, String)]) -> String {
    const SHOWN: usize = 10;
    let mut s: Vec<String> = cells.iter().take(SHOWN).map(|(u, t)| format!("({u}, {t})")).collect();
    if cells.len() > SHOWN {
        s.push(format!("... and {} more", cells.len() - SHOWN));
    }
    s.join(", ")
}

fn format_row(row: &Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}
