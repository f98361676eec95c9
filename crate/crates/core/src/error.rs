use thiserror::Error;

pub type Result<T> = std::result::Result<T, MtfsError>;

#[derive(Debug, Error)]
pub enum MtfsError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("unsupported penalty mode for {0}")]
    UnsupportedMode(String),

    #[error("divergence: non-finite objective at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("line search failed after {shrinks} step reductions")]
    StepFailure { shrinks: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<MtfsError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MtfsError {
    /// True for failures of the numerical routines (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            MtfsError::Divergence { .. } | MtfsError::StepFailure { .. } => true,
            MtfsError::Context { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn context(self, context: impl Into<String>) -> MtfsError {
        MtfsError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            MtfsError::Schema(_) => "schema",
            MtfsError::InvalidRow { .. } | MtfsError::Validation(_) => "validation",
            MtfsError::EmptyInput(_) => "empty_input",
            MtfsError::EmptyResult(_) => "empty_result",
            MtfsError::DimensionMismatch { .. } => "dimension_mismatch",
            MtfsError::UnsupportedMode(_) => "unsupported_mode",
            MtfsError::Divergence { .. } => "divergence",
            MtfsError::StepFailure { .. } => "step_failure",
            MtfsError::DegenerateLabels(_) => "degenerate_labels",
            MtfsError::Context { source, .. } => source.kind(),
            MtfsError::Io(_) => "io",
            MtfsError::Csv(_) => "csv",
            MtfsError::Json(_) => "json",
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize, context: &str) -> Result<()> {
    if expected != got {
        return Err(MtfsError::DimensionMismatch {
            expected,
            got,
            context: context.to_string(),
        });
    }
    Ok(())
}
