use thiserror::Error;

/// Errors raised across the estimation and forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(
        "estimation failed: {message} (best objective {best_value}, gradient norm {grad_norm:.3e})"
    )]
    Estimation {
        message: String,
        best_point: Vec<f64>,
        best_value: f64,
        grad_norm: f64,
    },

    #[error("{failed} of {total} bootstrap replicates failed")]
    Replicates { failed: usize, total: usize },

    #[error("refused: {0}")]
    Refused(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Wrap an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
