use thiserror::Error;

pub type Result<T> = std::result::Result<T, NpmmError>;

#[derive(Debug, Error)]
pub enum NpmmError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): {detail}")]
    TrainingDiverged {
        epoch: usize,
        learning_rate: f64,
        detail: String,
    },

    #[error("model/data incompatibility: {0}")]
    Incompatible(String),

    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl NpmmError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        NpmmError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
