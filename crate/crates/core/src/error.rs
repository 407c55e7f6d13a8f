use renormlab_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),

    #[error("degenerate supervision: {0}")]
    DegenerateSupervision(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("point behind camera (depth {0})")]
    BehindCamera(f64),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checksum mismatch for {what}: expected {expected}, found {found}")]
    Checksum {
        what: String,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("toml decode: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml encode: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
