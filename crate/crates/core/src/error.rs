use thiserror::Error;

/// Errors produced anywhere in the laboratory pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),

    #[error("scene {scene_id} cannot ground a {category} question: {reason}")]
    UnsupportedCategory {
        scene_id: String,
        category: String,
        reason: String,
    },

    #[error("malformed evidence atom: {0}")]
    MalformedAtom(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("permuted question does not carry the same option contents: {0}")]
    PermutationMismatch(String),

    #[error("category {0} has no samples in the evaluation set")]
    EmptyCategory(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checksum mismatch in {path}: expected {expected}, found {found}")]
    Checksum {
        path: String,
        expected: String,
        found: String,
    },

    #[error("unsupported {what} format version {found} (expected {expected})")]
    FormatVersion {
        what: String,
        found: u32,
        expected: u32,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
