use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("deflection {0}° outside hard limit ±{1}°")]
    DeflectionOutOfRange(f64, f64),
    #[error("action delta {0} is not in the configured action set")]
    UnknownActionDelta(f64),
    #[error("action index {0} out of range ({1} actions)")]
    ActionIndexOutOfRange(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate gust: |mean baseline lift change| = {0} N is below the division guard")]
    DegenerateGust(f64),
    #[error("empty settling window")]
    EmptyWindow,
    #[error("non-finite loss during update: {0}")]
    NonFiniteLoss(String),
    #[error("bad magic bytes in policy file")]
    BadMagic,
    #[error("unsupported policy file version {0}")]
    VersionMismatch(u32),
    #[error("policy file truncated")]
    Truncated,
    #[error("policy file checksum mismatch")]
    ChecksumMismatch,
    #[error("policy spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("insufficient clusters in group {0}")]
    InsufficientClusters(String),
    #[error("training diverged at episode {0}: {1}")]
    TrainingDiverged(usize, String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
