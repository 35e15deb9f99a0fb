use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("map parse error at row {row}, column {col}: unknown glyph {glyph:?}")]
    UnknownGlyph { row: usize, col: usize, glyph: char },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("policy undefined at state {0}")]
    PolicyUndefined(usize),

    #[error("negative penalty {value} at state {state}, action {action}")]
    NegativePenalty { state: usize, action: usize, value: f64 },

    #[error("k = {k} exceeds the number of distinct feature vectors; the maximum valid k is {max}")]
    TooManyClusters { k: usize, max: usize },

    #[error("cannot sample {n} critical states from {clusters} clusters: need n >= clusters")]
    TooFewCriticalStates { n: usize, clusters: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("malformed response at item {item}: {reason}")]
    MalformedResponse { item: usize, reason: String },

    #[error("unknown method `{name}`; valid methods: {valid}")]
    UnknownMethod { name: String, valid: String },

    #[error("method `ri` is not available: reward inference with rationality modelling is an external baseline and is not implemented here")]
    UnsupportedMethod,

    #[error("session {0} is exhausted")]
    SessionExhausted(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("unsupported model format: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
