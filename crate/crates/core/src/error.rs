use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid BIO in sentence {sentence} at position {position}: {msg}")]
    Bio { sentence: String, position: usize, msg: String },

    #[error("overlapping spans {first} and {second}")]
    Overlap { first: String, second: String },

    #[error("length mismatch in sentence {sentence}: {msg}")]
    Length { sentence: String, msg: String },

    #[error("tree parse error: {0}")]
    Tree(String),

    #[error("tree does not align with sentence at token {index}: {msg}")]
    Alignment { index: usize, msg: String },

    #[error("record {record}: field `{field}`: {msg}")]
    Schema { record: usize, field: String, msg: String },

    #[error("invalid trigger: {0}")]
    Trigger(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to bad configuration or runtime failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Bio { .. }
                | Error::Overlap { .. }
                | Error::Length { .. }
                | Error::Tree(_)
                | Error::Alignment { .. }
                | Error::Schema { .. }
                | Error::Trigger(_)
                | Error::Input(_)
                | Error::Json(_)
        )
    }
}
