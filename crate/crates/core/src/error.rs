use std::path::PathBuf;

use crate::hardneg::NegativeStrategy;
use crate::taxonomy::AtypicalityCategory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // taxonomy
    #[error("category {0} has no statement template")]
    NoTemplateForNA(AtypicalityCategory),
    #[error("invalid object name {0:?}")]
    InvalidObjectName(String),
    #[error("no atypicality category recognized in {0:?}")]
    UnrecognizedCategoryText(String),
    #[error("taxonomy resource: {0}")]
    TaxonomyResource(String),

    // corpus
    #[error("schema error on line {line}, field `{field}`: {message}")]
    SchemaError {
        line: usize,
        field: String,
        message: String,
    },
    #[error("duplicate image_id {image_id:?} on line {line}")]
    DuplicateImageId { image_id: String, line: usize },
    #[error("record {image_id:?} (line {line}) has atypical labels but lacks distinct primary/secondary objects")]
    MissingObjectsForAtypical { image_id: String, line: usize },
    #[error("record {0:?} has no atypical annotation")]
    NoAtypicalAnnotation(String),
    #[error("subset of {requested} requested but only {available} records match the filter")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("unknown image_id {0:?}")]
    UnknownImageId(String),

    // statements
    #[error("need at least 2 objects to build candidate statements, got {0}")]
    NoCandidates(usize),
    #[error("only {available} distractor records available for image {image_id:?}, need {needed}")]
    InsufficientDistractors {
        image_id: String,
        needed: usize,
        available: usize,
    },

    // hard negatives
    #[error("no negatives available for image {0:?}")]
    NoNegatives(String),
    #[error("generated negative failed validation after {attempts} attempts for strategy {strategy}")]
    ValidationFailedAfterRetries {
        strategy: NegativeStrategy,
        attempts: usize,
    },
    #[error("judgment references unknown option id {0:?}")]
    UnknownOptionId(String),

    // backends
    #[error("transport error after {attempts} attempt(s) on backend {backend_id}: {message}")]
    TransportError {
        backend_id: String,
        attempts: usize,
        message: String,
    },
    #[error("rate limited by backend {0}")]
    RateLimited(String),
    #[error("backend {0} does not accept image attachments")]
    ImageUnsupported(String),
    #[error("credential environment variable {env_var} for backend {backend_id} is unset")]
    AuthMissing { backend_id: String, env_var: String },
    #[error("backend {backend_id}: {message}")]
    BackendError { backend_id: String, message: String },
    #[error("unknown backend id {0:?}")]
    UnknownBackend(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("corrupt cache entry at {0}")]
    CacheCorrupt(PathBuf),

    // verbalizer / tasks
    #[error("record {0:?} has no image_path")]
    ImageMissing(String),
    #[error("variant {variant} needs field {field}")]
    MissingField {
        variant: &'static str,
        field: &'static str,
    },
    #[error("could not parse a choice among {options} options from {response:?}")]
    UnparseableChoice { response: String, options: usize },
    #[error("could not parse primary/secondary objects from {0:?}")]
    UnparseableFill(String),
    #[error("task mismatch: {0}")]
    TaskMismatch(String),

    // metrics
    #[error("length mismatch: {left} predictions vs {right} references")]
    LengthMismatch { left: usize, right: usize },

    // config / prompts
    #[error("prompt catalog: {0}")]
    PromptCatalog(String),
    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn backend(backend_id: &str, message: impl Into<String>) -> Self {
        Error::BackendError {
            backend_id: backend_id.to_string(),
            message: message.into(),
        }
    }

    /// Usage, configuration and schema problems. The CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::SchemaError { .. }
                | Error::DuplicateImageId { .. }
                | Error::MissingObjectsForAtypical { .. }
                | Error::SubsetTooLarge { .. }
                | Error::UnknownBackend(_)
                | Error::PromptCatalog(_)
                | Error::Config(_)
                | Error::TaxonomyResource(_)
                | Error::UnknownOptionId(_)
                | Error::LengthMismatch { .. }
                | Error::Io { .. }
        )
    }

    /// Errors that abort a whole pipeline run instead of being recorded per record.
    pub fn is_fatal(&self) -> bool {
        matches!(self, Error::AuthMissing { .. } | Error::UnknownBackend(_))
    }
}
