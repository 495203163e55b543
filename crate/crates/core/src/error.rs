use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("image size mismatch for `{id}`: {detail}")]
    SizeMismatch { id: String, detail: String },
    #[error("channel mismatch: model expects {expected} channel(s), got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("non-finite loss during {stage} training at epoch {epoch}")]
    NonFiniteLoss { stage: &'static str, epoch: usize },
    #[error("insufficient pool: need {needed} items, have {available}")]
    InsufficientPool { needed: usize, available: usize },
    #[error("could not place object {index} after {attempts} attempts")]
    PlacementFailed { index: usize, attempts: usize },
    #[error("thermal profile has no entry for {0}")]
    MissingProfileEntry(String),
    #[error("missing ground truth for `{0}`")]
    MissingGroundTruth(String),
    #[error("id sets differ: {0}")]
    IdMismatch(String),
    #[error("model is untrained")]
    Untrained,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}` expects {expected} values, got {got}")]
    ParameterLength { name: String, expected: usize, got: usize },
}
