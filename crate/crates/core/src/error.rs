use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("enumeration too large: {count} sequences exceeds the cap of {cap}")]
    EnumerationTooLarge { count: u128, cap: usize },

    #[error("token {token} is out of range for a vocabulary of size {vocab}")]
    InvalidToken { token: u32, vocab: usize },

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("unknown task family `{0}` (expected lookup, parity or multi-answer)")]
    UnknownFamily(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("rollout {index} is missing old-policy log-probabilities")]
    MissingOldLogprobs { index: usize },

    #[error("policies disagree on layout: {0}")]
    LayoutMismatch(String),

    #[error("probability mass {mass} does not sum to one (tolerance {tol:e})")]
    MassNotConserved { mass: f64, tol: f64 },

    #[error("character {0:?} is not in the tokenizer alphabet")]
    OutOfAlphabet(char),

    #[error("invalid tokenizer: {0}")]
    InvalidTokenizer(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),
}
