use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("invalid attribute name `{name}`: {reason}")]
    InvalidAttribute { name: String, reason: &'static str },

    #[error("itemset width {got} does not match universe size {expected}")]
    WidthMismatch { got: usize, expected: usize },

    #[error("rule slots (plus, minus, context) must be pairwise disjoint")]
    OverlappingSlots,

    #[error("rule preference sides must be non-empty")]
    EmptySide,

    #[error("cannot parse rule text `{0}`")]
    InvalidRuleText(String),

    #[error("preference pair references unknown transaction id {0}")]
    DanglingPair(u64),

    #[error("a preference pair must relate two distinct transactions")]
    SelfPair,

    #[error("transaction rating must be finite")]
    InvalidRating,

    #[error("operation requires a non-empty preference database")]
    EmptyDatabase,

    #[error("ruleset must contain at least {needed} rules, got {got}")]
    TooFewRules { needed: usize, got: usize },

    #[error("ruleset must be non-empty")]
    EmptyRuleset,

    #[error("belief system must be non-empty")]
    EmptySystem,

    #[error("correlation belief requires at least 2 preference pairs, got {0}")]
    DatabaseTooSmall(usize),

    #[error("rule has no set bits; cosine norm undefined")]
    ZeroNorm,

    #[error("attribute universes do not match")]
    UniverseMismatch,

    #[error("transaction id {0} is bound to two different transactions")]
    ConflictingTransaction(u64),

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("ratings reference item `{0}` absent from the items source")]
    UnknownItem(String),

    #[error("unknown belief function `{0}` (expected `cos` or `cov`)")]
    UnknownBeliefFunction(String),

    #[error("invalid parameter for belief function `{function}`: {reason}")]
    InvalidBeliefParameter { function: String, reason: String },

    #[error("missing artifact for stage `{stage}`: {path}")]
    MissingArtifact { stage: String, path: String },

    #[error("artifact schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },

    #[error("user `{0}` is missing from the evaluation split")]
    MissingSplit(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
