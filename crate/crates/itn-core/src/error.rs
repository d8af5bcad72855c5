use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum ItnError {
    #[error("unknown word for rewrite: ({word}, {class})")]
    UnknownWord { word: String, class: String },

    #[error("malformed {kind} entity {raw:?}: {reason}")]
    MalformedEntity {
        kind: String,
        raw: String,
        reason: String,
    },

    #[error("no rewrite rule matches {kind} canonical form {canonical:?}")]
    NoRuleMatch { kind: String, canonical: String },

    #[error("unbalanced {region} markers at token {index}")]
    UnbalancedMarkers { region: String, index: usize },

    #[error("cardinal run cannot compose: {0}")]
    MalformedNumberRun(String),

    #[error("trace incomplete: token {index} ({word:?}) inside an entity has no provenance")]
    TraceIncomplete { index: usize, word: String },

    #[error("grammar error: {0}")]
    Grammar(String),

    #[error("grammar rule graph contains a cycle: {0}")]
    GrammarCycle(String),

    #[error("lexicon error at line {line}: {reason}")]
    Lexicon { line: usize, reason: String },

    #[error("pattern config error at line {line}: {reason}")]
    PatternConfig { line: usize, reason: String },

    #[error("vocabulary too small: need at least {needed} pieces, got {requested}")]
    VocabTooSmall { needed: usize, requested: usize },

    #[error("piece id {id} out of range (vocab size {vocab})")]
    IdOutOfRange { id: u32, vocab: usize },

    #[error("labels not aligned to pieces: {0}")]
    AlignmentMismatch(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("diversity undefined: zero written-form entities")]
    ZeroWrittenEntities,

    #[error("label file error at line {line}: {reason}")]
    LabelFile { line: usize, reason: String },

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ItnError>;
