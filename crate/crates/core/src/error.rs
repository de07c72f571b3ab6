use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("token {token} out of range for vocab_size {vocab}")]
    TokenOutOfRange { token: u32, vocab: u32 },

    #[error("BOS token {bos} inside document {doc}")]
    BosInDocument { bos: u32, doc: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty document at index {0}")]
    EmptyDocument(usize),

    #[error("invalid chunking config: {0}")]
    InvalidChunking(String),

    #[error("window length {n} out of range (1..={max})")]
    WindowLength { n: usize, max: usize },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("mask not enabled: {0}")]
    MaskNotEnabled(String),

    #[error("invalid pattern: {0}")]
    InvalidPattern(String),

    #[error("store config error: {0}")]
    StoreConfig(String),

    #[error("store config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("checksum mismatch (file corrupted)")]
    ChecksumMismatch,

    #[error("invalid sigma string: {0}")]
    InvalidSigma(String),

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("context of length {len} shorter than rule depth {depth}")]
    ContextTooShort { len: usize, depth: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("argmax undefined: residual {residual} exceeds maximum explicit entry {max_entry}")]
    ArgmaxContract { max_entry: f64, residual: f64 },

    #[error("need at least two distributions, got {0}")]
    TooFewRuns(usize),

    #[error("no rule applicable (empty store or missing unigram table)")]
    NoRuleDefined,

    #[error("prediction schema error: {0}")]
    Schema(String),

    #[error("duplicate position run={run} step={step} limit={limit:?} seq={seq} off={off}")]
    DuplicatePosition {
        run: u32,
        step: u64,
        limit: Option<u32>,
        seq: u64,
        off: u64,
    },

    #[error("empty prediction group: {0}")]
    EmptyGroup(String),

    #[error("invalid teacher config: {0}")]
    InvalidTeacher(String),

    #[error("missing prediction for context {0}")]
    MissingPrediction(String),

    #[error("evaluation context sets differ across checkpoints: {0}")]
    ContextSetMismatch(String),

    #[error("position gap in sequence records at offset {0}")]
    PositionGap(u64),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("loss series error: {0}")]
    LossSeries(String),
}

pub type Result<T> = std::result::Result<T, Error>;
