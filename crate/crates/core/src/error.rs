use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("attention weight {index} is negative or non-finite")]
    InvalidAttention { index: usize },

    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNormRow { row: usize },

    #[error("patch matrix must have at least one row and one column")]
    EmptyMatrix,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("k-means needs at least {k} points, got {points}")]
    TooFewPoints { points: usize, k: usize },

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("code {code} out of range for codebook of size {k}")]
    CodeOutOfRange { code: usize, k: usize },

    #[error("code {code} does not fit in {bits} bits")]
    CodeOverflow { code: u32, bits: u8 },

    #[error("bits per code mismatch: expected {expected}, found {found}")]
    BitsMismatch { expected: u8, found: u8 },

    #[error("index is empty")]
    EmptyIndex,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("document was quantized with a different codebook")]
    CodebookMismatch,

    #[error("duplicate document id {0}")]
    DuplicateDocId(u64),

    #[error("bad magic at byte offset {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: u64,
        expected: String,
        found: String,
    },

    #[error("unsupported format version {version} at byte offset {offset}")]
    VersionUnsupported { version: u16, offset: u64 },

    #[error("file truncated at byte offset {offset}")]
    TruncatedFile { offset: u64 },

    #[error("checksum mismatch in section {section:?}")]
    ChecksumMismatch { section: String },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("query {query} has no relevant documents")]
    NoRelevantDocs { query: String },

    #[error(
        "query ids differ between run and qrels (missing from run: {missing_in_run:?}; missing from qrels: {missing_in_qrels:?})"
    )]
    MismatchedQueries {
        missing_in_run: Vec<String>,
        missing_in_qrels: Vec<String>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input (parameters, identifiers,
    /// fixtures) rather than by a failure while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::TooFewPoints { .. }
                | Error::DimensionMismatch { .. }
                | Error::MismatchedQueries { .. }
                | Error::Parse { .. }
                | Error::EmptyCorpus
        )
    }
}
