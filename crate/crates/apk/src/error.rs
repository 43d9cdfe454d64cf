use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApkError {
    #[error("{path}: cannot read file: {message}")]
    Io { path: String, message: String },
    #[error("not a zip archive: {0}")]
    NotAZip(String),
    #[error("archive has no `{0}` entry")]
    MissingEntry(String),
    #[error("cannot read archive entry `{entry}`: {message}")]
    Entry { entry: String, message: String },
    #[error("malformed binary XML at byte {offset}: {reason}")]
    MalformedChunk { offset: usize, reason: String },
    #[error("application label is a resource reference (0x{0:08x})")]
    LabelIsResourceRef(u32),
    #[error("bad DEX header: {0}")]
    BadDexHeader(String),
    #[error("DEX string {index} out of bounds (offset {offset})")]
    StringOutOfBounds { index: usize, offset: usize },
    #[error("malformed DEX at byte {offset}: {reason}")]
    MalformedDex { offset: usize, reason: String },
    #[error("no classes*.dex entry in archive")]
    NoDex,
    #[error("permission-API map line {line}: {reason}")]
    MapFormat { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, ApkError>;
