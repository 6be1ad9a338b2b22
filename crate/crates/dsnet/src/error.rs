use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: truncated at byte {offset} (records are {record} bytes)", path.display())]
    Truncated { path: PathBuf, offset: u64, record: usize },
    #[error("{}: expected {expected} records, found {got}", path.display())]
    CountMismatch { path: PathBuf, expected: usize, got: usize },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("frames differ between ground truth and predictions: {0}")]
    FrameMismatch(String),
    #[error(transparent)]
    Core(#[from] dsnet_core::Error),
}
