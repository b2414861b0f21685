use std::io;
use std::path::PathBuf;

use freqdehaze_core::CoreError;

use crate::checkpoint::Checkpoint;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// What went wrong inside an image file, beyond plain I/O.
#[derive(Debug)]
pub enum ImageFault {
    /// The extension (or the header) names a format this tool does not read.
    Unsupported(String),
    /// The file ends before the pixel data it promises.
    Truncated(String),
    /// The bytes do not parse as the format they claim to be.
    Malformed(String),
}

impl std::fmt::Display for ImageFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ImageFault::Unsupported(d) => write!(f, "unsupported format: {d}"),
            ImageFault::Truncated(d) => write!(f, "truncated: {d}"),
            ImageFault::Malformed(d) => write!(f, "malformed: {d}"),
        }
    }
}

/// Checkpoint file corruption, classified so callers can tell a wrong file
/// apart from a damaged one.
#[derive(Debug, PartialEq, Eq)]
pub enum CkptFault {
    /// The first four bytes are not the checkpoint magic.
    BadMagic,
    /// Right magic, wrong format version.
    Version { got: u32, want: u32 },
    /// The file ends inside the named tensor's record.
    Truncated { tensor: String },
    /// Structurally invalid beyond the above.
    Malformed { detail: String },
}

impl std::fmt::Display for CkptFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CkptFault::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CkptFault::Version { got, want } => {
                write!(f, "checkpoint format version {got} (this build reads {want})")
            }
            CkptFault::Truncated { tensor } => {
                write!(f, "truncated inside tensor {tensor}")
            }
            CkptFault::Malformed { detail } => write!(f, "malformed checkpoint: {detail}"),
        }
    }
}

/// Everything the toolkit can fail with. The variant decides the process
/// exit code: usage errors exit 1, data errors 2, numeric failures 3 and
/// I/O failures 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {fault}", path.display())]
    Image { path: PathBuf, fault: ImageFault },

    #[error("{}:{line}: {detail}", origin.display())]
    Config {
        origin: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("{}: {fault}", path.display())]
    Ckpt { path: PathBuf, fault: CkptFault },

    #[error("{detail}")]
    Data { detail: String },

    #[error("{detail}")]
    Usage { detail: String },

    #[error("{detail}")]
    Numeric { detail: String },

    /// Training hit a non-finite loss or gradient. The checkpoint from the
    /// last completed epoch rides along so the caller can persist it.
    #[error("non-finite loss at epoch {epoch}, step {step}; training aborted")]
    NumericAbort {
        epoch: usize,
        step: usize,
        last_good: Box<Checkpoint>,
    },
}

impl Error {
    pub fn data(detail: impl Into<String>) -> Self {
        Error::Data {
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage { .. } => 1,
            Error::Core(CoreError::NonFinite { .. })
            | Error::Numeric { .. }
            | Error::NumericAbort { .. } => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
