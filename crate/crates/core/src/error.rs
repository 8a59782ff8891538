use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("trackbook contains no phrases")]
    EmptyTrackbook,
    #[error("duplicate trackbook phrase {phrase:?} on line {line}")]
    DuplicatePhrase { phrase: String, line: usize },
    #[error("cannot build a vocabulary from an empty sentence list")]
    EmptyInput,
    #[error("token length {0} is below the minimum of 3")]
    TokenLength(usize),
    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("token sequence has no EOS")]
    MissingEos,
    #[error("token length {len} exceeds the encoder maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("frame size {height}x{width} is not a multiple of 32")]
    FrameSize { height: usize, width: usize },
    #[error("frame {got} presented after frame {last}")]
    OutOfOrder { last: u32, got: u32 },
    #[error("invalid tracker config: {0}")]
    TrackerConfig(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("unknown context source {0:?}")]
    UnknownSource(String),
    #[error("container: {0}")]
    Container(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
