//! Multi-object tracking evaluation.
//!
//! Implements the HOTA family (HOTA, DetA, AssA) and the CLEAR-MOT / identity
//! metrics (MOTA, IDS, IDF1) over sequences of axis-aligned boxes, plus a
//! reader and writer for the MOTChallenge text format.

pub mod assignment;
pub mod clear;
pub mod hota;
pub mod identity;
pub mod mot;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod rect;
pub mod report;
pub mod sequence;

pub use assignment::{hungarian, Assignment};
pub use clear::{clear_mot, ClearMot};
pub use hota::{hota, HotaResult, ALPHAS};
pub use identity::{idf1, IdentityScores};
pub use mot::{format_mot, parse_mot, read_mot, write_mot};
pub use rect::{iou, Rect};
pub use report::{evaluate, MetricsReport};
pub use sequence::{Detection, GtSequence, ResSequence, Sequence};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ground truth contains no boxes; metric is undefined")]
    EmptyGroundTruth,
    #[error("frame {frame}: id must be positive")]
    InvalidId { frame: usize },
    #[error("frame {frame}: duplicate id {id}")]
    DuplicateId { frame: usize, id: u32 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
