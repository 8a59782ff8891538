use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::rect::Rect;
use crate::{Error, Result};

/// One box of one identity in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: u32,
    pub rect: Rect,
    pub conf: f64,
}

impl Detection {
    pub fn new(id: u32, rect: Rect) -> Self {
        Self { id, rect, conf: 1.0 }
    }

    pub fn with_conf(id: u32, rect: Rect, conf: f64) -> Self {
        Self { id, rect, conf }
    }
}

/// Per-frame boxes for a whole sequence. Frames are 1-indexed and contiguous;
/// `frames[0]` holds frame 1. Within a frame detections are kept sorted by id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sequence {
    frames: Vec<Vec<Detection>>,
}

pub type GtSequence = Sequence;
pub type ResSequence = Sequence;

impl Sequence {
    pub fn with_len(num_frames: usize) -> Self {
        Self {
            frames: vec![Vec::new(); num_frames],
        }
    }

    /// Builds a sequence, validating ids and sorting each frame by id.
    pub fn from_frames(frames: Vec<Vec<Detection>>) -> Result<Self> {
        let mut seq = Self { frames };
        for (t, frame) in seq.frames.iter_mut().enumerate() {
            let mut seen = HashSet::new();
            for d in frame.iter() {
                if d.id == 0 {
                    return Err(Error::InvalidId { frame: t + 1 });
                }
                if !seen.insert(d.id) {
                    return Err(Error::DuplicateId {
                        frame: t + 1,
                        id: d.id,
                    });
                }
            }
            frame.sort_by_key(|d| d.id);
        }
        Ok(seq)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Detections in 1-indexed frame `t`; empty for frames past the end.
    pub fn frame(&self, t: usize) -> &[Detection] {
        assert!(t >= 1, "frames are 1-indexed");
        self.frames.get(t - 1).map_or(&[], Vec::as_slice)
    }

    pub fn frames(&self) -> &[Vec<Detection>] {
        &self.frames
    }

    /// Inserts a detection into frame `t`, growing the sequence if needed.
    pub fn push(&mut self, t: usize, det: Detection) -> Result<()> {
        assert!(t >= 1, "frames are 1-indexed");
        if det.id == 0 {
            return Err(Error::InvalidId { frame: t });
        }
        if self.frames.len() < t {
            self.frames.resize(t, Vec::new());
        }
        let frame = &mut self.frames[t - 1];
        match frame.binary_search_by_key(&det.id, |d| d.id) {
            Ok(_) => Err(Error::DuplicateId { frame: t, id: det.id }),
            Err(pos) => {
                frame.insert(pos, det);
                Ok(())
            }
        }
    }

    /// Pads with empty frames up to `num_frames`.
    pub fn extend_to(&mut self, num_frames: usize) {
        if self.frames.len() < num_frames {
            self.frames.resize(num_frames, Vec::new());
        }
    }

    pub fn num_detections(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .frames
            .iter()
            .flat_map(|f| f.iter().map(|d| d.id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Dense index over the ids appearing in a sequence.
pub(crate) struct IdIndex {
    ids: Vec<u32>,
}

impl IdIndex {
    pub(crate) fn new(seq: &Sequence) -> Self {
        Self { ids: seq.ids() }
    }

    pub(crate) fn len(&self) -> usize {
        self.ids.len()
    }

    pub(crate) fn index(&self, id: u32) -> usize {
        self.ids.binary_search(&id).expect("id indexed")
    }
}

/// IoU matrix between two frames' detections (gt rows, result columns).
pub(crate) fn similarity(gt: &[Detection], res: &[Detection]) -> Vec<Vec<f64>> {
    gt.iter()
        .map(|g| res.iter().map(|r| crate::rect::iou(&g.rect, &r.rect)).collect())
        .collect()
}
