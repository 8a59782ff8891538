//! Clip sampling and clip-consistent augmentation.

use std::collections::HashSet;

use ltrack_core::losses::GtTarget;
use ltrack_core::model::TrainFrame;
use ltrack_core::perception::{Bbox, ImageFrame};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::SynthSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub frames: Vec<ImageFrame>,
    pub targets: Vec<Vec<GtTarget>>,
    /// Name of the source sequence.
    pub source: String,
    pub stride: usize,
}

impl ClipSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_train_frames(&self) -> Vec<TrainFrame> {
        self.frames
            .iter()
            .zip(&self.targets)
            .map(|(frame, targets)| TrainFrame {
                frame: frame.clone(),
                targets: targets.clone(),
            })
            .collect()
    }
}

/// Sets `newborn` exactly on each id's first frame within the clip.
pub fn mark_newborn(targets: &mut [Vec<GtTarget>]) {
    let mut seen = HashSet::new();
    for frame in targets {
        for t in frame {
            t.newborn = seen.insert(t.id);
        }
    }
}

/// `clip_len` frames at one stride drawn uniformly from `interval`, capped
/// at the largest stride that fits the sequence.
pub fn sample_clip<R: Rng>(seq: &SynthSequence, clip_len: usize, interval: [usize; 2], rng: &mut R) -> Result<ClipSample> {
    let n = seq.len();
    let clip_len = clip_len.max(1);
    let needed = (clip_len - 1) * interval[0].max(1) + 1;
    if n < needed {
        return Err(Error::SequenceTooShort {
            len: n,
            clip_len,
            needed,
        });
    }
    let max_fit = if clip_len > 1 { (n - 1) / (clip_len - 1) } else { interval[1] };
    let hi = interval[1].min(max_fit).max(interval[0].max(1));
    let stride = rng.random_range(interval[0].max(1)..=hi);
    let span = (clip_len - 1) * stride;
    let start = rng.random_range(0..n - span);
    let idx: Vec<usize> = (0..clip_len).map(|k| start + k * stride).collect();
    let mut targets: Vec<Vec<GtTarget>> = idx.iter().map(|&t| seq.targets(t)).collect();
    mark_newborn(&mut targets);
    Ok(ClipSample {
        frames: idx.iter().map(|&t| seq.frames[t].clone()).collect(),
        targets,
        source: seq.info.name.clone(),
        stride,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRect {
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

/// Boxes keeping less than this share of their area are dropped.
pub const MIN_RETENTION: f64 = 0.25;

pub fn flip_frame(f: &ImageFrame) -> ImageFrame {
    let (h, w) = (f.height(), f.width());
    let src = f.pixels();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (d, s) = ((y * w + x) * 3, (y * w + (w - 1 - x)) * 3);
            out[d..d + 3].copy_from_slice(&src[s..s + 3]);
        }
    }
    ImageFrame::new(h, w, out, f.frame_index).expect("same size")
}

pub fn flip_clip(clip: &ClipSample) -> ClipSample {
    ClipSample {
        frames: clip.frames.iter().map(flip_frame).collect(),
        targets: clip
            .targets
            .iter()
            .map(|ts| {
                ts.iter()
                    .map(|t| GtTarget {
                        bbox: Bbox { cx: 1.0 - t.bbox.cx, ..t.bbox },
                        ..*t
                    })
                    .collect()
            })
            .collect(),
        ..clip.clone()
    }
}

/// Nearest-neighbour resample of the crop back to the full frame size.
pub fn crop_frame(f: &ImageFrame, c: &CropRect) -> ImageFrame {
    let (h, w) = (f.height(), f.width());
    let src = f.pixels();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        let sy = c.top + (y * c.height) / h;
        for x in 0..w {
            let sx = c.left + (x * c.width) / w;
            let (d, s) = ((y * w + x) * 3, (sy * w + sx) * 3);
            out[d..d + 3].copy_from_slice(&src[s..s + 3]);
        }
    }
    ImageFrame::new(h, w, out, f.frame_index).expect("same size")
}

/// Maps a normalised box into the crop's coordinates, or `None` when less
/// than [`MIN_RETENTION`] of its area survives.
pub fn crop_box(b: &Bbox, c: &CropRect, frame_w: usize, frame_h: usize) -> Option<Bbox> {
    let (x0, y0, x1, y1) = b.corners();
    let cx0 = c.left as f64 / frame_w as f64;
    let cy0 = c.top as f64 / frame_h as f64;
    let cx1 = (c.left + c.width) as f64 / frame_w as f64;
    let cy1 = (c.top + c.height) as f64 / frame_h as f64;
    let (nx0, ny0, nx1, ny1) = (x0.max(cx0), y0.max(cy0), x1.min(cx1), y1.min(cy1));
    if nx1 <= nx0 || ny1 <= ny0 {
        return None;
    }
    let kept = (nx1 - nx0) * (ny1 - ny0);
    if kept < MIN_RETENTION * b.area() {
        return None;
    }
    let (sw, sh) = (cx1 - cx0, cy1 - cy0);
    Some(Bbox::from_corners(
        (nx0 - cx0) / sw,
        (ny0 - cy0) / sh,
        (nx1 - cx0) / sw,
        (ny1 - cy0) / sh,
    ))
}

pub fn crop_clip(clip: &ClipSample, c: &CropRect) -> ClipSample {
    let (w, h) = (clip.frames[0].width(), clip.frames[0].height());
    let mut targets: Vec<Vec<GtTarget>> = clip
        .targets
        .iter()
        .map(|ts| {
            ts.iter()
                .filter_map(|t| crop_box(&t.bbox, c, w, h).map(|bbox| GtTarget { bbox, ..*t }))
                .collect()
        })
        .collect();
    mark_newborn(&mut targets);
    ClipSample {
        frames: clip.frames.iter().map(|f| crop_frame(f, c)).collect(),
        targets,
        ..clip.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip: bool,
    pub crop: bool,
    /// Smallest crop side as a fraction of the frame side.
    pub min_crop: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            crop: true,
            min_crop: 0.7,
        }
    }
}

/// One random flip (p = 0.5) and one random crop shared by every frame.
pub fn augment<R: Rng>(clip: &ClipSample, cfg: &AugmentConfig, rng: &mut R) -> ClipSample {
    let mut out = clip.clone();
    if cfg.flip && rng.random_bool(0.5) {
        out = flip_clip(&out);
    }
    if cfg.crop && !out.is_empty() {
        let (w, h) = (out.frames[0].width(), out.frames[0].height());
        let cw = rng.random_range(((cfg.min_crop * w as f64).ceil() as usize).clamp(1, w)..=w);
        let ch = rng.random_range(((cfg.min_crop * h as f64).ceil() as usize).clamp(1, h)..=h);
        let c = CropRect {
            left: rng.random_range(0..=w - cw),
            top: rng.random_range(0..=h - ch),
            width: cw,
            height: ch,
        };
        out = crop_clip(&out, &c);
    }
    out
}
