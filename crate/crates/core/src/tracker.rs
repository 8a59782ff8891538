//! Online track-query lifecycle: spawn, keep-alive, retirement, emission.

use ltrack_metrics::{Detection, Sequence};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::{Bbox, ImageFrame, QueryKind, QueryOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Consecutive misses after which a track is retired.
    pub n_m: u32,
    pub tau_spawn: f64,
    pub tau_keep: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            n_m: 5,
            tau_spawn: 0.7,
            tau_keep: 0.6,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_m < 1 {
            return Err(Error::TrackerConfig("n_m must be at least 1".into()));
        }
        if !(0.0 < self.tau_keep && self.tau_keep <= self.tau_spawn && self.tau_spawn < 1.0) {
            return Err(Error::TrackerConfig(format!(
                "need 0 < tau_keep ({}) <= tau_spawn ({}) < 1",
                self.tau_keep, self.tau_spawn
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackState {
    Active,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackQuery {
    pub id: u32,
    pub embedding: Vec<f64>,
    pub last_box: Bbox,
    pub score: f64,
    pub miss_count: u32,
    pub age: u32,
    pub state: TrackState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub id: u32,
    pub bbox: Bbox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_index: u32,
    pub rows: Vec<ResultRow>,
}

/// Anything that maps a frame and the live track queries to detect outputs
/// followed by exactly one output per track query, in order.
pub trait FrameModel {
    fn infer(&mut self, frame: &ImageFrame, tracks: &[TrackQuery]) -> Result<Vec<QueryOutput>>;
}

pub fn spawn(detect: &QueryOutput, id: u32) -> TrackQuery {
    TrackQuery {
        id,
        embedding: detect.embedding.clone(),
        last_box: detect.bbox,
        score: detect.score,
        miss_count: 0,
        age: 0,
        state: TrackState::Active,
    }
}

/// Applies one frame's output to a track; `None` means retired.
pub fn update_lifecycle(mut track: TrackQuery, out: &QueryOutput, config: &TrackerConfig) -> Option<TrackQuery> {
    track.age += 1;
    track.score = out.score;
    if out.score >= config.tau_keep {
        track.miss_count = 0;
        track.state = TrackState::Active;
        track.last_box = out.bbox;
        track.embedding = out.embedding.clone();
        Some(track)
    } else {
        track.miss_count += 1;
        track.state = TrackState::Missing;
        (track.miss_count < config.n_m).then_some(track)
    }
}

#[derive(Debug, Clone)]
pub struct Tracker {
    pub config: TrackerConfig,
    tracks: Vec<TrackQuery>,
    next_id: u32,
    last_frame: Option<u32>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    /// Live track queries, active or missing, in id order.
    pub fn tracks(&self) -> &[TrackQuery] {
        &self.tracks
    }

    pub fn step<M: FrameModel + ?Sized>(&mut self, frame: &ImageFrame, model: &mut M) -> Result<FrameResult> {
        if let Some(last) = self.last_frame {
            if frame.frame_index <= last {
                return Err(Error::OutOfOrder {
                    last,
                    got: frame.frame_index,
                });
            }
        }
        let outs = model.infer(frame, &self.tracks)?;
        let m = self.tracks.len();
        let n_detect = outs.len().checked_sub(m).ok_or_else(|| {
            Error::Shape(format!("{} outputs for {m} track queries", outs.len()))
        })?;
        let (detect, tracked) = outs.split_at(n_detect);
        assert!(
            detect.iter().all(|o| o.kind == QueryKind::Detect) && tracked.iter().all(|o| o.kind == QueryKind::Track),
            "model must return detect outputs followed by one output per track query"
        );

        let previous = std::mem::take(&mut self.tracks);
        let mut next: Vec<TrackQuery> = previous
            .into_iter()
            .zip(tracked)
            .filter_map(|(t, o)| update_lifecycle(t, o, &self.config))
            .collect();
        for o in detect.iter().filter(|o| o.score >= self.config.tau_spawn) {
            next.push(spawn(o, self.next_id));
            self.next_id += 1;
        }
        self.tracks = next;
        self.last_frame = Some(frame.frame_index);

        let rows = self
            .tracks
            .iter()
            .filter(|t| t.state == TrackState::Active)
            .map(|t| ResultRow {
                id: t.id,
                bbox: t.last_box,
                score: t.score,
            })
            .collect();
        Ok(FrameResult {
            frame_index: frame.frame_index,
            rows,
        })
    }
}

pub fn run_sequence<M: FrameModel + ?Sized>(
    frames: &[ImageFrame],
    config: TrackerConfig,
    model: &mut M,
) -> Result<Vec<FrameResult>> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut tracker = Tracker::new(config)?;
    frames.iter().map(|f| tracker.step(f, model)).collect()
}

/// Converts results to a pixel-space sequence for evaluation or MOT output.
pub fn to_sequence(results: &[FrameResult], width: usize, height: usize) -> Sequence {
    let n = results.iter().map(|r| r.frame_index as usize).max().unwrap_or(0);
    let mut seq = Sequence::with_len(n);
    for r in results {
        for row in &r.rows {
            seq.push(
                r.frame_index as usize,
                Detection::with_conf(row.id, row.bbox.to_rect(width, height), row.score),
            )
            .expect("ids are unique within a frame");
        }
    }
    seq
}

/// A [`FrameModel`] driven by a closure, for exercising the lifecycle
/// without a network. The closure returns detect scores and one score per
/// live track.
pub struct ScriptedModel<F> {
    script: F,
}

impl<F> ScriptedModel<F>
where
    F: FnMut(u32, &[TrackQuery]) -> (Vec<f64>, Vec<f64>),
{
    pub fn new(script: F) -> Self {
        Self { script }
    }
}

impl<F> FrameModel for ScriptedModel<F>
where
    F: FnMut(u32, &[TrackQuery]) -> (Vec<f64>, Vec<f64>),
{
    fn infer(&mut self, frame: &ImageFrame, tracks: &[TrackQuery]) -> Result<Vec<QueryOutput>> {
        let (det, trk) = (self.script)(frame.frame_index, tracks);
        assert_eq!(trk.len(), tracks.len(), "one score per track");
        let out = |kind, score, i: usize| QueryOutput {
            kind,
            embedding: vec![i as f64],
            score,
            bbox: Bbox::new(0.5, 0.5, 0.1, 0.1),
        };
        Ok(det
            .iter()
            .enumerate()
            .map(|(i, &s)| out(QueryKind::Detect, s, i))
            .chain(trk.iter().enumerate().map(|(i, &s)| out(QueryKind::Track, s, i)))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(i: u32) -> ImageFrame {
        ImageFrame::new(32, 32, vec![0.0; 32 * 32 * 3], i).unwrap()
    }

    fn frames(n: u32) -> Vec<ImageFrame> {
        (1..=n).map(frame).collect()
    }

    #[test]
    fn first_frame_spawns_confident_detections_in_order() {
        let mut model = ScriptedModel::new(|f, t: &[TrackQuery]| {
            if f == 1 {
                (vec![0.9, 0.2, 0.7, 0.69], vec![])
            } else {
                (vec![], vec![0.9; t.len()])
            }
        });
        let res = run_sequence(&frames(2), TrackerConfig::default(), &mut model).unwrap();
        let ids: Vec<u32> = res[0].rows.iter().map(|r| r.id).collect();
        assert_eq!(ids, [1, 2]);
        assert_eq!(res[1].rows.len(), 2);
    }

    #[test]
    fn retirement_after_n_m_misses_and_reset() {
        let cfg = TrackerConfig::default();
        let low4_then_high = [0.9, 0.1, 0.1, 0.1, 0.1, 0.9, 0.1];
        let mut model = ScriptedModel::new(|f, t: &[TrackQuery]| {
            if f == 1 {
                (vec![0.9], vec![])
            } else {
                (vec![], vec![low4_then_high[f as usize - 1]; t.len()])
            }
        });
        let mut tracker = Tracker::new(cfg).unwrap();
        for f in 1..=7 {
            let r = tracker.step(&frame(f), &mut model).unwrap();
            let live = tracker.tracks().len();
            assert_eq!(live, 1, "frame {f}");
            match f {
                2..=5 => {
                    assert!(r.rows.is_empty());
                    assert_eq!(tracker.tracks()[0].miss_count, f - 1);
                }
                6 => assert_eq!(tracker.tracks()[0].miss_count, 0),
                _ => {}
            }
        }

        let mut model = ScriptedModel::new(|f, t: &[TrackQuery]| {
            if f == 1 {
                (vec![0.9], vec![])
            } else {
                (vec![], vec![0.1; t.len()])
            }
        });
        let mut tracker = Tracker::new(cfg).unwrap();
        for f in 1..=6 {
            tracker.step(&frame(f), &mut model).unwrap();
            assert_eq!(tracker.tracks().len(), usize::from(f < 6), "frame {f}");
        }
    }

    #[test]
    fn thresholds_are_inclusive() {
        let cfg = TrackerConfig::default();
        let mut model = ScriptedModel::new(|f, t: &[TrackQuery]| {
            if f == 1 {
                (vec![0.7], vec![])
            } else {
                (vec![], vec![0.6; t.len()])
            }
        });
        let res = run_sequence(&frames(3), cfg, &mut model).unwrap();
        assert!(res.iter().all(|r| r.rows.len() == 1));
    }

    #[test]
    fn out_of_order_and_empty_inputs() {
        let mut model = ScriptedModel::new(|_, t: &[TrackQuery]| (vec![0.0], vec![0.0; t.len()]));
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        tracker.step(&frame(3), &mut model).unwrap();
        assert!(matches!(tracker.step(&frame(3), &mut model), Err(Error::OutOfOrder { .. })));
        assert!(matches!(
            run_sequence(&[], TrackerConfig::default(), &mut model),
            Err(Error::EmptySequence)
        ));
        let res = run_sequence(&frames(4), TrackerConfig::default(), &mut model).unwrap();
        assert!(res.iter().all(|r| r.rows.is_empty()));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            TrackerConfig { n_m: 0, ..Default::default() },
            TrackerConfig { tau_keep: 0.8, ..Default::default() },
            TrackerConfig { tau_spawn: 1.0, ..Default::default() },
            TrackerConfig { tau_keep: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(Tracker::new(c).is_err(), "{c:?}");
        }
    }
}
