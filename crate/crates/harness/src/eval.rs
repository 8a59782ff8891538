//! Online tracking over sequences and metric evaluation.

use std::fs;
use std::path::Path;

use ltrack_core::model::LTrack;
use ltrack_core::tracker::{run_sequence, to_sequence, FrameResult, TrackerConfig};
use ltrack_metrics::{evaluate, read_mot, write_mot, Detection, MetricsReport, Sequence};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::SynthSequence;

/// Tracks one sequence and returns the result in pixel coordinates.
pub fn track_sequence(model: &LTrack, seq: &SynthSequence, tracker: TrackerConfig) -> Result<Sequence> {
    let results: Vec<FrameResult> = run_sequence(&seq.frames, tracker, &mut &*model)?;
    let mut out = to_sequence(&results, seq.info.width, seq.info.height);
    out.extend_to(seq.len());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub name: String,
    pub metrics: MetricsReport,
}

/// Per-sequence metrics plus one combined score over all sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceScore>,
    pub combined: MetricsReport,
}

/// Joins sequences end to end into one, offsetting ids so that identities
/// from different sequences never collide.
pub fn concatenate(parts: &[Sequence]) -> Sequence {
    let mut frames: Vec<Vec<Detection>> = Vec::new();
    let mut offset = 0u32;
    for seq in parts {
        let mut max_id = 0;
        for f in seq.frames() {
            frames.push(
                f.iter()
                    .map(|d| {
                        max_id = max_id.max(d.id);
                        Detection { id: d.id + offset, ..*d }
                    })
                    .collect(),
            );
        }
        offset += max_id;
    }
    Sequence::from_frames(frames).expect("offset ids stay unique")
}

/// Scores results against ground truth, sequence by sequence and combined.
/// The combined score concatenates sequences; see [`concatenate`].
pub fn score(names: &[String], gts: &[Sequence], results: &[Sequence]) -> Result<EvalReport> {
    if gts.is_empty() {
        return Err(Error::NoData("no evaluation sequences".into()));
    }
    if names.len() != gts.len() || results.len() != gts.len() {
        return Err(Error::NoData(format!(
            "{} names, {} ground truths and {} results",
            names.len(),
            gts.len(),
            results.len()
        )));
    }
    let mut sequences = Vec::new();
    let mut padded = Vec::new();
    for ((name, gt), res) in names.iter().zip(gts).zip(results) {
        let mut res = res.clone();
        res.extend_to(gt.num_frames());
        if res.num_frames() > gt.num_frames() {
            return Err(Error::NoData(format!("{name}: result is longer than the ground truth")));
        }
        sequences.push(SequenceScore {
            name: name.clone(),
            metrics: evaluate(gt, &res)?,
        });
        padded.push(res);
    }
    let combined = evaluate(&concatenate(gts), &concatenate(&padded))?;
    Ok(EvalReport { sequences, combined })
}

/// Tracks and scores every sequence.
pub fn evaluate_model(model: &LTrack, seqs: &[SynthSequence], tracker: TrackerConfig) -> Result<(EvalReport, Vec<Sequence>)> {
    let results: Vec<Sequence> = seqs
        .iter()
        .map(|s| track_sequence(model, s, tracker))
        .collect::<Result<_>>()?;
    let names: Vec<String> = seqs.iter().map(|s| s.info.name.clone()).collect();
    let gts: Vec<Sequence> = seqs.iter().map(SynthSequence::gt_sequence).collect();
    Ok((score(&names, &gts, &results)?, results))
}

/// Reads a MOT file, naming the path in any error.
pub fn read_mot_file(path: &Path) -> Result<Sequence> {
    read_mot(path).map_err(|e| match e {
        ltrack_metrics::Error::Io(io) => Error::io(path, io),
        other => Error::format(path, other),
    })
}

/// Writes one `{name}.txt` result file per sequence.
pub fn write_results(dir: impl AsRef<Path>, names: &[String], results: &[Sequence]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, seq) in names.iter().zip(results) {
        write_mot(dir.join(format!("{name}.txt")), seq)?;
    }
    Ok(())
}

/// Reads `{name}.txt` for each name; a missing file counts as an empty result.
pub fn read_results(dir: impl AsRef<Path>, names: &[String]) -> Result<Vec<Sequence>> {
    let dir = dir.as_ref();
    names
        .iter()
        .map(|n| {
            let p = dir.join(format!("{n}.txt"));
            if p.exists() {
                read_mot_file(&p)
            } else {
                Ok(Sequence::default())
            }
        })
        .collect()
}
