//! CLEAR-MOT accuracy and identity switches.

use serde::{Deserialize, Serialize};

use crate::assignment::hungarian_max;
use crate::sequence::{similarity, Sequence};
use crate::{Error, Result};

// Bonus that makes continuing last frame's pairing dominate any IoU gain.
const CONTINUITY_BONUS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearMot {
    pub mota: f64,
    pub id_switches: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_positives: usize,
    pub num_gt: usize,
}

/// MOTA and identity switches.
///
/// Each frame keeps last frame's gt→result pairs when they are still above
/// the IoU threshold, then matches the remainder by maximum IoU. A switch is
/// counted when a gt id is matched to a different result id than the last
/// time it was matched. Frames with no gt or no result boxes leave the
/// previous pairing untouched.
pub fn clear_mot(gt: &Sequence, res: &Sequence, iou_threshold: f64) -> Result<ClearMot> {
    let num_gt = gt.num_detections();
    if num_gt == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let frames = gt.num_frames().max(res.num_frames());
    let eps = f64::EPSILON;

    // gt id -> result id of its latest match (ever), and of the previous frame only.
    let mut last_match = std::collections::HashMap::<u32, u32>::new();
    let mut prev_frame = std::collections::HashMap::<u32, u32>::new();
    let (mut tp, mut fp, mut fn_, mut idsw) = (0usize, 0usize, 0usize, 0usize);

    for t in 1..=frames {
        let g = gt.frame(t);
        let r = res.frame(t);
        if g.is_empty() {
            fp += r.len();
            continue;
        }
        if r.is_empty() {
            fn_ += g.len();
            continue;
        }
        let sim = similarity(g, r);
        let score: Vec<Vec<f64>> = g
            .iter()
            .enumerate()
            .map(|(i, gd)| {
                r.iter()
                    .enumerate()
                    .map(|(j, rd)| {
                        if sim[i][j] < iou_threshold - eps {
                            0.0
                        } else if prev_frame.get(&gd.id) == Some(&rd.id) {
                            CONTINUITY_BONUS + sim[i][j]
                        } else {
                            sim[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let assignment = hungarian_max(&score);
        prev_frame.clear();
        let mut matches = 0;
        for (i, j) in assignment.pairs() {
            if score[i][j] <= 0.0 {
                continue;
            }
            matches += 1;
            let (gid, rid) = (g[i].id, r[j].id);
            if let Some(&prev) = last_match.get(&gid) {
                if prev != rid {
                    idsw += 1;
                }
            }
            last_match.insert(gid, rid);
            prev_frame.insert(gid, rid);
        }
        tp += matches;
        fn_ += g.len() - matches;
        fp += r.len() - matches;
    }

    let mota = 1.0 - (fn_ + fp + idsw) as f64 / num_gt as f64;
    Ok(ClearMot {
        mota,
        id_switches: idsw,
        false_positives: fp,
        false_negatives: fn_,
        true_positives: tp,
        num_gt,
    })
}
