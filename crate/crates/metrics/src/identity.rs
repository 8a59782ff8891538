//! Identity metrics (IDF1) under the optimal global id mapping.

use serde::{Deserialize, Serialize};

use crate::assignment::hungarian_max;
use crate::sequence::{similarity, IdIndex, Sequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityScores {
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// IDF1 = 2·IDTP / (2·IDTP + IDFP + IDFN), with IDTP maximised over
/// one-to-one mappings between gt ids and result ids.
///
/// Both sequences empty gives 1; empty gt with a non-empty result gives 0.
pub fn idf1(gt: &Sequence, res: &Sequence, iou_threshold: f64) -> IdentityScores {
    let total_gt = gt.num_detections();
    let total_res = res.num_detections();
    if total_gt == 0 || total_res == 0 {
        let idf1 = if total_gt == 0 && total_res == 0 { 1.0 } else { 0.0 };
        return IdentityScores {
            idf1,
            idtp: 0,
            idfp: total_res,
            idfn: total_gt,
        };
    }

    let counts = overlap_counts(gt, res, iou_threshold);
    let score: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| row.iter().map(|&c| c as f64).collect())
        .collect();
    let idtp: usize = hungarian_max(&score)
        .pairs()
        .map(|(g, r)| counts[g][r])
        .sum();
    let idfp = total_res - idtp;
    let idfn = total_gt - idtp;
    IdentityScores {
        idf1: 2.0 * idtp as f64 / (2 * idtp + idfp + idfn) as f64,
        idtp,
        idfp,
        idfn,
    }
}

/// Number of frames in which each (gt id, result id) pair overlaps at or
/// above the threshold, indexed densely by sorted id.
pub(crate) fn overlap_counts(gt: &Sequence, res: &Sequence, iou_threshold: f64) -> Vec<Vec<usize>> {
    let gi = IdIndex::new(gt);
    let ri = IdIndex::new(res);
    let mut counts = vec![vec![0usize; ri.len()]; gi.len()];
    let frames = gt.num_frames().max(res.num_frames());
    for t in 1..=frames {
        let g = gt.frame(t);
        let r = res.frame(t);
        let sim = similarity(g, r);
        for (i, gd) in g.iter().enumerate() {
            for (j, rd) in r.iter().enumerate() {
                if sim[i][j] >= iou_threshold {
                    counts[gi.index(gd.id)][ri.index(rd.id)] += 1;
                }
            }
        }
    }
    counts
}
