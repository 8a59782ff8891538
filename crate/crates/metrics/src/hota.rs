//! Higher Order Tracking Accuracy.
//!
//! Two passes over the sequence. The first accumulates a soft global
//! alignment score between every gt id and result id; the second matches
//! each frame by maximising `alignment × IoU`, then counts detection and
//! association hits at each localisation threshold alpha.

use serde::{Deserialize, Serialize};

use crate::assignment::hungarian_max;
use crate::sequence::{similarity, IdIndex, Sequence};
use crate::{Error, Result};

/// Localisation thresholds 0.05, 0.10, …, 0.95.
pub const ALPHAS: [f64; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80,
    0.85, 0.90, 0.95,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotaResult {
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub hota_per_alpha: Vec<f64>,
    pub deta_per_alpha: Vec<f64>,
    pub assa_per_alpha: Vec<f64>,
}

pub fn hota(gt: &Sequence, res: &Sequence) -> Result<HotaResult> {
    if gt.num_detections() == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let frames = gt.num_frames().max(res.num_frames());
    let gi = IdIndex::new(gt);
    let ri = IdIndex::new(res);
    let (ng, nr) = (gi.len(), ri.len());

    let sims: Vec<Vec<Vec<f64>>> = (1..=frames)
        .map(|t| similarity(gt.frame(t), res.frame(t)))
        .collect();

    let mut potential = vec![vec![0.0f64; nr]; ng];
    let mut gt_count = vec![0.0f64; ng];
    let mut res_count = vec![0.0f64; nr];
    for t in 1..=frames {
        let (g, r) = (gt.frame(t), res.frame(t));
        let sim = &sims[t - 1];
        let row_sum: Vec<f64> = sim.iter().map(|row| row.iter().sum()).collect();
        let col_sum: Vec<f64> = (0..r.len())
            .map(|j| sim.iter().map(|row| row[j]).sum())
            .collect();
        for (i, gd) in g.iter().enumerate() {
            for (j, rd) in r.iter().enumerate() {
                let denom = row_sum[i] + col_sum[j] - sim[i][j];
                if denom > f64::EPSILON {
                    potential[gi.index(gd.id)][ri.index(rd.id)] += sim[i][j] / denom;
                }
            }
        }
        for gd in g {
            gt_count[gi.index(gd.id)] += 1.0;
        }
        for rd in r {
            res_count[ri.index(rd.id)] += 1.0;
        }
    }
    let alignment: Vec<Vec<f64>> = (0..ng)
        .map(|a| {
            (0..nr)
                .map(|b| potential[a][b] / (gt_count[a] + res_count[b] - potential[a][b]))
                .collect()
        })
        .collect();

    let na = ALPHAS.len();
    let mut tp = vec![0usize; na];
    let mut fn_ = vec![0usize; na];
    let mut fp = vec![0usize; na];
    let mut matches = vec![vec![vec![0.0f64; nr]; ng]; na];
    for t in 1..=frames {
        let (g, r) = (gt.frame(t), res.frame(t));
        if g.is_empty() || r.is_empty() {
            for a in 0..na {
                fn_[a] += g.len();
                fp[a] += r.len();
            }
            continue;
        }
        let sim = &sims[t - 1];
        let score: Vec<Vec<f64>> = g
            .iter()
            .enumerate()
            .map(|(i, gd)| {
                r.iter()
                    .enumerate()
                    .map(|(j, rd)| alignment[gi.index(gd.id)][ri.index(rd.id)] * sim[i][j])
                    .collect()
            })
            .collect();
        let pairs: Vec<(usize, usize)> = hungarian_max(&score).pairs().collect();
        for (a, &alpha) in ALPHAS.iter().enumerate() {
            let mut hits = 0;
            for &(i, j) in &pairs {
                if sim[i][j] >= alpha - f64::EPSILON {
                    hits += 1;
                    matches[a][gi.index(g[i].id)][ri.index(r[j].id)] += 1.0;
                }
            }
            tp[a] += hits;
            fn_[a] += g.len() - hits;
            fp[a] += r.len() - hits;
        }
    }

    let mut hota_a = Vec::with_capacity(na);
    let mut deta_a = Vec::with_capacity(na);
    let mut assa_a = Vec::with_capacity(na);
    for a in 0..na {
        let mut ass_sum = 0.0;
        for x in 0..ng {
            for y in 0..nr {
                let m = matches[a][x][y];
                if m > 0.0 {
                    let denom = (gt_count[x] + res_count[y] - m).max(1.0);
                    ass_sum += m * (m / denom);
                }
            }
        }
        let assa = ass_sum / (tp[a].max(1) as f64);
        let deta = tp[a] as f64 / ((tp[a] + fn_[a] + fp[a]).max(1) as f64);
        deta_a.push(deta);
        assa_a.push(assa);
        hota_a.push((deta * assa).sqrt());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(HotaResult {
        hota: mean(&hota_a),
        deta: mean(&deta_a),
        assa: mean(&assa_a),
        hota_per_alpha: hota_a,
        deta_per_alpha: deta_a,
        assa_per_alpha: assa_a,
    })
}
