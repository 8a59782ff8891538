//! Focal, L1 and GIoU losses, query-to-target assignment and the clip loss.
//!
//! Every loss exists twice: on plain `f64` values and on the autodiff tape.
//! Both routes share the assignment logic and are checked against each other.

use ltrack_metrics::hungarian;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::perception::Bbox;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            l1: 5.0,
            giou: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

pub fn focal_loss(score: f64, target: f64, alpha: f64, gamma: f64) -> f64 {
    let p = score.clamp(EPS, 1.0 - EPS);
    let pos = -alpha * (1.0 - p).powf(gamma) * p.ln();
    let neg = -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln();
    target * pos + (1.0 - target) * neg
}

pub fn l1_box_loss(a: &Bbox, b: &Bbox) -> f64 {
    a.to_array().iter().zip(b.to_array()).map(|(x, y)| (x - y).abs()).sum()
}

pub fn giou(a: &Bbox, b: &Bbox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let hull = (ax1.max(bx1) - ax0.min(bx0)) * (ay1.max(by1) - ay0.min(by0));
    inter / union - (hull - union) / hull
}

pub fn giou_loss(a: &Bbox, b: &Bbox) -> f64 {
    1.0 - giou(a, b)
}

/// Detect-query matching cost against one target.
pub fn match_cost(score: f64, pred: &Bbox, gt: &Bbox, w: &LossWeights) -> f64 {
    -w.cls * score + w.l1 * l1_box_loss(pred, gt) + w.giou * giou_loss(pred, gt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub score: f64,
    pub bbox: Bbox,
}

/// Matched predictions pay all three terms against their target; the rest
/// pay the background classification term only.
pub fn frame_loss(
    preds: &[ScoredBox],
    gts: &[Bbox],
    assignment: &[Option<usize>],
    w: &LossWeights,
    focal: &FocalParams,
) -> f64 {
    preds
        .iter()
        .zip(assignment)
        .map(|(p, a)| match a {
            Some(j) => {
                w.cls * focal_loss(p.score, 1.0, focal.alpha, focal.gamma)
                    + w.l1 * l1_box_loss(&p.bbox, &gts[*j])
                    + w.giou * giou_loss(&p.bbox, &gts[*j])
            }
            None => w.cls * focal_loss(p.score, 0.0, focal.alpha, focal.gamma),
        })
        .sum()
}

/// Which identity, if any, a prediction is bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryRole {
    Detect,
    Track(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub role: QueryRole,
    pub score: f64,
    pub bbox: Bbox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtTarget {
    pub id: u32,
    pub bbox: Bbox,
    /// First appearance of this id within the clip.
    pub newborn: bool,
}

/// Track queries take the target with their own id; detect queries are
/// Hungarian-matched to newborn targets only.
pub fn assign(preds: &[Prediction], gts: &[GtTarget], w: &LossWeights) -> Vec<Option<usize>> {
    let mut out: Vec<Option<usize>> = preds
        .iter()
        .map(|p| match p.role {
            QueryRole::Track(id) => gts.iter().position(|g| g.id == id),
            QueryRole::Detect => None,
        })
        .collect();
    let det: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].role == QueryRole::Detect).collect();
    let newborn: Vec<usize> = (0..gts.len()).filter(|&j| gts[j].newborn).collect();
    if det.is_empty() || newborn.is_empty() {
        return out;
    }
    let cost: Vec<Vec<f64>> = det
        .iter()
        .map(|&i| {
            newborn
                .iter()
                .map(|&j| match_cost(preds[i].score, &preds[i].bbox, &gts[j].bbox, w))
                .collect()
        })
        .collect();
    for (r, c) in hungarian(&cost).pairs() {
        out[det[r]] = Some(newborn[c]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLossParts {
    pub tracking: f64,
    pub detection: f64,
    pub num_targets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipLossReport {
    pub total: f64,
    pub frames: Vec<FrameLossParts>,
    /// Total target count over the clip.
    pub normalizer: usize,
}

pub fn clip_loss(frames: &[(Vec<Prediction>, Vec<GtTarget>)], w: &LossWeights, focal: &FocalParams) -> ClipLossReport {
    let mut parts = Vec::with_capacity(frames.len());
    for (preds, gts) in frames {
        let assignment = assign(preds, gts, w);
        let boxes: Vec<Bbox> = gts.iter().map(|g| g.bbox).collect();
        let split = |track: bool| {
            let (p, a): (Vec<ScoredBox>, Vec<Option<usize>>) = preds
                .iter()
                .zip(&assignment)
                .filter(|(p, _)| matches!(p.role, QueryRole::Track(_)) == track)
                .map(|(p, a)| {
                    (
                        ScoredBox {
                            score: p.score,
                            bbox: p.bbox,
                        },
                        *a,
                    )
                })
                .unzip();
            frame_loss(&p, &boxes, &a, w, focal)
        };
        parts.push(FrameLossParts {
            tracking: split(true),
            detection: split(false),
            num_targets: gts.len(),
        });
    }
    finish(parts)
}

fn finish(frames: Vec<FrameLossParts>) -> ClipLossReport {
    let normalizer: usize = frames.iter().map(|f| f.num_targets).sum();
    let sum: f64 = frames.iter().map(|f| f.tracking + f.detection).sum();
    ClipLossReport {
        total: if normalizer == 0 { 0.0 } else { sum / normalizer as f64 },
        frames,
        normalizer,
    }
}

/// Sum of focal terms for `n × 1` scores against constant targets.
pub fn focal_var(g: &Graph, scores: Var, targets: &[f64], focal: &FocalParams) -> Var {
    let n = g.shape(scores).0;
    assert_eq!(targets.len(), n, "one target per score");
    let p = g.clamp(scores, EPS, 1.0 - EPS);
    let one_minus = g.add_scalar(g.neg(p), 1.0);
    let pos = g.scale(g.mul(g.powf(one_minus, focal.gamma), g.log(p)), -focal.alpha);
    let neg = g.scale(g.mul(g.powf(p, focal.gamma), g.log(one_minus)), focal.alpha - 1.0);
    let t = Tensor::from_vec(n, 1, targets.to_vec());
    let not_t = t.map(|x| 1.0 - x);
    g.sum(g.add(g.mul(pos, g.constant(t)), g.mul(neg, g.constant(not_t))))
}

/// Sum over rows of `|pred - gt|` for `n × 4` boxes.
pub fn l1_var(g: &Graph, pred: Var, gt: Var) -> Var {
    g.sum(g.abs(g.sub(pred, gt)))
}

fn corners_var(g: &Graph, b: Var) -> [Var; 4] {
    let c = |i| g.slice_cols(b, i, 1);
    let (cx, cy, w, h) = (c(0), c(1), c(2), c(3));
    let hw = g.scale(w, 0.5);
    let hh = g.scale(h, 0.5);
    [g.sub(cx, hw), g.sub(cy, hh), g.add(cx, hw), g.add(cy, hh)]
}

/// `n × 1` GIoU of row-aligned `n × 4` boxes.
pub fn giou_rows_var(g: &Graph, a: Var, b: Var) -> Var {
    let [ax0, ay0, ax1, ay1] = corners_var(g, a);
    let [bx0, by0, bx1, by1] = corners_var(g, b);
    let iw = g.relu(g.sub(g.minimum(ax1, bx1), g.maximum(ax0, bx0)));
    let ih = g.relu(g.sub(g.minimum(ay1, by1), g.maximum(ay0, by0)));
    let inter = g.mul(iw, ih);
    let area = |x0, y0, x1, y1| g.mul(g.sub(x1, x0), g.sub(y1, y0));
    let union = g.sub(g.add(area(ax0, ay0, ax1, ay1), area(bx0, by0, bx1, by1)), inter);
    let hull = g.mul(
        g.sub(g.maximum(ax1, bx1), g.minimum(ax0, bx0)),
        g.sub(g.maximum(ay1, by1), g.minimum(ay0, by0)),
    );
    g.sub(g.div(inter, union), g.div(g.sub(hull, union), hull))
}

/// Sum over rows of `1 - GIoU`.
pub fn giou_loss_var(g: &Graph, pred: Var, gt: Var) -> Var {
    let n = g.shape(pred).0 as f64;
    g.add_scalar(g.neg(g.sum(giou_rows_var(g, pred, gt))), n)
}

/// Tape version of [`frame_loss`]; `scores` is `N × 1`, `boxes` `N × 4`.
pub fn frame_loss_var(
    g: &Graph,
    scores: Var,
    boxes: Var,
    gts: &[Bbox],
    assignment: &[Option<usize>],
    w: &LossWeights,
    focal: &FocalParams,
) -> Var {
    let targets: Vec<f64> = assignment.iter().map(|a| a.is_some() as u8 as f64).collect();
    let mut total = g.scale(focal_var(g, scores, &targets, focal), w.cls);
    let matched: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i].is_some()).collect();
    if !matched.is_empty() {
        let pred = g.select_rows(boxes, &matched);
        let gt: Vec<f64> = matched
            .iter()
            .flat_map(|&i| gts[assignment[i].expect("matched")].to_array())
            .collect();
        let gt = g.constant(Tensor::from_vec(matched.len(), 4, gt));
        total = g.add(total, g.scale(l1_var(g, pred, gt), w.l1));
        total = g.add(total, g.scale(giou_loss_var(g, pred, gt), w.giou));
    }
    total
}

/// One frame of tape outputs: `N × 1` scores, `N × 4` boxes, and a role per row.
#[derive(Debug, Clone)]
pub struct FrameOutputsVar {
    pub scores: Var,
    pub boxes: Var,
    pub roles: Vec<QueryRole>,
}

impl FrameOutputsVar {
    pub fn predictions(&self, g: &Graph) -> Vec<Prediction> {
        let s = g.value(self.scores);
        let b = g.value(self.boxes);
        self.roles
            .iter()
            .enumerate()
            .map(|(i, &role)| Prediction {
                role,
                score: s.get(i, 0),
                bbox: Bbox::from_slice(b.row(i)),
            })
            .collect()
    }
}

/// Tape version of [`clip_loss`]. Returns the normalised scalar and the
/// report read back from the tape values.
pub fn clip_loss_var(
    g: &Graph,
    frames: &[(FrameOutputsVar, Vec<GtTarget>)],
    w: &LossWeights,
    focal: &FocalParams,
) -> (Var, ClipLossReport) {
    let mut sum: Option<Var> = None;
    let mut parts = Vec::with_capacity(frames.len());
    for (out, gts) in frames {
        let preds = out.predictions(g);
        let assignment = assign(&preds, gts, w);
        let boxes: Vec<Bbox> = gts.iter().map(|t| t.bbox).collect();
        let mut part = |track: bool| {
            let rows: Vec<usize> = (0..preds.len())
                .filter(|&i| matches!(preds[i].role, QueryRole::Track(_)) == track)
                .collect();
            if rows.is_empty() {
                return 0.0;
            }
            let a: Vec<Option<usize>> = rows.iter().map(|&i| assignment[i]).collect();
            let l = frame_loss_var(
                g,
                g.select_rows(out.scores, &rows),
                g.select_rows(out.boxes, &rows),
                &boxes,
                &a,
                w,
                focal,
            );
            sum = Some(match sum {
                Some(s) => g.add(s, l),
                None => l,
            });
            g.scalar(l)
        };
        let tracking = part(true);
        let detection = part(false);
        parts.push(FrameLossParts {
            tracking,
            detection,
            num_targets: gts.len(),
        });
    }
    let report = finish(parts);
    let total = match sum {
        Some(s) if report.normalizer > 0 => g.scale(s, 1.0 / report.normalizer as f64),
        Some(s) => g.scale(s, 0.0),
        None => g.constant(Tensor::scalar(0.0)),
    };
    (total, report)
}
