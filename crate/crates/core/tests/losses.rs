//! Loss oracles, plain/tape agreement and clip-level properties.

use ltrack_core::losses::{
    assign, clip_loss, clip_loss_var, focal_loss, frame_loss, giou, giou_loss, FocalParams, FrameOutputsVar,
    GtTarget, LossWeights, Prediction, QueryRole, ScoredBox, EPS,
};
use ltrack_core::perception::Bbox;
use ltrack_core::{Graph, Tensor};
use ltrack_metrics::hungarian;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Areas by counting cell centres of an `n × n` grid on the unit square.
fn raster_giou(a: &Bbox, b: &Bbox, n: usize) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let (hx0, hy0, hx1, hy1) = (ax0.min(bx0), ay0.min(by0), ax1.max(bx1), ay1.max(by1));
    let (mut inter, mut union, mut hull) = (0usize, 0usize, 0usize);
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        for j in 0..n {
            let y = (j as f64 + 0.5) / n as f64;
            let ia = ax0 <= x && x < ax1 && ay0 <= y && y < ay1;
            let ib = bx0 <= x && x < bx1 && by0 <= y && y < by1;
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
            hull += (hx0 <= x && x < hx1 && hy0 <= y && y < hy1) as usize;
        }
    }
    let (inter, union, hull) = (inter as f64, union as f64, hull as f64);
    inter / union - (hull - union) / hull
}

#[test]
fn giou_corner_touching_boxes_against_raster() {
    let a = Bbox::new(0.25, 0.25, 0.5, 0.5);
    let b = Bbox::new(0.75, 0.75, 0.5, 0.5);
    let raster = raster_giou(&a, &b, 1000);
    assert!((raster - -0.5).abs() < 1e-9, "raster {raster}");
    assert!((giou(&a, &b) - -0.5).abs() < 1e-12);
    assert!((giou_loss(&a, &b) - 1.5).abs() < 1e-12);
}

#[test]
fn giou_matches_raster_on_random_boxes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 800;
    for _ in 0..50 {
        let mut b = || {
            let w = rng.random_range(0.05..0.5);
            let h = rng.random_range(0.05..0.5);
            Bbox::new(
                rng.random_range(w / 2.0..1.0 - w / 2.0),
                rng.random_range(h / 2.0..1.0 - h / 2.0),
                w,
                h,
            )
        };
        let (a, c) = (b(), b());
        // Each edge shifts the counts by at most one row of cells.
        let tol = 8.0 / n as f64 / a.w.min(a.h).min(c.w).min(c.h);
        assert!((giou(&a, &c) - raster_giou(&a, &c, n)).abs() < tol);
    }
}

fn bce(p: f64, t: f64) -> f64 {
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

#[test]
fn focal_reduces_to_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let p = rng.random_range(EPS..1.0 - EPS);
        assert!((focal_loss(p, 1.0, 1.0, 0.0) - bce(p, 1.0)).abs() < 1e-12);
        for t in [0.0, 1.0] {
            assert!((focal_loss(p, t, 0.5, 0.0) - 0.5 * bce(p, t)).abs() < 1e-12);
        }
    }
    assert!((focal_loss(0.5, 1.0, 0.25, 2.0) - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
    assert!((focal_loss(0.5, 1.0, 0.25, 2.0) - 0.04332).abs() < 1e-5);
}

fn arb_box() -> impl Strategy<Value = Bbox> {
    (0.05..0.3f64, 0.05..0.3f64, 0.0..1.0f64, 0.0..1.0f64)
        .prop_map(|(w, h, u, v)| Bbox::new(w / 2.0 + u * (1.0 - w), h / 2.0 + v * (1.0 - h), w, h))
}

fn arb_frame(max_det: usize, track_ids: Vec<u32>) -> impl Strategy<Value = (Vec<Prediction>, Vec<GtTarget>)> {
    let m = track_ids.len();
    (
        prop::collection::vec((0.001..0.999f64, arb_box()), 1..=max_det),
        prop::collection::vec((0.001..0.999f64, arb_box()), m),
        prop::collection::vec((arb_box(), any::<bool>()), 0..4),
        prop::collection::vec(any::<bool>(), m),
    )
        .prop_map(move |(det, trk, extra, present)| {
            let mut preds: Vec<Prediction> = det
                .iter()
                .map(|&(score, bbox)| Prediction {
                    role: QueryRole::Detect,
                    score,
                    bbox,
                })
                .collect();
            let mut gts = Vec::new();
            for (k, (&(score, bbox), &here)) in trk.iter().zip(&present).enumerate() {
                preds.push(Prediction {
                    role: QueryRole::Track(track_ids[k]),
                    score,
                    bbox,
                });
                if here {
                    gts.push(GtTarget {
                        id: track_ids[k],
                        bbox,
                        newborn: false,
                    });
                }
            }
            for (k, &(bbox, newborn)) in extra.iter().enumerate() {
                gts.push(GtTarget {
                    id: 100 + k as u32,
                    bbox,
                    newborn,
                });
            }
            (preds, gts)
        })
}

fn tape_clip(frames: &[(Vec<Prediction>, Vec<GtTarget>)], w: &LossWeights, focal: &FocalParams) -> f64 {
    let g = Graph::new();
    let vars: Vec<(FrameOutputsVar, Vec<GtTarget>)> = frames
        .iter()
        .map(|(p, t)| {
            let scores = Tensor::from_vec(p.len(), 1, p.iter().map(|x| x.score).collect());
            let boxes = Tensor::from_vec(p.len(), 4, p.iter().flat_map(|x| x.bbox.to_array()).collect());
            (
                FrameOutputsVar {
                    scores: g.constant(scores),
                    boxes: g.constant(boxes),
                    roles: p.iter().map(|x| x.role).collect(),
                },
                t.clone(),
            )
        })
        .collect();
    let (v, report) = clip_loss_var(&g, &vars, w, focal);
    assert!((g.scalar(v) - report.total).abs() < 1e-12);
    g.scalar(v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn plain_and_tape_routes_agree(
        f1 in arb_frame(5, vec![]),
        f2 in arb_frame(5, vec![1, 2]),
    ) {
        let w = LossWeights::default();
        let focal = FocalParams::default();
        let frames = vec![f1, f2];
        let plain = clip_loss(&frames, &w, &focal).total;
        let tape = tape_clip(&frames, &w, &focal);
        prop_assert!((plain - tape).abs() <= 1e-10 * plain.abs().max(1.0), "{plain} vs {tape}");
    }

    #[test]
    fn components_non_negative_and_total_is_normalised_sum(
        f1 in arb_frame(4, vec![]),
        f2 in arb_frame(4, vec![7]),
        f3 in arb_frame(4, vec![7, 8, 9]),
    ) {
        let r = clip_loss(&[f1, f2, f3], &LossWeights::default(), &FocalParams::default());
        let sum: f64 = r.frames.iter().map(|f| f.tracking + f.detection).sum();
        prop_assert!(r.frames.iter().all(|f| f.tracking >= 0.0 && f.detection >= 0.0));
        let n: usize = r.frames.iter().map(|f| f.num_targets).sum();
        prop_assert_eq!(n, r.normalizer);
        let expected = if n == 0 { 0.0 } else { sum / n as f64 };
        prop_assert!((r.total - expected).abs() < 1e-12);
    }

    #[test]
    fn detect_order_does_not_change_clip_loss(
        frame in arb_frame(6, vec![3, 4]),
        seed in any::<u64>(),
    ) {
        let w = LossWeights::default();
        let focal = FocalParams::default();
        let (preds, gts) = frame;
        let n_det = preds.iter().filter(|p| p.role == QueryRole::Detect).count();
        let mut order: Vec<usize> = (0..n_det).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<Prediction> = order
            .iter()
            .map(|&i| preds[i])
            .chain(preds[n_det..].iter().copied())
            .collect();
        let a = clip_loss(&[(preds, gts.clone())], &w, &focal).total;
        let b = clip_loss(&[(shuffled, gts)], &w, &focal).total;
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn assignment_is_injective_and_respects_roles(frame in arb_frame(6, vec![1, 2, 3])) {
        let (preds, gts) = frame;
        let a = assign(&preds, &gts, &LossWeights::default());
        let matched: Vec<usize> = a.iter().flatten().copied().collect();
        let mut dedup = matched.clone();
        dedup.sort_unstable();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), matched.len());
        prop_assert!(matched.len() <= preds.len().min(gts.len()));
        for (p, m) in preds.iter().zip(&a) {
            match (p.role, m) {
                (QueryRole::Track(id), Some(j)) => prop_assert_eq!(gts[*j].id, id),
                (QueryRole::Track(id), None) => prop_assert!(gts.iter().all(|t| t.id != id)),
                (QueryRole::Detect, Some(j)) => prop_assert!(gts[*j].newborn),
                (QueryRole::Detect, None) => {}
            }
        }
    }
}

#[test]
fn one_frame_all_newborn_clip_is_matched_frame_loss_over_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = LossWeights::default();
    let focal = FocalParams::default();
    for _ in 0..100 {
        let n = rng.random_range(1..6);
        let k = rng.random_range(1..=n);
        let b = |rng: &mut ChaCha8Rng| Bbox::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), 0.2, 0.3);
        let preds: Vec<ScoredBox> = (0..n)
            .map(|_| ScoredBox {
                score: rng.random_range(0.01..0.99),
                bbox: b(&mut rng),
            })
            .collect();
        let boxes: Vec<Bbox> = (0..k).map(|_| b(&mut rng)).collect();
        let cost: Vec<Vec<f64>> = preds
            .iter()
            .map(|p| boxes.iter().map(|g| ltrack_core::losses::match_cost(p.score, &p.bbox, g, &w)).collect())
            .collect();
        let mut assignment = vec![None; n];
        for (r, c) in hungarian(&cost).pairs() {
            assignment[r] = Some(c);
        }
        let expected = frame_loss(&preds, &boxes, &assignment, &w, &focal) / k as f64;
        let clip = vec![(
            preds
                .iter()
                .map(|p| Prediction {
                    role: QueryRole::Detect,
                    score: p.score,
                    bbox: p.bbox,
                })
                .collect(),
            boxes
                .iter()
                .enumerate()
                .map(|(i, &bbox)| GtTarget {
                    id: i as u32 + 1,
                    bbox,
                    newborn: true,
                })
                .collect(),
        )];
        let r = clip_loss(&clip, &w, &focal);
        assert!((r.total - expected).abs() < 1e-12);
        assert_eq!(r.frames[0].tracking, 0.0);
    }
}

#[test]
fn doubling_a_frame_keeps_normalised_total() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = LossWeights::default();
    let focal = FocalParams::default();
    for _ in 0..100 {
        let n = rng.random_range(1..6);
        let k = rng.random_range(0..4);
        let mut b = || Bbox::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), 0.2, 0.3);
        let preds: Vec<Prediction> = (0..n)
            .map(|_| Prediction {
                role: QueryRole::Detect,
                score: 0.5,
                bbox: b(),
            })
            .collect();
        let gts: Vec<GtTarget> = (0..k)
            .map(|i| GtTarget {
                id: i + 1,
                bbox: b(),
                newborn: true,
            })
            .collect();
        let again: Vec<GtTarget> = gts.iter().map(|t| GtTarget { id: t.id + 100, ..*t }).collect();
        let single = clip_loss(&[(preds.clone(), gts.clone())], &w, &focal);
        let double = clip_loss(&[(preds.clone(), gts), (preds, again)], &w, &focal);
        assert_eq!(double.normalizer, 2 * single.normalizer);
        assert!((single.total - double.total).abs() < 1e-12);
    }
}

#[test]
fn zero_weights_and_perfect_predictions_give_zero() {
    let gts = [Bbox::new(0.4, 0.5, 0.2, 0.3), Bbox::new(0.7, 0.2, 0.1, 0.1)];
    let preds = [
        ScoredBox { score: 1.0, bbox: gts[0] },
        ScoredBox { score: 0.0, bbox: gts[0] },
        ScoredBox { score: 1.0, bbox: gts[1] },
    ];
    let a = [Some(0), None, Some(1)];
    let focal = FocalParams::default();
    assert!(frame_loss(&preds, &gts, &a, &LossWeights::default(), &focal) < 1e-12);
    let zero = LossWeights {
        cls: 0.0,
        l1: 0.0,
        giou: 0.0,
    };
    let noisy = [ScoredBox { score: 0.3, bbox: gts[1] }, preds[1], preds[2]];
    assert_eq!(frame_loss(&noisy, &gts, &a, &zero, &focal), 0.0);
}
