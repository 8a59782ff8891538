//! Exhaustive-search reference metrics for tiny instances.
//!
//! Every matching here is found by enumerating all partial one-to-one
//! matchings, so these functions are exponential and only meant for a
//! handful of ids per frame. They share no matching code with the main
//! implementations.

use rand::Rng;

use crate::rect::Rect;
use crate::sequence::{Detection, Sequence};

const ALPHA_GRID: usize = 19;

fn overlap(a: &Rect, b: &Rect) -> f64 {
    let x0 = a.left.max(b.left);
    let y0 = a.top.max(b.top);
    let x1 = (a.left + a.width).min(b.left + b.width);
    let y1 = (a.top + a.height).min(b.top + b.height);
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let inter = (x1 - x0) * (y1 - y0);
    inter / (a.width * a.height + b.width * b.height - inter)
}

/// All partial injective matchings of `rows` into `cols`, restricted to
/// allowed pairs.
fn matchings(rows: usize, cols: usize, allowed: &dyn Fn(usize, usize) -> bool) -> Vec<Vec<(usize, usize)>> {
    fn rec(
        r: usize,
        rows: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
        allowed: &dyn Fn(usize, usize) -> bool,
    ) {
        if r == rows {
            out.push(cur.clone());
            return;
        }
        rec(r + 1, rows, used, cur, out, allowed);
        for c in 0..used.len() {
            if !used[c] && allowed(r, c) {
                used[c] = true;
                cur.push((r, c));
                rec(r + 1, rows, used, cur, out, allowed);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, rows, &mut vec![false; cols], &mut Vec::new(), &mut out, allowed);
    out
}

fn frames(gt: &Sequence, res: &Sequence) -> usize {
    gt.num_frames().max(res.num_frames())
}

/// Reference (MOTA, IDSW). Each frame picks the matching that first keeps
/// as many of the previous frame's pairs as possible and then maximises IoU.
pub fn clear_mot(gt: &Sequence, res: &Sequence, threshold: f64) -> (f64, usize) {
    let mut last: Vec<(u32, u32)> = Vec::new();
    let mut prev: Vec<(u32, u32)> = Vec::new();
    let (mut fp, mut fn_, mut sw, mut total) = (0usize, 0usize, 0usize, 0usize);
    for t in 1..=frames(gt, res) {
        let g = gt.frame(t);
        let r = res.frame(t);
        total += g.len();
        if g.is_empty() || r.is_empty() {
            fp += r.len();
            fn_ += g.len();
            continue;
        }
        let ok = |i: usize, j: usize| overlap(&g[i].rect, &r[j].rect) >= threshold - f64::EPSILON;
        let mut best: Option<(usize, f64, Vec<(usize, usize)>)> = None;
        for m in matchings(g.len(), r.len(), &ok) {
            let keep = m
                .iter()
                .filter(|&&(i, j)| prev.contains(&(g[i].id, r[j].id)))
                .count();
            let sum: f64 = m.iter().map(|&(i, j)| overlap(&g[i].rect, &r[j].rect)).sum();
            let better = match &best {
                None => true,
                Some((bk, bs, _)) => keep > *bk || (keep == *bk && sum > *bs),
            };
            if better {
                best = Some((keep, sum, m));
            }
        }
        let m = best.map(|b| b.2).unwrap_or_default();
        prev.clear();
        for &(i, j) in &m {
            let (gid, rid) = (g[i].id, r[j].id);
            if let Some(pos) = last.iter().position(|&(a, _)| a == gid) {
                if last[pos].1 != rid {
                    sw += 1;
                }
                last[pos].1 = rid;
            } else {
                last.push((gid, rid));
            }
            prev.push((gid, rid));
        }
        fp += r.len() - m.len();
        fn_ += g.len() - m.len();
    }
    (1.0 - (fp + fn_ + sw) as f64 / total as f64, sw)
}

/// Reference IDF1 by enumerating every one-to-one id mapping.
pub fn idf1(gt: &Sequence, res: &Sequence, threshold: f64) -> f64 {
    let gids = gt.ids();
    let rids = res.ids();
    let total_gt = gt.num_detections();
    let total_res = res.num_detections();
    if total_gt + total_res == 0 {
        return 1.0;
    }
    let co_occur = |a: u32, b: u32| -> usize {
        (1..=frames(gt, res))
            .filter(|&t| {
                let g = gt.frame(t).iter().find(|d| d.id == a);
                let r = res.frame(t).iter().find(|d| d.id == b);
                matches!((g, r), (Some(g), Some(r)) if overlap(&g.rect, &r.rect) >= threshold)
            })
            .count()
    };
    let best = matchings(gids.len(), rids.len(), &|_, _| true)
        .into_iter()
        .map(|m| m.iter().map(|&(i, j)| co_occur(gids[i], rids[j])).sum::<usize>())
        .max()
        .unwrap_or(0);
    2.0 * best as f64 / (total_gt + total_res) as f64
}

/// Reference HOTA results: (HOTA, DetA, AssA, per-alpha HOTA).
pub fn hota(gt: &Sequence, res: &Sequence) -> (f64, f64, f64, Vec<f64>) {
    let n = frames(gt, res);
    let gids = gt.ids();
    let rids = res.ids();
    let gpos = |id: u32| gids.iter().position(|&x| x == id).unwrap();
    let rpos = |id: u32| rids.iter().position(|&x| x == id).unwrap();

    // Soft global alignment between ids.
    let mut pot = vec![vec![0.0; rids.len()]; gids.len()];
    let mut gc = vec![0.0; gids.len()];
    let mut rc = vec![0.0; rids.len()];
    for t in 1..=n {
        let g = gt.frame(t);
        let r = res.frame(t);
        for gd in g {
            gc[gpos(gd.id)] += 1.0;
        }
        for rd in r {
            rc[rpos(rd.id)] += 1.0;
        }
        for gd in g {
            for rd in r {
                let s = overlap(&gd.rect, &rd.rect);
                if s == 0.0 {
                    continue;
                }
                let row: f64 = r.iter().map(|x| overlap(&gd.rect, &x.rect)).sum();
                let col: f64 = g.iter().map(|x| overlap(&x.rect, &rd.rect)).sum();
                pot[gpos(gd.id)][rpos(rd.id)] += s / (row + col - s);
            }
        }
    }
    let align = |a: usize, b: usize| pot[a][b] / (gc[a] + rc[b] - pot[a][b]);

    // Per frame, the matching with the largest alignment-weighted IoU.
    let mut chosen: Vec<Vec<(Detection, Detection)>> = Vec::new();
    for t in 1..=n {
        let g = gt.frame(t);
        let r = res.frame(t);
        let mut best: (f64, Vec<(usize, usize)>) = (-1.0, Vec::new());
        for m in matchings(g.len(), r.len(), &|_, _| true) {
            let s: f64 = m
                .iter()
                .map(|&(i, j)| align(gpos(g[i].id), rpos(r[j].id)) * overlap(&g[i].rect, &r[j].rect))
                .sum();
            if s > best.0 {
                best = (s, m);
            }
        }
        chosen.push(best.1.iter().map(|&(i, j)| (g[i], r[j])).collect());
    }

    let total_gt = gt.num_detections() as f64;
    let total_res = res.num_detections() as f64;
    let mut per_alpha = Vec::new();
    let (mut det_sum, mut ass_sum) = (0.0, 0.0);
    for k in 0..ALPHA_GRID {
        let alpha = 0.05 * (k + 1) as f64;
        let alpha = (alpha * 100.0).round() / 100.0;
        // Every true positive as an (gt id, res id) pair.
        let tps: Vec<(u32, u32)> = chosen
            .iter()
            .flatten()
            .filter(|(a, b)| overlap(&a.rect, &b.rect) >= alpha - f64::EPSILON)
            .map(|(a, b)| (a.id, b.id))
            .collect();
        let tp = tps.len() as f64;
        let det = tp / (total_gt + total_res - tp).max(1.0);
        // Association IoU per TP: TPA / (TPA + FNA + FPA).
        let ass: f64 = tps
            .iter()
            .map(|&(a, b)| {
                let tpa = tps.iter().filter(|&&p| p == (a, b)).count() as f64;
                let gt_len = gc[gpos(a)];
                let res_len = rc[rpos(b)];
                tpa / (tpa + (gt_len - tpa) + (res_len - tpa))
            })
            .sum::<f64>()
            / tp.max(1.0);
        per_alpha.push((det * ass).sqrt());
        det_sum += det;
        ass_sum += ass;
    }
    let hota = per_alpha.iter().sum::<f64>() / ALPHA_GRID as f64;
    (
        hota,
        det_sum / ALPHA_GRID as f64,
        ass_sum / ALPHA_GRID as f64,
        per_alpha,
    )
}

/// Random tiny (gt, result) pair: up to `max_tracks` gt tracks over up to
/// `max_frames` frames; the result jitters gt boxes, drops some, swaps ids
/// and adds false positives. Result ids come from {11, 12, 13}.
pub fn random_instance<R: Rng>(rng: &mut R, max_tracks: u32, max_frames: usize) -> (Sequence, Sequence) {
    let frames = rng.random_range(1..=max_frames);
    let tracks = rng.random_range(1..=max_tracks);
    let mut gt = Sequence::with_len(frames);
    let mut res = Sequence::with_len(frames);
    let mut any_gt = false;
    for id in 1..=tracks {
        let mut x = rng.random_range(0.0..60.0);
        let mut y = rng.random_range(0.0..60.0);
        let w = rng.random_range(8.0..30.0);
        let h = rng.random_range(8.0..30.0);
        for t in 1..=frames {
            x += rng.random_range(-6.0..6.0);
            y += rng.random_range(-6.0..6.0);
            if rng.random_bool(0.85) || (!any_gt && t == frames && id == tracks) {
                gt.push(t, Detection::new(id, Rect::new(x, y, w, h))).unwrap();
                any_gt = true;
            }
        }
    }
    for t in 1..=frames {
        let mut used = Vec::new();
        for d in gt.frame(t).to_vec() {
            if rng.random_bool(0.15) {
                continue;
            }
            let mut rid = if rng.random_bool(0.75) { d.id + 10 } else { rng.random_range(11..=13) };
            while used.contains(&rid) {
                rid = rid % 13 + 11;
            }
            used.push(rid);
            let j = |r: &mut R| r.random_range(-4.0..4.0);
            let rect = Rect::new(d.rect.left + j(rng), d.rect.top + j(rng), d.rect.width + j(rng), d.rect.height + j(rng));
            res.push(t, Detection::new(rid, rect)).unwrap();
        }
        if rng.random_bool(0.2) {
            if let Some(rid) = (11..=13).find(|r| !used.contains(r)) {
                let rect = Rect::new(rng.random_range(0.0..80.0), rng.random_range(0.0..80.0), 15.0, 15.0);
                res.push(t, Detection::new(rid, rect)).unwrap();
            }
        }
    }
    (gt, res)
}
