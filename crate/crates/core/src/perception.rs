//! Convolutional backbone, context encoder and query decoder.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use ltrack_metrics::Rect;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{inverse_sigmoid, Graph, Var};
use crate::nn::{DecoderBlock, EncoderLayer, Linear};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::Tensor;

/// Normalised centre/size box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Bbox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// `(x0, y0, x1, y1)`.
    pub fn corners(self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn area(self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(self) -> bool {
        (0.0..=1.0).contains(&self.cx)
            && (0.0..=1.0).contains(&self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
    }

    /// Pixel-space rectangle for an image of the given size.
    pub fn to_rect(self, width: usize, height: usize) -> Rect {
        let (x0, y0, _, _) = self.corners();
        Rect::new(
            x0 * width as f64,
            y0 * height as f64,
            self.w * width as f64,
            self.h * height as f64,
        )
    }

    pub fn from_rect(r: &Rect, width: usize, height: usize) -> Self {
        Self::new(
            (r.left + r.width / 2.0) / width as f64,
            (r.top + r.height / 2.0) / height as f64,
            r.width / width as f64,
            r.height / height as f64,
        )
    }
}

/// `H × W × 3` pixels in `[0, 1]`, row-major, channel last.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    pub frame_index: u32,
}

impl ImageFrame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, frame_index: u32) -> Result<Self> {
        if height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0 {
            return Err(Error::FrameSize { height, width });
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{} pixel values for a {height}x{width}x3 frame",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
            frame_index,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextSource {
    C3,
    C4,
    C5,
    Enc,
}

impl ContextSource {
    pub const ALL: [ContextSource; 4] = [Self::C3, Self::C4, Self::C5, Self::Enc];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::C3 => "c3",
            Self::C4 => "c4",
            Self::C5 => "c5",
            Self::Enc => "enc",
        }
    }
}

impl fmt::Display for ContextSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownSource(s.to_string()))
    }
}

pub const STRIDES: [usize; 3] = [8, 16, 32];
const STEM: usize = 4;
const CHANNELS: [usize; 4] = [16, 32, 64, 64];

/// Non-overlapping `k × k` patch gather of an `h × w × c` row-major map into
/// `(h/k · w/k) × (k·k·c)`.
fn patch_index(h: usize, w: usize, c: usize, k: usize) -> Vec<usize> {
    let (oh, ow) = (h / k, w / k);
    let mut idx = Vec::with_capacity(h * w * c);
    for py in 0..oh {
        for px in 0..ow {
            for dy in 0..k {
                for dx in 0..k {
                    let base = ((py * k + dy) * w + px * k + dx) * c;
                    idx.extend(base..base + c);
                }
            }
        }
    }
    idx
}

/// Multi-scale features projected to the model width.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    /// c3, c4, c5 as `(h·w) × D`.
    pub levels: [Var; 3],
    pub sizes: [(usize, usize); 3],
}

/// Bias-free patchify convolutions: a 4×4 stem then three 2×2 stride-2
/// stages, giving strides 8, 16 and 32.
#[derive(Debug, Clone)]
pub struct Backbone {
    stem: ParamId,
    stages: [ParamId; 3],
    proj: [ParamId; 3],
}

impl Backbone {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, rng: &mut R) -> Self {
        let mut he = |name: String, fan_in: usize, out: usize, store: &mut ParamStore| {
            store.add(name, Tensor::randn(fan_in, out, (2.0 / fan_in as f64).sqrt(), rng), false)
        };
        let stem = he("backbone.stem".into(), STEM * STEM * 3, CHANNELS[0], store);
        let stages = [0, 1, 2].map(|i| he(format!("backbone.stage{}", i + 1), 4 * CHANNELS[i], CHANNELS[i + 1], store));
        let proj = [0, 1, 2].map(|i| {
            let c = CHANNELS[i + 1];
            store.add(
                format!("backbone.proj_c{}", i + 3),
                Tensor::randn(c, d, (1.0 / c as f64).sqrt(), rng),
                false,
            )
        });
        Self { stem, stages, proj }
    }

    pub fn forward(&self, s: &Session, frame: &ImageFrame) -> Features {
        let g = s.graph();
        let (h, w) = (frame.height(), frame.width());
        let img = g.constant(Tensor::from_vec(1, h * w * 3, frame.pixels().to_vec()));
        let (mut fh, mut fw) = (h / STEM, w / STEM);
        let patches = g.gather(img, Rc::new(patch_index(h, w, 3, STEM)), fh * fw, STEM * STEM * 3);
        let mut x = g.relu(g.matmul(patches, s.param(self.stem)));
        let mut levels = Vec::with_capacity(3);
        let mut sizes = [(0, 0); 3];
        for (i, stage) in self.stages.iter().enumerate() {
            let c = CHANNELS[i];
            let idx = patch_index(fh, fw, c, 2);
            fh /= 2;
            fw /= 2;
            let p = g.gather(x, Rc::new(idx), fh * fw, 4 * c);
            x = g.relu(g.matmul(p, s.param(*stage)));
            levels.push(g.matmul(x, s.param(self.proj[i])));
            sizes[i] = (fh, fw);
        }
        Features {
            levels: [levels[0], levels[1], levels[2]],
            sizes,
        }
    }
}

/// Fixed 2-D sinusoidal embedding of normalised token centres.
pub fn sine_position(d: usize, h: usize, w: usize) -> Tensor {
    let quarter = d / 4;
    let mut out = Tensor::zeros(h * w, d);
    for y in 0..h {
        for x in 0..w {
            let row = out.row_mut(y * w + x);
            let coords = [(y as f64 + 0.5) / h as f64, (x as f64 + 0.5) / w as f64];
            for (axis, p) in coords.iter().enumerate() {
                for i in 0..quarter {
                    let freq = 100f64.powf(i as f64 / quarter as f64);
                    let a = p * std::f64::consts::TAU * freq;
                    row[axis * 2 * quarter + 2 * i] = a.sin();
                    row[axis * 2 * quarter + 2 * i + 1] = a.cos();
                }
            }
        }
    }
    out
}

/// Tokens offered to the prompting and decoding stages.
#[derive(Debug, Clone)]
pub struct ContextTokens {
    pub values: Var,
    pub source: ContextSource,
    /// Level tag per token: 0 = c3, 1 = c4, 2 = c5.
    pub levels: Vec<u8>,
    /// Normalised `(x, y)` token centre.
    pub locations: Vec<(f64, f64)>,
}

impl ContextTokens {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Embedded level tokens before any encoder layer.
    pub embedded: [ContextTokens; 3],
    pub enc: ContextTokens,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    level_embed: ParamId,
    layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, heads: usize, ff: usize, n_layers: usize, rng: &mut R) -> Self {
        let level_embed = store.add("encoder.level_embed", Tensor::randn(3, d, 0.1, rng), false);
        let layers = (0..n_layers)
            .map(|i| EncoderLayer::new(store, &format!("encoder.layer{i}"), d, heads, ff, rng))
            .collect();
        Self { level_embed, layers }
    }

    pub fn forward(&self, s: &Session, f: &Features) -> EncoderOutput {
        let g = s.graph();
        let le = s.param(self.level_embed);
        let d = g.shape(f.levels[0]).1;
        let embedded: Vec<ContextTokens> = (0..3)
            .map(|l| {
                let (h, w) = f.sizes[l];
                let pos = g.constant(sine_position(d, h, w));
                let x = g.add(g.add_row(f.levels[l], g.slice_rows(le, l, 1)), pos);
                let locations = (0..h)
                    .flat_map(|y| (0..w).map(move |x| ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64)))
                    .collect();
                ContextTokens {
                    values: x,
                    source: ContextSource::ALL[l],
                    levels: vec![l as u8; h * w],
                    locations,
                }
            })
            .collect();
        let mut x = g.concat_rows(&embedded.iter().map(|c| c.values).collect::<Vec<_>>());
        for layer in &self.layers {
            x = layer.forward(s, x, None);
        }
        let enc = ContextTokens {
            values: x,
            source: ContextSource::Enc,
            levels: embedded.iter().flat_map(|c| c.levels.iter().copied()).collect(),
            locations: embedded.iter().flat_map(|c| c.locations.iter().copied()).collect(),
        };
        let [a, b, c]: [ContextTokens; 3] = embedded.try_into().expect("three levels");
        EncoderOutput {
            embedded: [a, b, c],
            enc,
        }
    }
}

pub fn select_context(out: &EncoderOutput, source: ContextSource) -> ContextTokens {
    match source {
        ContextSource::C3 => out.embedded[0].clone(),
        ContextSource::C4 => out.embedded[1].clone(),
        ContextSource::C5 => out.embedded[2].clone(),
        ContextSource::Enc => out.enc.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Detect,
    Track,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutput {
    pub kind: QueryKind,
    pub embedding: Vec<f64>,
    pub score: f64,
    pub bbox: Bbox,
}

/// Per-query results on the graph; detect rows come first.
#[derive(Debug, Clone, Copy)]
pub struct DecoderOutput {
    pub embeddings: Var,
    pub logits: Var,
    pub scores: Var,
    pub boxes: Var,
    pub n_detect: usize,
}

impl DecoderOutput {
    pub fn len(&self, g: &Graph) -> usize {
        g.shape(self.embeddings).0
    }

    pub fn to_query_outputs(&self, g: &Graph) -> Vec<QueryOutput> {
        let emb = g.value(self.embeddings);
        let scores = g.value(self.scores);
        let boxes = g.value(self.boxes);
        (0..emb.rows())
            .map(|i| QueryOutput {
                kind: if i < self.n_detect { QueryKind::Detect } else { QueryKind::Track },
                embedding: emb.row(i).to_vec(),
                score: scores.get(i, 0),
                bbox: Bbox::from_slice(boxes.row(i)),
            })
            .collect()
    }
}

/// Prior probability of the class head at initialisation.
pub const CLASS_PRIOR: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Decoder {
    pub n_detect: usize,
    detect_queries: ParamId,
    detect_refs: ParamId,
    query_pos: Linear,
    layers: Vec<DecoderBlock>,
    class_head: Linear,
    box_hidden: Linear,
    box_out: Linear,
}

/// Reference boxes on a near-square grid with side 0.2.
pub fn grid_refs(n: usize) -> Tensor {
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols.max(1));
    let mut t = Tensor::zeros(n, 4);
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        let b = [
            (c as f64 + 0.5) / cols as f64,
            (r as f64 + 0.5) / rows as f64,
            0.2,
            0.2,
        ];
        for (j, v) in b.iter().enumerate() {
            t.set(i, j, inverse_sigmoid(*v));
        }
    }
    t
}

impl Decoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d: usize,
        heads: usize,
        ff: usize,
        n_layers: usize,
        n_detect: usize,
        rng: &mut R,
    ) -> Self {
        let detect_queries = store.add("decoder.detect_queries", Tensor::randn(n_detect, d, 1.0, rng), false);
        let detect_refs = store.add("decoder.detect_refs", grid_refs(n_detect), false);
        let query_pos = Linear::new(store, "decoder.query_pos", 4, d, true, false, rng);
        let layers = (0..n_layers)
            .map(|i| DecoderBlock::new(store, &format!("decoder.layer{i}"), d, heads, ff, rng))
            .collect();
        let class_head = Linear::new(store, "decoder.class", d, 1, true, false, rng);
        let cb = class_head.bias.expect("class head has a bias");
        store.value_mut(cb).data_mut()[0] = -((1.0 - CLASS_PRIOR) / CLASS_PRIOR).ln();
        let box_hidden = Linear::new(store, "decoder.box_hidden", d, d, true, false, rng);
        let box_out = Linear::new(store, "decoder.box_out", d, 4, true, false, rng);
        store.value_mut(box_out.weight).data_mut().iter_mut().for_each(|v| *v *= 0.01);
        Self {
            n_detect,
            detect_queries,
            detect_refs,
            query_pos,
            layers,
            class_head,
            box_hidden,
            box_out,
        }
    }

    fn run(&self, s: &Session, queries: Var, ref_logits: Var, context: Var, n_detect: usize) -> DecoderOutput {
        let g = s.graph();
        let pos = self.query_pos.forward(s, g.sigmoid(ref_logits));
        let mut x = queries;
        for layer in &self.layers {
            x = layer.forward(s, x, Some(pos), context);
        }
        let logits = self.class_head.forward(s, x);
        let delta = self.box_out.forward(s, g.relu(self.box_hidden.forward(s, x)));
        DecoderOutput {
            embeddings: x,
            logits,
            scores: g.sigmoid(logits),
            boxes: g.sigmoid(g.add(ref_logits, delta)),
            n_detect,
        }
    }

    /// Detect queries followed by `track_queries`, which are anchored on
    /// their previous boxes.
    pub fn forward(&self, s: &Session, track_queries: Var, track_boxes: &[Bbox], context: Var) -> Result<DecoderOutput> {
        let g = s.graph();
        let (m, d) = g.shape(track_queries);
        let dq = s.param(self.detect_queries);
        if m != track_boxes.len() || d != g.shape(dq).1 {
            return Err(Error::Shape(format!(
                "{m}x{d} track queries with {} boxes",
                track_boxes.len()
            )));
        }
        if m == 0 {
            return Ok(self.forward_detect_only(s, context));
        }
        let refs: Vec<f64> = track_boxes
            .iter()
            .flat_map(|b| b.to_array().map(inverse_sigmoid))
            .collect();
        let tr = g.constant(Tensor::from_vec(m, 4, refs));
        let queries = g.concat_rows(&[dq, track_queries]);
        let ref_logits = g.concat_rows(&[s.param(self.detect_refs), tr]);
        Ok(self.run(s, queries, ref_logits, context, self.n_detect))
    }

    pub fn forward_detect_only(&self, s: &Session, context: Var) -> DecoderOutput {
        self.run(s, s.param(self.detect_queries), s.param(self.detect_refs), context, self.n_detect)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(size: usize, rng: &mut ChaCha8Rng) -> ImageFrame {
        let px = (0..size * size * 3).map(|_| rng.random::<f64>()).collect();
        ImageFrame::new(size, size, px, 1).unwrap()
    }

    #[test]
    fn patch_index_matches_direct_loop() {
        let (h, w, c) = (4, 6, 2);
        let idx = patch_index(h, w, c, 2);
        let row = w / 2 + 1; // patch (1, 1)
        let expect = ((2 * w) + 2) * c + 1; // dy=0, dx=0, channel 1
        assert_eq!(idx[row * 4 * c + 1], expect);
        assert_eq!(idx.len(), h * w * c);
    }

    #[test]
    fn feature_sizes_follow_strides() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, 64, &mut rng);
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let f = bb.forward(&s, &frame(64, &mut rng));
        assert_eq!(f.sizes, [(8, 8), (4, 4), (2, 2)]);
        assert_eq!(g.shape(f.levels[0]), (64, 64));
        assert_eq!(g.shape(f.levels[2]), (4, 64));

        let zero = ImageFrame::new(64, 64, vec![0.0; 64 * 64 * 3], 1).unwrap();
        let f = bb.forward(&s, &zero);
        for l in f.levels {
            assert!(g.value(l).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn frame_size_must_be_stride_aligned() {
        assert!(matches!(
            ImageFrame::new(48, 64, vec![0.0; 48 * 64 * 3], 1),
            Err(Error::FrameSize { .. })
        ));
    }

    #[test]
    fn encoder_token_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, 64, &mut rng);
        let enc = Encoder::new(&mut store, 64, 4, 128, 0, &mut rng);
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let out = enc.forward(&s, &bb.forward(&s, &frame(64, &mut rng)));
        assert_eq!(out.enc.len(), 84);
        assert_eq!(g.shape(out.enc.values), (84, 64));
        let counts: Vec<usize> = [ContextSource::C3, ContextSource::C4, ContextSource::C5]
            .iter()
            .map(|&c| select_context(&out, c).len())
            .collect();
        assert_eq!(counts, [64, 16, 4]);
        let c4 = select_context(&out, ContextSource::C4);
        assert!(c4.levels.iter().all(|&l| l == 1));
        assert_eq!("Enc".parse::<ContextSource>().unwrap(), ContextSource::Enc);
        assert!("c6".parse::<ContextSource>().is_err());
    }

    #[test]
    fn decoder_counts_and_box_validity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let dec = Decoder::new(&mut store, 64, 4, 128, 2, 20, &mut rng);
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let ctx = g.constant(Tensor::randn(10, 64, 1.0, &mut rng));
        let tq = g.constant(Tensor::randn(3, 64, 1.0, &mut rng));
        let boxes = [Bbox::new(0.3, 0.3, 0.1, 0.2); 3];
        let out = dec.forward(&s, tq, &boxes, ctx).unwrap();
        let q = out.to_query_outputs(&g);
        assert_eq!(q.len(), 23);
        assert_eq!(q.iter().filter(|o| o.kind == QueryKind::Track).count(), 3);
        for o in &q {
            assert!((0.0..=1.0).contains(&o.score));
            assert!(o.bbox.is_valid(), "{:?}", o.bbox);
        }
        assert!((q[0].score - CLASS_PRIOR).abs() < 0.05);
    }

    #[test]
    fn empty_track_set_matches_detect_only_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let dec = Decoder::new(&mut store, 64, 4, 128, 2, 20, &mut rng);
        let ctx = Tensor::randn(10, 64, 1.0, &mut rng);
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let c = g.constant(ctx.clone());
        let a = dec.forward(&s, g.constant(Tensor::zeros(0, 64)), &[], c).unwrap();
        let g2 = Graph::new();
        let s2 = Session::new(&g2, &store);
        let b = dec.forward_detect_only(&s2, g2.constant(ctx));
        assert_eq!(a.to_query_outputs(&g), b.to_query_outputs(&g2));
    }

    #[test]
    fn bbox_rect_round_trip() {
        let b = Bbox::new(0.5, 0.25, 0.2, 0.1);
        let r = b.to_rect(64, 32);
        assert_eq!((r.left, r.top, r.width, r.height), (25.6, 6.4, 12.8, 3.2));
        let back = Bbox::from_rect(&r, 64, 32);
        for (x, y) in back.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
