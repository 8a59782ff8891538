//! Layers built from [`ParamStore`] entries and evaluated through a [`Session`].

use std::rc::Rc;

use rand::Rng;

use crate::graph::{Mask, Var};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::Tensor;

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::randn(rows, cols, (2.0 / (rows + cols) as f64).sqrt(), rng)
}

/// `x · W (+ b)` with `W: in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        frozen: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(d_in, d_out, rng), frozen);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(1, d_out), frozen));
        Self { weight, bias }
    }

    /// Wraps an already registered weight.
    pub fn from_weight(weight: ParamId) -> Self {
        Self { weight, bias: None }
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        let g = s.graph();
        let y = g.matmul(x, s.param(self.weight));
        match self.bias {
            Some(b) => g.add_row(y, s.param(b)),
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, frozen: bool) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::filled(1, d, 1.0), frozen),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, d), frozen),
        }
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        s.graph().layer_norm(x, s.param(self.gain), s.param(self.bias))
    }
}

/// Scaled dot-product attention over `heads` equal column groups. Projections
/// carry no bias.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    pub o: ParamId,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        frozen: bool,
        rng: &mut R,
    ) -> Self {
        assert_eq!(d % heads, 0, "model dim must divide into heads");
        let mut w = |n: &str| store.add(format!("{name}.{n}"), glorot(d, d, rng), frozen);
        Self {
            q: w("q"),
            k: w("k"),
            v: w("v"),
            o: w("o"),
            heads,
        }
    }

    /// `query: n × d`, `key`/`value: m × d`; `mask` is `n × m`.
    pub fn forward(&self, s: &Session, query: Var, key: Var, value: Var, mask: Option<Rc<Mask>>) -> Var {
        let g = s.graph();
        let q = g.matmul(query, s.param(self.q));
        let k = g.matmul(key, s.param(self.k));
        let v = g.matmul(value, s.param(self.v));
        let d = g.shape(q).1;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let scores = g.scale(g.matmul_nt(qh, kh), scale);
                let attn = g.softmax_rows(scores, mask.clone());
                g.matmul(attn, vh)
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        g.matmul(cat, s.param(self.o))
    }
}

/// `relu(x · W1) · W2`, no biases.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl FeedForward {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        hidden: usize,
        frozen: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: store.add(format!("{name}.w1"), glorot(d, hidden, rng), frozen),
            w2: store.add(format!("{name}.w2"), glorot(hidden, d, rng), frozen),
        }
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        let g = s.graph();
        g.matmul(g.relu(g.matmul(x, s.param(self.w1))), s.param(self.w2))
    }
}

/// Post-norm self-attention + feed-forward layer.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff: FeedForward,
    pub ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, heads: usize, ff: usize, rng: &mut R) -> Self {
        Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, false, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d, false),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, ff, false, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d, false),
        }
    }

    /// `pos` is added to queries and keys only.
    pub fn forward(&self, s: &Session, x: Var, pos: Option<Var>) -> Var {
        let g = s.graph();
        let qk = pos.map_or(x, |p| g.add(x, p));
        let x = self.ln1.forward(s, g.add(x, self.attn.forward(s, qk, qk, x, None)));
        self.ln2.forward(s, g.add(x, self.ff.forward(s, x)))
    }
}

/// Post-norm decoder block: self-attention, cross-attention to a context,
/// feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub self_attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
    pub ln3: LayerNorm,
}

impl DecoderBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, heads: usize, ff: usize, rng: &mut R) -> Self {
        Self {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, heads, false, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d, false),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, heads, false, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d, false),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, ff, false, rng),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), d, false),
        }
    }

    /// `query_pos`, when given, is added to the self-attention queries/keys
    /// and the cross-attention queries.
    pub fn forward(&self, s: &Session, x: Var, query_pos: Option<Var>, context: Var) -> Var {
        let g = s.graph();
        let with_pos = |x: Var| query_pos.map_or(x, |p| g.add(x, p));
        let q = with_pos(x);
        let x = self.ln1.forward(s, g.add(x, self.self_attn.forward(s, q, q, x, None)));
        let q = with_pos(x);
        let x = self.ln2.forward(s, g.add(x, self.cross_attn.forward(s, q, context, context, None)));
        self.ln3.forward(s, g.add(x, self.ff.forward(s, x)))
    }
}
