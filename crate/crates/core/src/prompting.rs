//! Visual context prompting, visual-language mixing and query fusion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{DecoderBlock, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{ParamId, ParamStore, Session};
use crate::perception::ContextTokens;
use crate::tensor::Tensor;
use crate::text::{Adapter, TextEncoder};
use crate::trackbook::{tokenize, PromptTemplate, Trackbook, Vocabulary};

/// Which prompts feed the pseudo textual description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Both,
    /// A learned query row attends over the textual prompts.
    TextualOnly,
    /// The adapted visual prompts are used directly.
    VisualOnly,
}

/// One decoder block: queries are the previous track queries, keys and
/// values the context tokens.
#[derive(Debug, Clone)]
pub struct Vcp {
    block: DecoderBlock,
}

impl Vcp {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, heads: usize, ff: usize, rng: &mut R) -> Self {
        Self {
            block: DecoderBlock::new(store, "vcp", d, heads, ff, rng),
        }
    }

    /// `M × D` visual prompts.
    pub fn forward(&self, s: &Session, q_prev: Var, context: &ContextTokens) -> Result<Var> {
        let g = s.graph();
        let (m, d) = g.shape(q_prev);
        let (_, dc) = g.shape(context.values);
        if d != dc {
            return Err(Error::Shape(format!("track queries are {d} wide, context {dc}")));
        }
        if m == 0 {
            return Ok(g.constant(Tensor::zeros(0, d)));
        }
        Ok(self.block.forward(s, q_prev, None, context.values))
    }
}

/// Frozen-encoder sentence embeddings of a templated Trackbook, computed
/// once per (book, template, token length).
#[derive(Debug, Clone, PartialEq)]
pub struct TextualPrompts {
    pub values: Tensor,
    pub book_version: String,
    pub template: PromptTemplate,
    pub token_len: usize,
}

impl TextualPrompts {
    pub fn compute(
        store: &ParamStore,
        enc: &TextEncoder,
        vocab: &Vocabulary,
        book: &Trackbook,
        template: &PromptTemplate,
        token_len: usize,
    ) -> Result<Self> {
        let seqs = book
            .render(template)
            .iter()
            .map(|s| tokenize(s, vocab, token_len))
            .collect::<Result<Vec<_>>>()?;
        let g = crate::graph::Graph::new();
        let s = Session::new(&g, store);
        let out = enc.encode_sentences(&s, &seqs)?;
        let values = g.value(out).clone();
        Ok(Self {
            values,
            book_version: book.version().to_string(),
            template: template.clone(),
            token_len,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }
}

/// Adapter plus one cross-attention block from adapted visual prompts to
/// adapted textual prompts.
#[derive(Debug, Clone)]
pub struct Vlm {
    pub adapter: Option<Adapter>,
    cross: MultiHeadAttention,
    ln1: LayerNorm,
    ff: FeedForward,
    ln2: LayerNorm,
    query_bank: ParamId,
    pub mode: PromptMode,
}

impl Vlm {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d: usize,
        heads: usize,
        ff: usize,
        adapter_hidden: Option<usize>,
        mode: PromptMode,
        rng: &mut R,
    ) -> Self {
        let adapter = adapter_hidden.map(|h| Adapter::new(store, "adapter", d, h, rng));
        Self {
            adapter,
            cross: MultiHeadAttention::new(store, "vlm.cross_attn", d, heads, false, rng),
            ln1: LayerNorm::new(store, "vlm.ln1", d, false),
            ff: FeedForward::new(store, "vlm.ff", d, ff, false, rng),
            ln2: LayerNorm::new(store, "vlm.ln2", d, false),
            query_bank: store.add("vlm.query_bank", Tensor::randn(1, d, 1.0, rng), false),
            mode,
        }
    }

    fn adapt(&self, s: &Session, x: Var) -> Var {
        match &self.adapter {
            Some(a) => a.forward(s, x),
            None => x,
        }
    }

    /// `M × D` PTD for `M × D` visual prompts.
    pub fn forward(&self, s: &Session, enc: &TextEncoder, v: Var, t: &TextualPrompts) -> Result<Var> {
        let g = s.graph();
        let (m, d) = g.shape(v);
        if m == 0 {
            return Ok(g.constant(Tensor::zeros(0, d)));
        }
        if t.values.cols() != d {
            return Err(Error::Shape(format!(
                "textual prompts are {} wide, visual {d}",
                t.values.cols()
            )));
        }
        let x = match self.mode {
            PromptMode::TextualOnly => g.select_rows(s.param(self.query_bank), &vec![0; m]),
            _ => self.adapt(s, enc.encode_visual(s, v)?),
        };
        if self.mode == PromptMode::VisualOnly {
            return Ok(x);
        }
        let keys = self.adapt(s, g.constant(t.values.clone()));
        let x = self.ln1.forward(s, g.add(x, self.cross.forward(s, x, keys, keys, None)));
        Ok(self.ln2.forward(s, g.add(x, self.ff.forward(s, x))))
    }
}

/// `LayerNorm(Linear([q_prev, l]))`.
#[derive(Debug, Clone)]
pub struct Fusion {
    linear: Linear,
    ln: LayerNorm,
}

impl Fusion {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, rng: &mut R) -> Self {
        Self {
            linear: Linear::new(store, "fuse.linear", 2 * d, d, true, false, rng),
            ln: LayerNorm::new(store, "fuse.ln", d, false),
        }
    }

    pub fn forward(&self, s: &Session, q_prev: Var, l: Var) -> Result<Var> {
        let g = s.graph();
        let (a, b) = (g.shape(q_prev).0, g.shape(l).0);
        if a != b {
            return Err(Error::Shape(format!("{a} track queries but {b} PTD rows")));
        }
        if a == 0 {
            return Ok(q_prev);
        }
        let x = g.concat_cols(&[q_prev, l]);
        Ok(self.ln.forward(s, self.linear.forward(s, x)))
    }
}
