//! Frozen text encoder, trainable adapter and the joint visual/text pass.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{Container, DType};
use crate::error::{Error, Result};
use crate::graph::{Mask, Var};
use crate::nn::{FeedForward, LayerNorm, MultiHeadAttention};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::Tensor;
use crate::trackbook::{TokenSequence, Vocabulary};

pub const PREFIX: &str = "text.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub l_max: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers: 2,
            heads: 4,
            ff: 128,
            l_max: 32,
        }
    }
}

#[derive(Debug, Clone)]
struct TextLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: FeedForward,
}

/// Pre-norm transformer with all parameters registered frozen under
/// `text.`. Sentences use causal attention and pool at EOS; visual prompt
/// tokens get no positional embedding and attend fully within their block.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    vocab_size: usize,
    token_embedding: ParamId,
    positional_embedding: ParamId,
    layers: Vec<TextLayer>,
    final_ln: LayerNorm,
    /// Frozen projection for visual prompts when their width differs;
    /// `None` is the identity.
    entry: Option<ParamId>,
}

fn word_row(seed: u64, word: &str, d: usize) -> Tensor {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(word.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    Tensor::randn(1, d, 0.02, &mut ChaCha8Rng::from_seed(digest))
}

impl TextEncoder {
    /// Token rows are derived from a hash of each word so any vocabulary
    /// sees the same embedding for the same word under one seed.
    pub fn new(
        store: &mut ParamStore,
        config: TextEncoderConfig,
        vocab: &Vocabulary,
        visual_dim: usize,
        seed: u64,
    ) -> Self {
        let d = config.d;
        let rows: Vec<Tensor> = vocab.words().iter().map(|w| word_row(seed, w, d)).collect();
        let refs: Vec<&Tensor> = rows.iter().collect();
        let token_embedding = store.add(format!("{PREFIX}token_embedding"), Tensor::vstack(&refs), true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positional_embedding = store.add(
            format!("{PREFIX}positional_embedding"),
            Tensor::randn(config.l_max, d, 0.01, &mut rng),
            true,
        );
        let layers = (0..config.layers)
            .map(|i| {
                let n = format!("{PREFIX}layer{i}");
                TextLayer {
                    ln1: LayerNorm::new(store, &format!("{n}.ln1"), d, true),
                    attn: MultiHeadAttention::new(store, &format!("{n}.attn"), d, config.heads, true, &mut rng),
                    ln2: LayerNorm::new(store, &format!("{n}.ln2"), d, true),
                    ff: FeedForward::new(store, &format!("{n}.ff"), d, config.ff, true, &mut rng),
                }
            })
            .collect();
        let final_ln = LayerNorm::new(store, &format!("{PREFIX}final_ln"), d, true);
        let entry = (visual_dim != d).then(|| {
            let w = Tensor::randn(visual_dim, d, 1.0 / (visual_dim as f64).sqrt(), &mut rng);
            store.add(format!("{PREFIX}visual_entry"), w, true)
        });
        Self {
            config,
            vocab_size: vocab.len(),
            token_embedding,
            positional_embedding,
            layers,
            final_ln,
            entry,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn check(&self, seq: &TokenSequence) -> Result<()> {
        if seq.len() > self.config.l_max {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max: self.config.l_max,
            });
        }
        if let Some(&id) = seq.ids().iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                size: self.vocab_size,
            });
        }
        Ok(())
    }

    fn embed(&self, s: &Session, seq: &TokenSequence) -> Var {
        let g = s.graph();
        let rows: Vec<usize> = seq.ids().iter().map(|&t| t as usize).collect();
        let tok = g.select_rows(s.param(self.token_embedding), &rows);
        let pos = g.slice_rows(s.param(self.positional_embedding), 0, seq.len());
        g.add(tok, pos)
    }

    fn enter_visual(&self, s: &Session, v: Var) -> Result<Var> {
        let g = s.graph();
        let cols = g.shape(v).1;
        match self.entry {
            None if cols == self.config.d => Ok(v),
            Some(p) if s.store().value(p).rows() == cols => Ok(g.matmul(v, s.param(p))),
            _ => Err(Error::Shape(format!(
                "visual prompts have {cols} columns, encoder expects {}",
                self.entry.map_or(self.config.d, |p| s.store().value(p).rows())
            ))),
        }
    }

    fn run(&self, s: &Session, mut x: Var, mask: Option<Rc<Mask>>) -> Var {
        let g = s.graph();
        if self.layers.is_empty() {
            return x;
        }
        for l in &self.layers {
            let h = l.ln1.forward(s, x);
            x = g.add(x, l.attn.forward(s, h, h, h, mask.clone()));
            let h = l.ln2.forward(s, x);
            x = g.add(x, l.ff.forward(s, h));
        }
        self.final_ln.forward(s, x)
    }

    /// `1 × D` hidden state at the EOS position.
    pub fn encode_sentence(&self, s: &Session, seq: &TokenSequence) -> Result<Var> {
        self.check(seq)?;
        let x = self.embed(s, seq);
        let y = self.run(s, x, Some(Rc::new(Mask::causal(seq.len()))));
        Ok(s.graph().slice_rows(y, seq.eos_position(), 1))
    }

    /// `M × D`, one row per visual prompt.
    pub fn encode_visual(&self, s: &Session, v: Var) -> Result<Var> {
        let x = self.enter_visual(s, v)?;
        if s.graph().shape(x).0 == 0 {
            return Ok(x);
        }
        Ok(self.run(s, x, None))
    }

    /// One pass over `[visual; sentence_1; ..; sentence_K]` under a block
    /// mask, returning the visual rows and the EOS row of each sentence.
    pub fn encode_joint(&self, s: &Session, v: Var, sentences: &[TokenSequence]) -> Result<(Var, Var)> {
        let g = s.graph();
        for seq in sentences {
            self.check(seq)?;
        }
        let x_v = self.enter_visual(s, v)?;
        let m = g.shape(x_v).0;
        let mut parts = vec![x_v];
        let mut eos = Vec::with_capacity(sentences.len());
        let mut offset = m;
        for seq in sentences {
            parts.push(self.embed(s, seq));
            eos.push(offset + seq.eos_position());
            offset += seq.len();
        }
        if offset == 0 {
            let empty = g.constant(Tensor::zeros(0, self.config.d));
            return Ok((empty, empty));
        }
        let x = g.concat_rows(&parts);
        let lens: Vec<usize> = sentences.iter().map(TokenSequence::len).collect();
        let y = self.run(s, x, Some(Rc::new(build_joint_mask(m, &lens))));
        Ok((g.slice_rows(y, 0, m), g.select_rows(y, &eos)))
    }

    /// `K × D` sentence embeddings via one masked pass.
    pub fn encode_sentences(&self, s: &Session, sentences: &[TokenSequence]) -> Result<Var> {
        let empty = s.graph().constant(Tensor::zeros(0, self.config.d));
        Ok(self.encode_joint(s, empty, sentences)?.1)
    }

    /// Parameter names inside an import container, paired with their ids.
    pub fn named_params<'a>(&self, store: &'a ParamStore) -> Vec<(String, ParamId)> {
        store
            .iter()
            .filter_map(|(id, p)| {
                let short = p.name.strip_prefix(PREFIX)?;
                (short != "visual_entry").then(|| (short.to_string(), id))
            })
            .collect()
    }

    pub fn export_weights(&self, store: &ParamStore) -> Container {
        let mut c = Container::new();
        for (name, id) in self.named_params(store) {
            c.push(name, DType::F32, store.value(id).clone());
        }
        c
    }

    /// Replaces every encoder weight with the container's; all names must be
    /// present with matching shapes.
    pub fn import_weights(&self, store: &mut ParamStore, c: &Container) -> Result<()> {
        let named = self.named_params(store);
        for (name, id) in &named {
            let t = c.get(name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            let want = store.value(*id).shape();
            if t.value.shape() != want {
                return Err(Error::Shape(format!(
                    "{name}: expected {want:?}, found {:?}",
                    t.value.shape()
                )));
            }
        }
        for (name, id) in named {
            *store.value_mut(id) = c.get(&name).expect("checked above").value.clone();
        }
        Ok(())
    }
}

/// Block mask over `M` visual positions followed by one block per sentence;
/// the visual block is full, sentence blocks are causal.
pub fn build_joint_mask(m: usize, sentence_lengths: &[usize]) -> Mask {
    let n = m + sentence_lengths.iter().sum::<usize>();
    let mut mask = Mask {
        rows: n,
        cols: n,
        allowed: vec![false; n * n],
    };
    for i in 0..m {
        for j in 0..m {
            mask.allowed[i * n + j] = true;
        }
    }
    let mut start = m;
    for &len in sentence_lengths {
        for i in 0..len {
            for j in 0..=i {
                mask.allowed[(start + i) * n + start + j] = true;
            }
        }
        start += len;
    }
    mask
}

/// Residual MLP `relu(x·W1)·W2 + x`.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl Adapter {
    /// `W1` small random, `W2` zero, so the adapter starts as the identity.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w1: store.add(format!("{name}.w1"), Tensor::randn(d, hidden, 0.02, rng), false),
            w2: store.add(format!("{name}.w2"), Tensor::zeros(hidden, d), false),
        }
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        adapt(s, x, s.param(self.w1), s.param(self.w2))
    }
}

pub fn adapt(s: &Session, x: Var, w1: Var, w2: Var) -> Var {
    let g = s.graph();
    g.add(g.matmul(g.relu(g.matmul(x, w1)), w2), x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::graph::Graph;
    use crate::trackbook::{build_vocabulary, tokenize};

    fn setup(layers: usize) -> (ParamStore, TextEncoder, Vocabulary) {
        let vocab = build_vocabulary(&["a b c d e f g h"]).unwrap();
        let mut store = ParamStore::new();
        let cfg = TextEncoderConfig {
            layers,
            ..Default::default()
        };
        let enc = TextEncoder::new(&mut store, cfg, &vocab, 64, 11);
        (store, enc, vocab)
    }

    fn sentence_vec(store: &ParamStore, enc: &TextEncoder, seq: &TokenSequence) -> Tensor {
        let g = Graph::new();
        let s = Session::new(&g, store);
        let v = enc.encode_sentence(&s, seq).unwrap();
        let out = g.value(v).clone();
        out
    }

    #[test]
    fn all_encoder_params_are_frozen() {
        let (store, _, _) = setup(2);
        assert!(store.iter().all(|(_, p)| p.frozen));
        assert!(store.find("text.layer1.attn.q").is_some());
        assert!(store.find("text.final_ln.gain").is_some());
    }

    #[test]
    fn zero_layers_is_embedding_lookup() {
        let (store, enc, vocab) = setup(0);
        let seq = tokenize("a b c", &vocab, 6).unwrap();
        let out = sentence_vec(&store, &enc, &seq);
        let tok = store.value(store.find("text.token_embedding").unwrap());
        let pos = store.value(store.find("text.positional_embedding").unwrap());
        let e = seq.eos_position();
        for c in 0..64 {
            assert_eq!(out.get(0, c), tok.get(2, c) + pos.get(e, c));
        }
    }

    #[test]
    fn sentence_encoding_is_deterministic_and_order_sensitive() {
        let (store, enc, vocab) = setup(2);
        let a = tokenize("a b c d", &vocab, 8).unwrap();
        let b = tokenize("a c b d", &vocab, 8).unwrap();
        let va = sentence_vec(&store, &enc, &a);
        assert_eq!(va, sentence_vec(&store, &enc, &a));
        assert!(va.max_abs_diff(&sentence_vec(&store, &enc, &b)) > 1e-6);
    }

    #[test]
    fn sentence_attention_is_causal() {
        let (store, enc, vocab) = setup(2);
        let seq = tokenize("a b c d e", &vocab, 10).unwrap();
        let hidden = |ids: &[u32]| {
            let g = Graph::new();
            let s = Session::new(&g, &store);
            let rows: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
            let tok = g.select_rows(s.param(enc.token_embedding), &rows);
            let pos = g.slice_rows(s.param(enc.positional_embedding), 0, ids.len());
            let y = enc.run(&s, g.add(tok, pos), Some(Rc::new(Mask::causal(ids.len()))));
            let out = g.value(y).clone();
            out
        };
        let base = hidden(seq.ids());
        for i in 0..seq.len() - 1 {
            let mut ids = seq.ids().to_vec();
            for t in ids.iter_mut().skip(i + 1) {
                *t = 0;
            }
            let cut = hidden(&ids);
            for r in 0..=i {
                assert_eq!(cut.row(r), base.row(r));
            }
        }
    }

    #[test]
    fn visual_encoding_shape_and_equivariance() {
        let (store, enc, _) = setup(0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let v = Tensor::randn(1, 64, 1.0, &mut rng);
        let out = enc.encode_visual(&s, g.constant(v.clone())).unwrap();
        assert_eq!(*g.value(out), v);

        let (store, enc, _) = setup(2);
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let row = Tensor::randn(1, 64, 1.0, &mut rng);
        let other = Tensor::randn(2, 64, 1.0, &mut rng);
        let v = Tensor::vstack(&[&row, &other, &row]);
        let out = g.value(enc.encode_visual(&s, g.constant(v)).unwrap()).clone();
        assert_eq!(out.shape(), (4, 64));
        assert!(Tensor::from_vec(1, 64, out.row(0).to_vec())
            .max_abs_diff(&Tensor::from_vec(1, 64, out.row(3).to_vec()))
            < 1e-12);

        let bad = g.constant(Tensor::zeros(2, 10));
        assert!(matches!(enc.encode_visual(&s, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn entry_projection_when_widths_differ() {
        let vocab = build_vocabulary(&["a"]).unwrap();
        let mut store = ParamStore::new();
        let enc = TextEncoder::new(&mut store, TextEncoderConfig::default(), &vocab, 32, 1);
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let out = enc.encode_visual(&s, g.constant(Tensor::filled(3, 32, 0.1))).unwrap();
        assert_eq!(g.shape(out), (3, 64));
        assert!(store.get(store.find("text.visual_entry").unwrap()).frozen);
    }

    #[test]
    fn joint_mask_examples() {
        let m = build_joint_mask(2, &[]);
        assert!(m.allowed.iter().all(|&x| x));
        let m = build_joint_mask(0, &[3]);
        assert_eq!(m, Mask::causal(3));
        let m = build_joint_mask(1, &[2, 2]);
        let expect = [
            [1, 0, 0, 0, 0],
            [0, 1, 0, 0, 0],
            [0, 1, 1, 0, 0],
            [0, 0, 0, 1, 0],
            [0, 0, 0, 1, 1],
        ];
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(m.get(i, j), expect[i][j] == 1, "({i},{j})");
            }
        }
    }

    #[test]
    fn joint_with_no_sentences_matches_visual() {
        let (store, enc, _) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let v = g.constant(Tensor::randn(3, 64, 1.0, &mut rng));
        let (jv, jt) = enc.encode_joint(&s, v, &[]).unwrap();
        assert_eq!(g.shape(jt), (0, 64));
        let sv = enc.encode_visual(&s, v).unwrap();
        assert!(g.value(jv).max_abs_diff(&g.value(sv)) <= 1e-12);
    }

    #[test]
    fn text_changes_leave_visual_rows_bit_identical() {
        let (store, enc, vocab) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = Tensor::randn(4, 64, 1.0, &mut rng);
        let run = |sents: &[&str]| {
            let seqs: Vec<_> = sents.iter().map(|x| tokenize(x, &vocab, 7).unwrap()).collect();
            let g = Graph::new();
            let s = Session::new(&g, &store);
            let (jv, _) = enc.encode_joint(&s, g.constant(v.clone()), &seqs).unwrap();
            let out = g.value(jv).clone();
            out
        };
        assert_eq!(run(&["a b", "c d e"]), run(&["h g", "f e d c"]));
    }

    #[test]
    fn adapter_examples() {
        let mut store = ParamStore::new();
        let w1 = store.add("w1", Tensor::scalar(3.0), false);
        let w2 = store.add("w2", Tensor::scalar(0.5), false);
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let y = adapt(&s, g.constant(Tensor::scalar(2.0)), s.param(w1), s.param(w2));
        assert_eq!(g.scalar(y), 5.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let a = Adapter::new(&mut store, "adapter", 8, 4, &mut rng);
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let x = Tensor::randn(3, 8, 1.0, &mut rng);
        assert_eq!(*g.value(a.forward(&s, g.constant(x.clone()))), x);
        let z = a.forward(&s, g.constant(Tensor::zeros(3, 8)));
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adapter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(3, 6, 1.0, &mut rng);
        let w1 = Tensor::randn(6, 3, 1.0, &mut rng);
        let w2 = Tensor::randn(3, 6, 1.0, &mut rng);
        let t = Tensor::randn(3, 6, 1.0, &mut rng);
        let store = ParamStore::new();
        check_gradients(&[x, w1, w2], |g, v| {
            let s = Session::new(g, &store);
            let y = adapt(&s, v[0], v[1], v[2]);
            g.sum(g.mul(g.mul(y, y), g.constant(t.clone())))
        })
        .unwrap();
    }

    #[test]
    fn weight_import_round_trip() {
        let (mut store, enc, vocab) = setup(2);
        let c = enc.export_weights(&store);
        assert!(c.get("layer0.attn.q").is_some());
        assert!(c.get("positional_embedding").is_some());
        let bytes = c.to_bytes();
        let (mut other, enc2, _) = {
            let mut st = ParamStore::new();
            let e = TextEncoder::new(&mut st, TextEncoderConfig::default(), &vocab, 64, 999);
            (st, e, ())
        };
        assert_ne!(other.frozen_checksum(), store.frozen_checksum());
        let loaded = Container::from_bytes(&bytes).unwrap();
        enc2.import_weights(&mut other, &loaded).unwrap();
        enc.import_weights(&mut store, &loaded).unwrap();
        assert_eq!(other.frozen_checksum(), store.frozen_checksum());

        let mut broken = loaded.clone();
        broken.tensors.retain(|t| t.name != "final_ln.bias");
        assert!(matches!(
            enc.import_weights(&mut store, &broken),
            Err(Error::MissingTensor(_))
        ));
    }
}
