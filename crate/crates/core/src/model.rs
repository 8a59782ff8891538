//! The full tracker network and its clip-level training forward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{assign, clip_loss_var, ClipLossReport, FocalParams, FrameOutputsVar, GtTarget, LossWeights, QueryRole};
use crate::optim::Adam;
use crate::params::{ParamStore, Session};
use crate::perception::{
    select_context, Backbone, Bbox, ContextSource, Decoder, DecoderOutput, Encoder, ImageFrame, QueryOutput,
};
use crate::prompting::{Fusion, PromptMode, TextualPrompts, Vcp, Vlm};
use crate::tensor::Tensor;
use crate::text::{TextEncoder, TextEncoderConfig};
use crate::trackbook::{build_vocabulary, PromptTemplate, Trackbook, Vocabulary, DEFAULT_TOKEN_LEN};
use crate::tracker::{FrameModel, TrackQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub ff: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    pub n_detect: usize,
    pub text: TextEncoderConfig,
    pub text_seed: u64,
    pub adapter: bool,
    pub adapter_hidden: usize,
    pub context: ContextSource,
    pub prompts: PromptMode,
    /// When false, track queries pass to the decoder unchanged and the
    /// prompting path is skipped.
    pub ptd: bool,
    pub template: String,
    pub token_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            ff: 128,
            n_enc: 1,
            n_dec: 2,
            n_detect: 20,
            text: TextEncoderConfig::default(),
            text_seed: 0,
            adapter: true,
            adapter_hidden: 32,
            context: ContextSource::Enc,
            prompts: PromptMode::Both,
            ptd: true,
            template: PromptTemplate::default().prefix,
            token_len: DEFAULT_TOKEN_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub loss: ClipLossReport,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// One training frame with its targets.
#[derive(Debug, Clone)]
pub struct TrainFrame {
    pub frame: ImageFrame,
    pub targets: Vec<GtTarget>,
}

#[derive(Debug, Clone)]
pub struct LTrack {
    pub config: ModelConfig,
    pub store: ParamStore,
    book: Trackbook,
    vocab: Vocabulary,
    backbone: Backbone,
    encoder: Encoder,
    decoder: Decoder,
    text: TextEncoder,
    vcp: Vcp,
    vlm: Vlm,
    fuse: Fusion,
    prompts: TextualPrompts,
}

impl LTrack {
    pub fn new(config: ModelConfig, book: Trackbook, seed: u64) -> Result<Self> {
        let template = PromptTemplate::new(config.template.clone());
        let vocab = build_vocabulary(&book.render(&template))?;
        let d = config.d;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = TextEncoder::new(&mut store, config.text, &vocab, d, config.text_seed);
        let backbone = Backbone::new(&mut store, d, &mut rng);
        let encoder = Encoder::new(&mut store, d, config.heads, config.ff, config.n_enc, &mut rng);
        let decoder = Decoder::new(&mut store, d, config.heads, config.ff, config.n_dec, config.n_detect, &mut rng);
        let vcp = Vcp::new(&mut store, d, config.heads, config.ff, &mut rng);
        let hidden = config.adapter.then_some(config.adapter_hidden);
        let vlm = Vlm::new(&mut store, config.text.d, config.heads, config.ff, hidden, config.prompts, &mut rng);
        let fuse = Fusion::new(&mut store, d, &mut rng);
        if config.text.d != d {
            return Err(Error::Shape(format!(
                "text width {} must equal model width {d}",
                config.text.d
            )));
        }
        let prompts = TextualPrompts::compute(&store, &text, &vocab, &book, &template, config.token_len)?;
        Ok(Self {
            config,
            store,
            book,
            vocab,
            backbone,
            encoder,
            decoder,
            text,
            vcp,
            vlm,
            fuse,
            prompts,
        })
    }

    pub fn trackbook(&self) -> &Trackbook {
        &self.book
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn textual_prompts(&self) -> &TextualPrompts {
        &self.prompts
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    pub fn n_detect(&self) -> usize {
        self.decoder.n_detect
    }

    /// Checksum of every frozen (text encoder) parameter.
    pub fn text_checksum(&self) -> String {
        self.store.frozen_checksum()
    }

    /// Re-encodes the textual prompts; needed after frozen weights change.
    pub fn refresh_prompts(&mut self) -> Result<()> {
        let template = PromptTemplate::new(self.config.template.clone());
        self.prompts = TextualPrompts::compute(
            &self.store,
            &self.text,
            &self.vocab,
            &self.book,
            &template,
            self.config.token_len,
        )?;
        Ok(())
    }

    pub fn import_text_weights(&mut self, c: &Container) -> Result<()> {
        self.text.import_weights(&mut self.store, c)?;
        self.refresh_prompts()
    }

    /// One frame through the pipeline: context, visual prompts, PTD, fused
    /// track queries, then the decoder over detect and track queries.
    pub fn frame_forward(&self, s: &Session, frame: &ImageFrame, q_prev: Var, prev_boxes: &[Bbox]) -> Result<DecoderOutput> {
        let g = s.graph();
        let feats = self.backbone.forward(s, frame);
        let enc = self.encoder.forward(s, &feats);
        let m = g.shape(q_prev).0;
        let q_in = if self.config.ptd && m > 0 {
            let ctx = select_context(&enc, self.config.context);
            let v = self.vcp.forward(s, q_prev, &ctx)?;
            let l = self.vlm.forward(s, &self.text, v, &self.prompts)?;
            assert_eq!(g.shape(v).0, m, "visual prompt rows must equal live track count");
            assert_eq!(g.shape(l).0, m, "PTD rows must equal live track count");
            self.fuse.forward(s, q_prev, l)?
        } else {
            q_prev
        };
        self.decoder.forward(s, q_in, prev_boxes, enc.enc.values)
    }

    /// GT-driven clip unroll. Detect queries matched to newborn targets
    /// become track queries for the rest of the clip, carrying their
    /// target's identity; embeddings stay on the tape across frames.
    pub fn clip_forward(
        &self,
        s: &Session,
        clip: &[TrainFrame],
        weights: &LossWeights,
        focal: &FocalParams,
    ) -> Result<(Var, ClipLossReport)> {
        let g = s.graph();
        let d = self.config.d;
        let mut tracks: Vec<(u32, Var, Bbox)> = Vec::new();
        let mut frames = Vec::with_capacity(clip.len());
        for tf in clip {
            let q_prev = if tracks.is_empty() {
                g.constant(Tensor::zeros(0, d))
            } else {
                g.concat_rows(&tracks.iter().map(|t| t.1).collect::<Vec<_>>())
            };
            let boxes: Vec<Bbox> = tracks.iter().map(|t| t.2).collect();
            let out = self.frame_forward(s, &tf.frame, q_prev, &boxes)?;
            let n_det = out.n_detect;
            let roles: Vec<QueryRole> = (0..n_det)
                .map(|_| QueryRole::Detect)
                .chain(tracks.iter().map(|t| QueryRole::Track(t.0)))
                .collect();
            let fo = FrameOutputsVar {
                scores: out.scores,
                boxes: out.boxes,
                roles,
            };
            let preds = fo.predictions(g);
            let assignment = assign(&preds, &tf.targets, weights);
            for (i, t) in tracks.iter_mut().enumerate() {
                t.1 = g.slice_rows(out.embeddings, n_det + i, 1);
                t.2 = preds[n_det + i].bbox;
            }
            for (i, a) in assignment.iter().enumerate().take(n_det) {
                if let Some(j) = a {
                    tracks.push((tf.targets[*j].id, g.slice_rows(out.embeddings, i, 1), preds[i].bbox));
                }
            }
            frames.push((fo, tf.targets.clone()));
        }
        Ok(clip_loss_var(g, &frames, weights, focal))
    }

    /// Forward, backward and one optimizer update over a clip.
    pub fn train_step(
        &mut self,
        clip: &[TrainFrame],
        adam: &mut Adam,
        lr: f64,
        weights: &LossWeights,
        focal: &FocalParams,
    ) -> Result<StepReport> {
        let g = Graph::new();
        let s = Session::new(&g, &self.store);
        let (loss, loss_report) = self.clip_forward(&s, clip, weights, focal)?;
        let grads = g.backward(loss);
        let param_grads = s.param_grads(&grads);
        let grad_norm = adam.update(&mut self.store, &param_grads, lr);
        Ok(StepReport {
            loss: loss_report,
            grad_norm,
        })
    }

    fn infer_outputs(&self, frame: &ImageFrame, tracks: &[TrackQuery]) -> Result<Vec<QueryOutput>> {
        let g = Graph::new();
        let s = Session::new(&g, &self.store);
        let d = self.config.d;
        let emb: Vec<f64> = tracks.iter().flat_map(|t| t.embedding.iter().copied()).collect();
        if emb.len() != tracks.len() * d {
            return Err(Error::Shape("track embedding width differs from the model".into()));
        }
        let q = g.constant(Tensor::from_vec(tracks.len(), d, emb));
        let boxes: Vec<Bbox> = tracks.iter().map(|t| t.last_box).collect();
        let out = self.frame_forward(&s, frame, q, &boxes)?;
        Ok(out.to_query_outputs(&g))
    }
}

impl FrameModel for LTrack {
    fn infer(&mut self, frame: &ImageFrame, tracks: &[TrackQuery]) -> Result<Vec<QueryOutput>> {
        self.infer_outputs(frame, tracks)
    }
}

impl FrameModel for &LTrack {
    fn infer(&mut self, frame: &ImageFrame, tracks: &[TrackQuery]) -> Result<Vec<QueryOutput>> {
        self.infer_outputs(frame, tracks)
    }
}
