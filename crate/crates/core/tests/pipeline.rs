//! Whole-model checks: pipeline gradients, frozen text weights, context purity.

use ltrack_core::gradcheck::check_param_gradients;
use ltrack_core::losses::{clip_loss_var, FocalParams, FrameOutputsVar, GtTarget, LossWeights, QueryRole};
use ltrack_core::model::{LTrack, ModelConfig, TrainFrame};
use ltrack_core::optim::{Adam, AdamConfig};
use ltrack_core::perception::{select_context, Backbone, Bbox, ContextSource, Encoder, ImageFrame};
use ltrack_core::trackbook::Trackbook;
use ltrack_core::{Graph, ParamId, ParamStore, Session, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frame(i: u32, rng: &mut ChaCha8Rng) -> ImageFrame {
    ImageFrame::new(32, 32, (0..32 * 32 * 3).map(|_| rng.random()).collect(), i).unwrap()
}

fn target(id: u32, cx: f64, newborn: bool) -> GtTarget {
    GtTarget {
        id,
        bbox: Bbox::new(cx, 0.45, 0.25, 0.35),
        newborn,
    }
}

fn two_frame_clip(rng: &mut ChaCha8Rng) -> Vec<TrainFrame> {
    vec![
        TrainFrame {
            frame: frame(1, rng),
            targets: vec![target(1, 0.3, true), target(2, 0.7, true)],
        },
        TrainFrame {
            frame: frame(2, rng),
            targets: vec![target(1, 0.33, false), target(2, 0.68, false), target(3, 0.5, true)],
        },
    ]
}

#[test]
fn full_pipeline_gradients_on_sampled_parameters() {
    // One frame with two live track queries, so every stage from the backbone
    // through prompting, fusion and both heads is on the tape.
    let model = LTrack::new(ModelConfig::default(), Trackbook::default(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let f = frame(1, &mut rng);
    let q = Tensor::randn(2, 64, 1.0, &mut rng);
    let prev = [Bbox::new(0.3, 0.45, 0.2, 0.3), Bbox::new(0.7, 0.5, 0.25, 0.3)];
    let gts = vec![target(1, 0.32, false), target(2, 0.68, false), target(3, 0.5, true)];
    let w = LossWeights::default();
    let focal = FocalParams::default();
    let params: Vec<ParamId> = model.store.trainable().collect();
    let r = check_param_gradients(&model.store, &params, 1e-3, Some(50), &mut rng, |s| {
        let g = s.graph();
        let out = model.frame_forward(s, &f, g.constant(q.clone()), &prev).unwrap();
        let mut roles = vec![QueryRole::Detect; out.n_detect];
        roles.extend([QueryRole::Track(1), QueryRole::Track(2)]);
        let fo = FrameOutputsVar {
            scores: out.scores,
            boxes: out.boxes,
            roles,
        };
        clip_loss_var(g, &[(fo, gts.clone())], &w, &focal).0
    });
    assert!(r.is_ok(), "{r:?}");
}

#[test]
fn text_encoder_is_bit_identical_after_training() {
    let cfg = ModelConfig {
        n_detect: 8,
        ..Default::default()
    };
    let mut model = LTrack::new(cfg, Trackbook::default(), 22).unwrap();
    let before = model.text_checksum();
    let trainable_before = model.store.checksum(|p| !p.frozen);
    let mut adam = Adam::new(AdamConfig::default(), &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let clip = two_frame_clip(&mut rng);
    for _ in 0..5 {
        let r = model
            .train_step(&clip, &mut adam, 2e-4, &LossWeights::default(), &FocalParams::default())
            .unwrap();
        assert!(r.loss.total.is_finite());
    }
    assert_eq!(model.text_checksum(), before);
    assert_ne!(model.store.checksum(|p| !p.frozen), trainable_before);
}

#[test]
fn enc_context_does_not_depend_on_other_selections() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut store = ParamStore::new();
    let backbone = Backbone::new(&mut store, 16, &mut rng);
    let encoder = Encoder::new(&mut store, 16, 2, 32, 1, &mut rng);
    let f = frame(1, &mut rng);
    let run = |others: bool| {
        let g = Graph::new();
        let s = Session::new(&g, &store);
        let out = encoder.forward(&s, &backbone.forward(&s, &f));
        if others {
            for src in [ContextSource::C3, ContextSource::C4, ContextSource::C5] {
                let _ = select_context(&out, src);
            }
        }
        let ctx = select_context(&out, ContextSource::Enc);
        let v = g.value(ctx.values).clone();
        (v, ctx.levels, ctx.locations)
    };
    assert_eq!(run(false), run(true));
}
