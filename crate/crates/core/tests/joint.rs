//! One masked pass over visual prompts and sentences equals separate passes.

use ltrack_core::text::{TextEncoder, TextEncoderConfig};
use ltrack_core::trackbook::{build_vocabulary, tokenize, Trackbook, PromptTemplate};
use ltrack_core::{Graph, ParamStore, Session, Tensor};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn joint_pass_matches_independent_passes() {
    let book = Trackbook::default();
    let template = PromptTemplate::default();
    let sentences = book.render(&template);
    let vocab = build_vocabulary(&sentences).unwrap();
    let mut store = ParamStore::new();
    let enc = TextEncoder::new(&mut store, TextEncoderConfig::default(), &vocab, 64, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(0..=8);
        let k = rng.random_range(0..=8);
        let len = rng.random_range(3..=15);
        let seqs: Vec<_> = (0..k)
            .map(|_| tokenize(sentences.choose(&mut rng).unwrap(), &vocab, len).unwrap())
            .collect();
        let v = Tensor::randn(m, 64, 1.0, &mut rng);

        let g = Graph::new();
        let s = Session::new(&g, &store);
        let (jv, jt) = enc.encode_joint(&s, g.constant(v.clone()), &seqs).unwrap();
        let jv = g.value(jv).clone();
        let jt = g.value(jt).clone();

        let g = Graph::new();
        let s = Session::new(&g, &store);
        if m > 0 {
            let sv = enc.encode_visual(&s, g.constant(v)).unwrap();
            worst = worst.max(jv.max_abs_diff(&g.value(sv)));
        } else {
            assert_eq!(jv.rows(), 0);
        }
        assert_eq!(jt.rows(), k);
        for (i, seq) in seqs.iter().enumerate() {
            let e = enc.encode_sentence(&s, seq).unwrap();
            let row = Tensor::from_vec(1, 64, jt.row(i).to_vec());
            worst = worst.max(row.max_abs_diff(&g.value(e)));
        }
    }
    assert!(worst <= 1e-6, "max abs diff {worst}");
}
