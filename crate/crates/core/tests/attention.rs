mod common;

use common::{desk_config, jitter, random_batch};
use ndarray::{Array1, Array2};
use nlu_core::dropout::{Dropout, Mode};
use nlu_core::encoder::{encode, init_params, EncoderConfig};
use nlu_core::graph::Graph;
use nlu_core::intent::{attention_logits, attention_weights, pool, IntentPool};
use nlu_core::model::{Batch, JointModel};
use nlu_core::slot::{slot_logits, SlotMode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn vector(n: usize) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(-2.0f64..2.0, n).prop_map(Array1::from)
}

/// Hidden states, a padding mask with at least one real position, `W_e`, `v`.
fn pooling_input() -> impl Strategy<Value = (Array2<f64>, Vec<bool>, Array2<f64>, Array1<f64>)> {
    (1usize..10, 1usize..9).prop_flat_map(|(n, d)| {
        (matrix(n, d), 1..=n, matrix(d, d), vector(d)).prop_map(move |(h, valid, w, v)| {
            let mask = (0..n).map(|i| i >= valid).collect();
            (h, mask, w, v)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn weights_are_a_simplex_over_real_positions((h, mask, w, v) in pooling_input()) {
        let logits = attention_logits(h.view(), &mask, w.view(), v.view()).unwrap();
        let alpha = attention_weights(logits.view(), h.ncols()).unwrap();
        prop_assert!((alpha.sum() - 1.0).abs() <= 1e-6);
        for (a, &pad) in alpha.iter().zip(&mask) {
            prop_assert!(*a >= 0.0);
            if pad {
                prop_assert_eq!(*a, 0.0);
            }
        }
    }

    #[test]
    fn logits_match_per_position_evaluation((h, mask, w, v) in pooling_input()) {
        let logits = attention_logits(h.view(), &mask, w.view(), v.view()).unwrap();
        let d = h.ncols();
        for i in 0..h.nrows() {
            if mask[i] {
                prop_assert_eq!(logits[i], f64::NEG_INFINITY);
                continue;
            }
            let mut s = 0.0;
            for r in 0..d {
                let pre: f64 = (0..d).map(|c| w[[r, c]] * h[[i, c]]).sum();
                s += v[r] * pre.tanh();
            }
            prop_assert!((logits[i] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_equals_unscaled_softmax_of_divided_logits((h, mask, w, v) in pooling_input()) {
        let d = h.ncols();
        let logits = attention_logits(h.view(), &mask, w.view(), v.view()).unwrap();
        let alpha = attention_weights(logits.view(), d).unwrap();
        let divided: Vec<f64> = logits.iter().map(|l| l / (d as f64).sqrt()).collect();
        let top = divided.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = divided.iter().map(|x| (x - top).exp()).collect();
        let z: f64 = exp.iter().sum();
        for (a, e) in alpha.iter().zip(&exp) {
            prop_assert!((a - e / z).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_matches_direct_summation((h, mask, w, v) in pooling_input()) {
        let logits = attention_logits(h.view(), &mask, w.view(), v.view()).unwrap();
        let alpha = attention_weights(logits.view(), h.ncols()).unwrap();
        let pooled = pool(h.view(), alpha.view()).unwrap();
        for c in 0..h.ncols() {
            let s: f64 = (0..h.nrows()).map(|i| alpha[i] * h[[i, c]]).sum();
            prop_assert!((pooled[c] - s.tanh()).abs() < 1e-12);
            prop_assert!(pooled[c].abs() < 1.0);
        }
    }

    #[test]
    fn slot_logits_decompose_into_blocks(
        (y, f, h, w, b) in (1usize..5, 0usize..6, 1usize..6, 1usize..5).prop_flat_map(|(i, nf, d, s)| {
            (vector(i), vector(nf), vector(d), matrix(s, i + nf + d), vector(s))
        })
    ) {
        let (ni, nf) = (y.len(), f.len());
        let got = slot_logits(y.view(), f.view(), h.view(), w.view(), b.view()).unwrap();
        let e: Vec<f64> = y.iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        for r in 0..w.nrows() {
            let mut want = b[r];
            want += (0..ni).map(|k| w[[r, k]] * e[k] / z).sum::<f64>();
            want += (0..nf).map(|k| w[[r, ni + k]] * f[k]).sum::<f64>();
            want += (0..h.len()).map(|k| w[[r, ni + nf + k]] * h[k]).sum::<f64>();
            prop_assert!((got[r] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn padded_tail_does_not_reach_real_positions() {
    let config = EncoderConfig {
        d_h: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        vocab_size: 12,
        max_len: 10,
        dropout_rate: 0.0,
    };
    let (store, params) = init_params(&config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let real = [2, 5, 7, 3];
    let a: Vec<usize> = real.iter().copied().chain([0, 0, 0]).collect();
    let b: Vec<usize> = real.iter().copied().chain([9, 4, 11]).collect();
    let ha = encode(&a, 4, &store, &params, Mode::Infer, &mut rng).unwrap();
    let hb = encode(&b, 4, &store, &params, Mode::Infer, &mut rng).unwrap();
    let short = encode(&real, 4, &store, &params, Mode::Infer, &mut rng).unwrap();
    for t in 0..4 {
        for c in 0..8 {
            assert!((ha.h[[t, c]] - hb.h[[t, c]]).abs() < 1e-12);
            assert!((ha.h[[t, c]] - short.h[[t, c]]).abs() < 1e-12);
        }
    }
    assert_eq!(ha.n_valid(), 4);
}

#[test]
fn model_attention_ignores_batch_padding() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model =
            JointModel::init(desk_config(SlotMode::Softmax, true, IntentPool::Attention), seed).unwrap();
        jitter(&mut model, &mut rng, 0.5);
        let examples = random_batch(&mut rng, 8);
        let refs: Vec<_> = examples.iter().collect();
        let batch = Batch::new(&refs);
        let mut g = Graph::new(&model.store);
        let fwd = model.forward(&mut g, &batch, &mut Dropout::off());
        let alpha = g.value(fwd.alpha.unwrap());
        for (b, &len) in batch.seg.lens.iter().enumerate() {
            let row = |t| alpha[[batch.seg.row(b, t), 0]];
            let total: f64 = (0..len).map(row).sum();
            assert!((total - 1.0).abs() < 1e-6);
            for t in len..batch.seg.width {
                assert_eq!(row(t), 0.0);
            }
            // Special tokens are pooled like any other position.
            assert!(row(0) > 0.0 && row(len - 1) > 0.0);
        }
    }
}
