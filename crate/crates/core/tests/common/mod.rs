#![allow(dead_code)]

use nlu_core::align::AlignedSequence;
use nlu_core::dropout::Dropout;
use nlu_core::encoder::EncoderConfig;
use nlu_core::features::{encode_features, CaseClass, EntityClass, WordFeatureVector};
use nlu_core::intent::IntentPool;
use nlu_core::model::{Batch, EncodedExample, JointModel, ModelConfig};
use nlu_core::slot::SlotMode;
use nlu_core::tags::SlotTag;
use nlu_core::tokenizer::WordPieceVocab;
use nlu_oracles::relative_error;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = 12;
pub const INTENTS: usize = 3;
pub const SLOTS: usize = 5;

pub fn desk_config(slot_mode: SlotMode, slot_features: bool, intent_pool: IntentPool) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            d_h: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            vocab_size: VOCAB,
            max_len: 8,
            dropout_rate: 0.0,
        },
        n_intents: INTENTS,
        n_slots: SLOTS,
        slot_mode,
        slot_features,
        intent_pool,
    }
}

/// A framed sequence of `len` positions (`len >= 3`) with random pieces,
/// features and slot ids.
pub fn random_example(rng: &mut ChaCha8Rng, len: usize) -> EncodedExample {
    let words = len - 2;
    let mut piece_ids = vec![WordPieceVocab::CLS_ID];
    let mut features = vec![WordFeatureVector::zero()];
    for _ in 0..words {
        piece_ids.push(rng.random_range(4..VOCAB));
        let e = *EntityClass::ALL.choose(rng).unwrap();
        let c = *CaseClass::ALL.choose(rng).unwrap();
        features.push(encode_features(e, c));
    }
    piece_ids.push(WordPieceVocab::SEP_ID);
    features.push(WordFeatureVector::zero());
    let mut active = vec![false; len];
    active[1..=words].iter_mut().for_each(|a| *a = true);
    let mut word_index = vec![None; len];
    (0..words).for_each(|w| word_index[w + 1] = Some(w));
    let seq = AlignedSequence {
        piece_ids,
        piece_tags: vec![SlotTag::X; len],
        active,
        valid: vec![true; len],
        features,
        word_index,
        n_words: words,
        truncated: false,
    };
    EncodedExample {
        seq,
        intent: rng.random_range(0..INTENTS),
        slots: (0..len).map(|_| rng.random_range(0..SLOTS)).collect(),
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<EncodedExample> {
    let n = rng.random_range(1..=3);
    (0..n)
        .map(|_| {
            let len = rng.random_range(3..=max_len);
            random_example(rng, len)
        })
        .collect()
}

/// Moves every parameter off its structured init (zero biases, unit gains)
/// so no activation sits exactly on a kink.
pub fn jitter(model: &mut JointModel, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        model
            .store
            .value_mut(id)
            .mapv_inplace(|x| x + rng.random_range(-scale..scale));
    }
}

/// Smallest `|x W_w + b_w|` over the batch: the distance of the feature
/// net's PReLU inputs from the kink. Infinite without word features.
pub fn prelu_margin(model: &JointModel, batch: &Batch) -> f64 {
    let (Some(w), Some(b)) = (model.store.id("features.W_w"), model.store.id("features.b_w")) else {
        return f64::INFINITY;
    };
    let pre = batch.features.dot(model.store.value(w)) + model.store.value(b);
    pre.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
}

/// Random parameters for a gradient check: jittered until no PReLU input
/// lies within reach of a finite-difference step.
pub fn smooth_draw(model: &mut JointModel, batch: &Batch, rng: &mut ChaCha8Rng) {
    let start = model.store.clone();
    loop {
        jitter(model, rng, 0.1);
        if prelu_margin(model, batch) > 1e-3 {
            return;
        }
        model.store = start.clone();
    }
}

/// Worst per-tensor relative error between the tape gradient and central
/// differences, checking up to `per_tensor` random entries of each tensor.
pub fn gradient_error(
    model: &mut JointModel,
    batch: &Batch,
    gamma: f64,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, String) {
    const H: f64 = 1e-5;
    let (_, grads) = model.loss_and_grads(batch, gamma, &mut Dropout::off()).unwrap();
    let mut worst = (0.0, String::new());
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let analytic = grads.get_or_zeros(id, &model.store);
        let (r, c) = analytic.dim();
        let picks: Vec<(usize, usize)> = if r * c <= per_tensor {
            (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).collect()
        } else {
            (0..per_tensor).map(|_| (rng.random_range(0..r), rng.random_range(0..c))).collect()
        };
        let mut a = Vec::new();
        let mut n = Vec::new();
        for (i, j) in picks {
            let x0 = model.store.value(id)[[i, j]];
            let num = nlu_oracles::central_difference(
                |x| {
                    model.store.value_mut(id)[[i, j]] = x;
                    model.loss_and_grads(batch, gamma, &mut Dropout::off()).unwrap().0.l_joint
                },
                x0,
                H,
            );
            model.store.value_mut(id)[[i, j]] = x0;
            a.push(analytic[[i, j]]);
            n.push(num);
        }
        let err = relative_error(&a, &n, 1e-7);
        if err > worst.0 {
            worst = (err, model.store.name(id).to_string());
        }
    }
    worst
}
