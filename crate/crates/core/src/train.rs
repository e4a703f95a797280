//! Joint training, model selection and the training configuration.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::AlignedSequence;
use crate::data::{Labels, TaggedUtterance};
use crate::dropout::Dropout;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::features::ResourceText;
use crate::graph::Gradients;
use crate::intent::IntentPool;
use crate::metrics::{parse_kv, EvalReport};
use crate::model::{Batch, EncodedExample, JointModel, ModelConfig};
use crate::optim::{lr_schedule, AdamConfig, AdamW};
use crate::pipeline::Pipeline;
use crate::slot::SlotMode;
use crate::tokenizer::train_vocab;

/// `gamma * l_intent + (1 - gamma) * l_slot`.
pub fn joint_loss(l_intent: f64, l_slot: f64, gamma: f64) -> f64 {
    gamma * l_intent + (1.0 - gamma) * l_slot
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_intent: f64,
    pub l_slot: f64,
    pub l_joint: f64,
}

/// Positions that contribute to the slot loss: every real position,
/// special tokens and continuation pieces included.
pub fn slot_loss_positions(seq: &AlignedSequence) -> Vec<usize> {
    (0..seq.len()).filter(|&t| seq.valid[t]).collect()
}

/// Index of the report with the highest selection score; ties go to the
/// earliest.
pub fn select_best(reports: &[EvalReport]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in reports.iter().enumerate() {
        let s = r.selection_score();
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub warmup_proportion: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub slot_mode: SlotMode,
    pub slot_features: bool,
    pub intent_pool: IntentPool,
    /// Exempt biases, layer-norm and other non-matrix tensors from decay.
    pub decay_exempt_bias_norm: bool,
    pub d_h: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Target word-piece vocabulary size.
    pub vocab_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.6,
            epochs: 50,
            batch_size: 64,
            max_len: 50,
            learning_rate: 8e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-6,
            weight_decay: 0.01,
            warmup_proportion: 0.1,
            dropout_rate: 0.1,
            seed: 0,
            slot_mode: SlotMode::Softmax,
            slot_features: true,
            intent_pool: IntentPool::Attention,
            decay_exempt_bias_norm: true,
            d_h: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            vocab_size: 1000,
        }
    }
}

impl TrainConfig {
    /// The defaults with the peak learning rate raised for an encoder
    /// trained from scratch rather than fine-tuned.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: DESK_LEARNING_RATE,
            ..TrainConfig::default()
        }
    }
}

pub const DESK_LEARNING_RATE: f64 = 1e-3;

fn flag(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl TrainConfig {
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("gamma", self.gamma.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_len", self.max_len.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("warmup_proportion", self.warmup_proportion.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("seed", self.seed.to_string()),
            ("slot_mode", self.slot_mode.to_string()),
            ("slot_features", flag(self.slot_features).to_string()),
            ("intent_pool", self.intent_pool.to_string()),
            ("decay_exempt_bias_norm", flag(self.decay_exempt_bias_norm).to_string()),
            ("d_h", self.d_h.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
        ]
    }

    /// Parses `key=value` lines over the defaults, then validates. Every
    /// problem is reported at once.
    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        let mut c = TrainConfig::default();
        let mut problems = Vec::new();
        for (key, raw) in &map {
            if let Err(msg) = c.set(key, raw) {
                problems.push(msg);
            }
        }
        if let Err(Error::Validation(msg)) = c.validate() {
            problems.push(msg);
        }
        if problems.is_empty() {
            Ok(c)
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    pub fn set(&mut self, key: &str, raw: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, raw: &str) -> std::result::Result<T, String> {
            raw.parse().map_err(|_| format!("`{key}`: cannot parse `{raw}`"))
        }
        fn on_off(key: &str, raw: &str) -> std::result::Result<bool, String> {
            match raw {
                "on" | "true" => Ok(true),
                "off" | "false" => Ok(false),
                _ => Err(format!("`{key}`: expected on/off, found `{raw}`")),
            }
        }
        match key {
            "gamma" => self.gamma = num(key, raw)?,
            "epochs" => self.epochs = num(key, raw)?,
            "batch_size" => self.batch_size = num(key, raw)?,
            "max_len" => self.max_len = num(key, raw)?,
            "learning_rate" => self.learning_rate = num(key, raw)?,
            "beta1" => self.beta1 = num(key, raw)?,
            "beta2" => self.beta2 = num(key, raw)?,
            "epsilon" => self.epsilon = num(key, raw)?,
            "weight_decay" => self.weight_decay = num(key, raw)?,
            "warmup_proportion" => self.warmup_proportion = num(key, raw)?,
            "dropout_rate" => self.dropout_rate = num(key, raw)?,
            "seed" => self.seed = num(key, raw)?,
            "slot_mode" => self.slot_mode = raw.parse().map_err(|e: Error| e.to_string())?,
            "slot_features" => self.slot_features = on_off(key, raw)?,
            "intent_pool" => self.intent_pool = raw.parse().map_err(|e: Error| e.to_string())?,
            "decay_exempt_bias_norm" => self.decay_exempt_bias_norm = on_off(key, raw)?,
            "d_h" => self.d_h = num(key, raw)?,
            "n_layers" => self.n_layers = num(key, raw)?,
            "n_heads" => self.n_heads = num(key, raw)?,
            "d_ff" => self.d_ff = num(key, raw)?,
            "vocab_size" => self.vocab_size = num(key, raw)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.gamma) {
            p.push(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.epochs == 0 {
            p.push("epochs must be positive".to_string());
        }
        if self.batch_size == 0 {
            p.push("batch_size must be positive".to_string());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            p.push(format!("learning_rate {} must be finite and nonnegative", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            p.push("beta1 and beta2 must lie in [0, 1)".to_string());
        }
        if !(self.epsilon > 0.0) {
            p.push("epsilon must be positive".to_string());
        }
        if !(self.weight_decay >= 0.0) {
            p.push("weight_decay must be nonnegative".to_string());
        }
        if !unit(self.warmup_proportion) {
            p.push(format!("warmup_proportion {} outside [0, 1]", self.warmup_proportion));
        }
        let mut enc = self.encoder(4);
        enc.vocab_size = enc.vocab_size.max(4);
        if let Err(Error::Validation(msg)) = enc.validate() {
            p.push(msg);
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p.join("; ")))
        }
    }

    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            d_h: self.d_h,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_len: self.max_len,
            dropout_rate: self.dropout_rate,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
            decay_all: !self.decay_exempt_bias_norm,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_intent: f64,
    pub l_slot: f64,
    pub l_joint: f64,
    pub dev: EvalReport,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} l_intent={:.6} l_slot={:.6} l_joint={:.6} dev_intent_acc={:.4} dev_sent_acc={:.4} dev_slot_f1={:.4} dev_token_f1={:.4}",
            self.epoch,
            self.l_intent,
            self.l_slot,
            self.l_joint,
            self.dev.intent_acc,
            self.dev.sent_acc,
            self.dev.slot_f1,
            self.dev.token_f1
        )
    }
}

/// Progress notifications from [`train`].
pub enum TrainEvent<'a> {
    Step {
        epoch: usize,
        step: usize,
        loss: &'a LossBreakdown,
        grads: &'a Gradients,
        model: &'a JointModel,
    },
    Epoch(&'a EpochRecord),
}

pub struct TrainOutcome {
    pub pipeline: Pipeline,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

/// Builds vocabularies from `train` and a freshly initialized pipeline.
pub fn prepare(train: &[TaggedUtterance], resources: &ResourceText, config: &TrainConfig) -> Result<Pipeline> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let words = train.iter().flat_map(|u| u.words.iter().map(|w| w.to_lowercase()));
    let vocab = train_vocab(words, config.vocab_size)?;
    let labels = Labels::from_train(train);
    let model_config = ModelConfig {
        encoder: config.encoder(vocab.len()),
        n_intents: labels.n_intents(),
        n_slots: labels.n_slots(),
        slot_mode: config.slot_mode,
        slot_features: config.slot_features,
        intent_pool: config.intent_pool,
    };
    let model = JointModel::init(model_config, config.seed)?;
    Pipeline::new(model, vocab, labels, resources.clone())
}

pub fn train(
    train: &[TaggedUtterance],
    dev: &[TaggedUtterance],
    resources: &ResourceText,
    config: &TrainConfig,
    mut observe: impl FnMut(TrainEvent),
) -> Result<TrainOutcome> {
    if dev.is_empty() {
        return Err(Error::Validation("dev set is empty".into()));
    }
    let mut pipeline = prepare(train, resources, config)?;
    let examples = train
        .iter()
        .map(|u| pipeline.encode(u))
        .collect::<Result<Vec<_>>>()?;

    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut opt = AdamW::new(config.adam(), &pipeline.model.store);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, crate::params::ParamStore)> = None;
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut sums = [0.0; 3];
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&EncodedExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let batch = Batch::new(&refs);
            let mut drop = Dropout::new(config.dropout_rate, &mut drop_rng);
            let (loss, grads) = pipeline.model.loss_and_grads(&batch, config.gamma, &mut drop)?;
            if !loss.l_joint.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: format!(
                        "l_intent={} l_slot={} l_joint={}",
                        loss.l_intent, loss.l_slot, loss.l_joint
                    ),
                });
            }
            observe(TrainEvent::Step {
                epoch,
                step,
                loss: &loss,
                grads: &grads,
                model: &pipeline.model,
            });
            let lr = lr_schedule(step, total, config.warmup_proportion, config.learning_rate)?;
            opt.step(&mut pipeline.model.store, &grads, lr);
            if !pipeline.model.store.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: "parameters became non-finite".into(),
                });
            }
            sums[0] += loss.l_intent;
            sums[1] += loss.l_slot;
            sums[2] += loss.l_joint;
            step += 1;
        }
        let n = steps_per_epoch as f64;
        let record = EpochRecord {
            epoch,
            l_intent: sums[0] / n,
            l_slot: sums[1] / n,
            l_joint: sums[2] / n,
            dev: pipeline.evaluate(dev)?,
        };
        observe(TrainEvent::Epoch(&record));
        let score = record.dev.selection_score();
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, pipeline.model.store.clone()));
        }
        history.push(record);
    }

    let best_epoch = select_best(&history.iter().map(|r| r.dev.clone()).collect::<Vec<_>>())
        .expect("at least one epoch");
    if let Some((_, store)) = best {
        pipeline.model.store = store;
    }
    Ok(TrainOutcome {
        pipeline,
        history,
        best_epoch,
    })
}

/// The training log, one line per epoch.
pub fn history_to_text(history: &[EpochRecord]) -> String {
    history.iter().map(|r| r.to_line() + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::align;
    use crate::features::WordFeatureVector;
    use crate::tags::SlotTag;
    use crate::tokenizer::WordPieceVocab;

    fn report(i: f64, s: f64, f: f64) -> EvalReport {
        EvalReport {
            intent_acc: i,
            sent_acc: s,
            slot_f1: f,
            token_f1: f,
            tp: 0,
            fp: 0,
            fn_: 0,
        }
    }

    #[test]
    fn joint_loss_arithmetic() {
        assert!((joint_loss(1.0, 2.0, 0.6) - 1.4).abs() < 1e-15);
        assert_eq!(joint_loss(1.3, 2.0, 1.0), 1.3);
        assert_eq!(joint_loss(1.3, 2.0, 0.0), 2.0);
    }

    #[test]
    fn selection_rule() {
        assert_eq!(select_best(&[report(0.9, 0.8, 0.9), report(0.9, 0.85, 0.9)]), Some(1));
        assert_eq!(select_best(&[report(0.5, 0.5, 0.5)]), Some(0));
        let r = [
            report(0.1, 0.1, 0.1),
            report(0.2, 0.2, 0.2),
            report(0.9, 0.5, 0.5),
            report(0.3, 0.3, 0.3),
            report(0.5, 0.9, 0.5),
        ];
        assert_eq!(select_best(&r), Some(2));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn loss_positions_cover_real_pieces() {
        let vocab = WordPieceVocab::from_pieces(
            ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "b", "##c"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        let words = ["a", "bc", "a"];
        let tags = vec![SlotTag::O; 3];
        let mut seq = align(&words, &tags, &[WordFeatureVector::zero(); 3], &vocab, 50).unwrap();
        assert_eq!(slot_loss_positions(&seq), [0, 1, 2, 3, 4, 5]);
        seq.pad_to(9);
        assert_eq!(slot_loss_positions(&seq), [0, 1, 2, 3, 4, 5]);
        assert_eq!(seq.piece_tags[3], SlotTag::X);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::parse(&c.to_kv()).unwrap(), c);
        let parsed = TrainConfig::parse("gamma=0.8\nslot_mode=crf\nslot_features=off\n").unwrap();
        assert_eq!(parsed.gamma, 0.8);
        assert_eq!(parsed.slot_mode, SlotMode::Crf);
        assert!(!parsed.slot_features);
        let err = TrainConfig::parse("gamma=2\nepochs=x\nbogus=1\nd_h=10\n").unwrap_err().to_string();
        for needle in ["gamma", "epochs", "bogus", "n_heads"] {
            assert!(err.contains(needle), "{err}");
        }
    }

    #[test]
    fn paper_defaults() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.gamma, c.epochs, c.batch_size, c.max_len, c.learning_rate),
            (0.6, 50, 64, 50, 8e-5)
        );
        assert_eq!(
            (c.beta1, c.beta2, c.epsilon, c.weight_decay, c.warmup_proportion, c.dropout_rate),
            (0.9, 0.999, 1e-6, 0.01, 0.1, 0.1)
        );
    }
}
