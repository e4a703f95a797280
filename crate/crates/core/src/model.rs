//! The joint model: encoder, intent head and slot head over a padded batch.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::AlignedSequence;
use crate::crf;
use crate::dropout::Dropout;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;
use crate::graph::{Gradients, Graph, Matrix, Segments, Var};
use crate::intent::{IntentHead, IntentPool};
use crate::params::ParamStore;
use crate::slot::{SlotHead, SlotMode};
use crate::train::{joint_loss, LossBreakdown};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub n_intents: usize,
    pub n_slots: usize,
    pub slot_mode: SlotMode,
    pub slot_features: bool,
    pub intent_pool: IntentPool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.n_intents == 0 || self.n_slots == 0 {
            return Err(Error::Validation("label vocabularies must be nonempty".into()));
        }
        Ok(())
    }
}

/// One example ready for batching. Slot ids cover every piece position
/// (including `X` pieces and special tokens).
#[derive(Debug, Clone)]
pub struct EncodedExample {
    pub seq: AlignedSequence,
    pub intent: usize,
    pub slots: Vec<usize>,
}

/// A padded batch in row-major `batch * width` layout.
#[derive(Debug, Clone)]
pub struct Batch {
    pub seg: Segments,
    pub ids: Vec<usize>,
    pub features: Matrix,
    pub intents: Vec<usize>,
    pub slots: Vec<usize>,
}

impl Batch {
    pub fn new(examples: &[&EncodedExample]) -> Self {
        let width = examples.iter().map(|e| e.seq.len()).max().unwrap_or(0);
        let lens: Vec<usize> = examples.iter().map(|e| e.seq.len()).collect();
        let seg = Segments::new(width, lens);
        let rows = seg.rows();
        let mut ids = vec![0; rows];
        let mut slots = vec![0; rows];
        let mut features = Array2::zeros((rows, FEATURE_DIM));
        for (b, e) in examples.iter().enumerate() {
            for t in 0..e.seq.len() {
                let r = seg.row(b, t);
                ids[r] = e.seq.piece_ids[t];
                slots[r] = e.slots[t];
                features
                    .row_mut(r)
                    .iter_mut()
                    .zip(e.seq.features[t].as_slice())
                    .for_each(|(d, &s)| *d = s);
            }
        }
        Batch {
            seg,
            ids,
            features,
            intents: examples.iter().map(|e| e.intent).collect(),
            slots,
        }
    }
}

pub struct Forward {
    pub intent_logits: Var,
    pub alpha: Option<Var>,
    pub emissions: Var,
}

/// Per-example output: intent id, one slot id per real piece position, and
/// the pooling weights over real positions when attention pooling is used.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub intent: usize,
    pub intent_probs: Vec<f64>,
    pub slots: Vec<usize>,
    pub alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct JointModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub intent: IntentHead,
    pub slot: SlotHead,
}

impl JointModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        EncoderParams::init(&mut store, &config.encoder, &mut rng)?;
        let d = config.encoder.d_h;
        IntentHead::init(&mut store, config.intent_pool, d, config.n_intents, &mut rng)?;
        SlotHead::init(
            &mut store,
            config.slot_mode,
            config.slot_features,
            config.n_intents,
            d,
            config.n_slots,
            &mut rng,
        )?;
        Self::bind(config, store)
    }

    pub fn bind(config: ModelConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let d = config.encoder.d_h;
        let encoder = EncoderParams::bind(&store, &config.encoder)?;
        let intent = IntentHead::bind(&store, config.intent_pool, d, config.n_intents)?;
        let slot = SlotHead::bind(
            &store,
            config.slot_mode,
            config.slot_features,
            config.n_intents,
            d,
            config.n_slots,
        )?;
        Ok(JointModel {
            config,
            store,
            encoder,
            intent,
            slot,
        })
    }

    pub fn check_batch(&self, batch: &Batch) -> Result<()> {
        self.encoder.check_input(&batch.ids, &batch.seg)?;
        if batch.seg.lens.contains(&0) {
            return Err(Error::Validation("empty sequence in batch".into()));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, batch: &Batch, drop: &mut Dropout) -> Forward {
        let h = self.encoder.forward(g, &batch.ids, &batch.seg, drop);
        let intent = self.intent.forward(g, h, &batch.seg, drop);
        let emissions = self
            .slot
            .forward(g, intent.logits, h, &batch.features, &batch.seg, drop);
        Forward {
            intent_logits: intent.logits,
            alpha: intent.alpha,
            emissions,
        }
    }

    /// Adds the joint loss to `g`: intent cross-entropy averaged over the
    /// batch, slot loss over every real piece position.
    pub fn loss(&self, g: &mut Graph, fwd: &Forward, batch: &Batch, gamma: f64) -> (Var, LossBreakdown) {
        let seg = &batch.seg;
        let n = seg.batch() as f64;
        let li = g.cross_entropy(fwd.intent_logits, batch.intents.clone(), vec![1.0 / n; seg.batch()]);
        let ls = match self.slot.mode {
            SlotMode::Softmax => {
                let weights = (0..seg.rows())
                    .map(|r| {
                        let len = seg.lens[r / seg.width];
                        if seg.is_valid(r) {
                            1.0 / (len as f64 * n)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                g.cross_entropy(fwd.emissions, batch.slots.clone(), weights)
            }
            SlotMode::Crf => {
                let c = self.slot.crf.as_ref().expect("crf mode has crf params");
                let t = g.param(c.transitions);
                let s = g.param(c.start);
                let e = g.param(c.end);
                g.crf_nll(fwd.emissions, t, s, e, seg, &batch.slots, &vec![1.0 / n; seg.batch()])
            }
        };
        let a = g.scale(li, gamma);
        let b = g.scale(ls, 1.0 - gamma);
        let joint = g.add(a, b);
        let breakdown = LossBreakdown {
            l_intent: g.scalar(li),
            l_slot: g.scalar(ls),
            l_joint: g.scalar(joint),
        };
        debug_assert_eq!(
            breakdown.l_joint,
            joint_loss(breakdown.l_intent, breakdown.l_slot, gamma)
        );
        (joint, breakdown)
    }

    pub fn loss_and_grads(&self, batch: &Batch, gamma: f64, drop: &mut Dropout) -> Result<(LossBreakdown, Gradients)> {
        self.check_batch(batch)?;
        let mut g = Graph::new(&self.store);
        let fwd = self.forward(&mut g, batch, drop);
        let (root, breakdown) = self.loss(&mut g, &fwd, batch, gamma);
        Ok((breakdown, g.backward(root)))
    }

    pub fn predict(&self, batch: &Batch) -> Result<Vec<Prediction>> {
        self.check_batch(batch)?;
        let mut g = Graph::new(&self.store);
        let fwd = self.forward(&mut g, batch, &mut Dropout::off());
        let logits = g.value(fwd.intent_logits);
        let emissions = g.value(fwd.emissions);
        let seg = &batch.seg;
        let crf_view = self.slot.crf.as_ref().map(|c| c.view(&self.store));
        let mut out = Vec::with_capacity(seg.batch());
        for (b, &len) in seg.lens.iter().enumerate() {
            let row = logits.row(b);
            let max = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
            let exp: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = exp.iter().sum();
            let probs: Vec<f64> = exp.iter().map(|e| e / z).collect();
            let base = seg.row(b, 0);
            let em = emissions.slice(ndarray::s![base..base + len, ..]);
            let slots = match &crf_view {
                Some(view) => crf::viterbi(em, view).0,
                None => em.outer_iter().map(|r| argmax(r.iter().copied())).collect(),
            };
            let alpha = fwd.alpha.map(|a| {
                let w = g.value(a);
                (0..len).map(|t| w[[base + t, 0]]).collect()
            });
            out.push(Prediction {
                intent: argmax(row.iter().copied()),
                intent_probs: probs,
                slots,
                alpha,
            });
        }
        Ok(out)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}
