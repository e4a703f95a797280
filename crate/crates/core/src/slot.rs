//! Slot head: per-piece tag scores from the predicted intent distribution,
//! the word-feature vector and the encoder state, with an optional CRF.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf::CrfView;
use crate::dropout::Dropout;
use crate::error::{Error, Result};
use crate::features::{FeatureNetView, FEATURE_DIM, FEATURE_HIDDEN, PRELU_INIT};
use crate::graph::{Graph, Matrix, Segments, Var};
use crate::params::{uniform, xavier, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotMode {
    Softmax,
    Crf,
}

impl std::str::FromStr for SlotMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(SlotMode::Softmax),
            "crf" => Ok(SlotMode::Crf),
            _ => Err(Error::Validation(format!("unknown slot mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for SlotMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SlotMode::Softmax => "softmax",
            SlotMode::Crf => "crf",
        })
    }
}

fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let max = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = x.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}

/// `W_s [softmax(y_int); f_words; h] + b_s` for one position. Pass an empty
/// `f_words` when the model runs without word features.
pub fn slot_logits(
    y_int: ArrayView1<f64>,
    f_words: ArrayView1<f64>,
    h: ArrayView1<f64>,
    w_s: ArrayView2<f64>,
    b_s: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let width = y_int.len() + f_words.len() + h.len();
    if w_s.ncols() != width || w_s.nrows() != b_s.len() {
        return Err(Error::Shape(format!(
            "W_s is {:?}, fused input has {width} entries, b_s has {}",
            w_s.dim(),
            b_s.len()
        )));
    }
    let p = softmax(y_int);
    let input: Array1<f64> = p.iter().chain(f_words.iter()).chain(h.iter()).copied().collect();
    Ok(w_s.dot(&input) + b_s)
}

/// Handles to the two-layer word-feature network.
#[derive(Debug, Clone)]
pub struct FeatureNet {
    w_w: ParamId,
    b_w: ParamId,
    alpha: ParamId,
    w_proj: ParamId,
    b_proj: ParamId,
}

impl FeatureNet {
    fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        store.add("features.W_w", xavier(rng, FEATURE_DIM, FEATURE_HIDDEN), true);
        store.add("features.b_w", Array2::zeros((1, FEATURE_HIDDEN)), false);
        store.add("features.alpha", Array2::from_elem((1, 1), PRELU_INIT), false);
        store.add("features.W_proj", xavier(rng, FEATURE_HIDDEN, FEATURE_HIDDEN), true);
        store.add("features.b_proj", Array2::zeros((1, FEATURE_HIDDEN)), false);
        Self::bind(store)
    }

    fn bind(store: &ParamStore) -> Result<Self> {
        Ok(FeatureNet {
            w_w: store.expect("features.W_w", (FEATURE_DIM, FEATURE_HIDDEN))?,
            b_w: store.expect("features.b_w", (1, FEATURE_HIDDEN))?,
            alpha: store.expect("features.alpha", (1, 1))?,
            w_proj: store.expect("features.W_proj", (FEATURE_HIDDEN, FEATURE_HIDDEN))?,
            b_proj: store.expect("features.b_proj", (1, FEATURE_HIDDEN))?,
        })
    }

    pub fn ids(&self) -> [ParamId; 5] {
        [self.w_w, self.b_w, self.alpha, self.w_proj, self.b_proj]
    }

    pub fn view<'a>(&self, store: &'a ParamStore) -> FeatureNetView<'a> {
        FeatureNetView {
            w_w: store.value(self.w_w).view(),
            b_w: store.value(self.b_w).row(0),
            a_prelu: store.value(self.alpha)[[0, 0]],
            w_proj: store.value(self.w_proj).view(),
            b_proj: store.value(self.b_proj).row(0),
        }
    }

    /// `rows x 23` one-hot features to `rows x 32`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (w, b) = (g.param(self.w_w), g.param(self.b_w));
        let s = g.matmul(x, w);
        let s = g.add_row(s, b);
        let alpha = g.param(self.alpha);
        let hw = g.prelu(s, alpha);
        let (w, b) = (g.param(self.w_proj), g.param(self.b_proj));
        let f = g.matmul(hw, w);
        g.add_row(f, b)
    }
}

#[derive(Debug, Clone)]
pub struct CrfParams {
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
}

impl CrfParams {
    pub fn view<'a>(&self, store: &'a ParamStore) -> CrfView<'a> {
        CrfView {
            transitions: store.value(self.transitions).view(),
            start: store.value(self.start).row(0),
            end: store.value(self.end).row(0),
        }
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.transitions, self.start, self.end]
    }
}

#[derive(Debug, Clone)]
pub struct SlotHead {
    pub mode: SlotMode,
    pub n_slots: usize,
    pub n_intents: usize,
    pub d_h: usize,
    pub features: Option<FeatureNet>,
    pub crf: Option<CrfParams>,
    w_s: ParamId,
    b_s: ParamId,
}

impl SlotHead {
    pub fn input_width(n_intents: usize, d_h: usize, with_features: bool) -> usize {
        n_intents + d_h + if with_features { FEATURE_HIDDEN } else { 0 }
    }

    pub fn init(
        store: &mut ParamStore,
        mode: SlotMode,
        with_features: bool,
        n_intents: usize,
        d_h: usize,
        n_slots: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if with_features {
            FeatureNet::init(store, rng)?;
        }
        let width = Self::input_width(n_intents, d_h, with_features);
        store.add("W_s", xavier(rng, n_slots, width), true);
        store.add("b_s", Array2::zeros((1, n_slots)), false);
        if mode == SlotMode::Crf {
            store.add("crf.T", uniform(rng, n_slots, n_slots, 0.1), false);
            store.add("crf.start", uniform(rng, 1, n_slots, 0.1), false);
            store.add("crf.end", uniform(rng, 1, n_slots, 0.1), false);
        }
        Self::bind(store, mode, with_features, n_intents, d_h, n_slots)
    }

    pub fn bind(
        store: &ParamStore,
        mode: SlotMode,
        with_features: bool,
        n_intents: usize,
        d_h: usize,
        n_slots: usize,
    ) -> Result<Self> {
        let width = Self::input_width(n_intents, d_h, with_features);
        let features = with_features.then(|| FeatureNet::bind(store)).transpose()?;
        let crf = match mode {
            SlotMode::Crf => Some(CrfParams {
                transitions: store.expect("crf.T", (n_slots, n_slots))?,
                start: store.expect("crf.start", (1, n_slots))?,
                end: store.expect("crf.end", (1, n_slots))?,
            }),
            SlotMode::Softmax => None,
        };
        Ok(SlotHead {
            mode,
            n_slots,
            n_intents,
            d_h,
            features,
            crf,
            w_s: store.expect("W_s", (n_slots, width))?,
            b_s: store.expect("b_s", (1, n_slots))?,
        })
    }

    /// Parameters that only the slot loss reaches.
    pub fn own_params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w_s, self.b_s];
        if let Some(f) = &self.features {
            ids.extend(f.ids());
        }
        if let Some(c) = &self.crf {
            ids.extend(c.ids());
        }
        ids
    }

    pub fn output_params(&self) -> (ParamId, ParamId) {
        (self.w_s, self.b_s)
    }

    /// Emission scores `rows x n_slots`. `intent_logits` is `batch x I`;
    /// its softmax is broadcast to every position of the sequence.
    pub fn forward(
        &self,
        g: &mut Graph,
        intent_logits: Var,
        h: Var,
        features: &Matrix,
        seg: &Segments,
        drop: &mut Dropout,
    ) -> Var {
        let probs = g.row_softmax(intent_logits);
        let probs = g.repeat_rows(probs, seg.width);
        let mut parts = vec![probs];
        if let Some(net) = &self.features {
            let x = g.constant(features.clone());
            parts.push(net.forward(g, x));
        }
        parts.push(h);
        let fused = g.concat_cols(&parts);
        let fused = drop.apply(g, fused);
        let (w, b) = (g.param(self.w_s), g.param(self.b_s));
        let y = g.matmul_t(fused, w);
        g.add_row(y, b)
    }
}
