//! Intent pooling attention and the intent classifier.
//!
//! Per position `f_i = v . tanh(W_int_e h_i)`; the weights are a softmax of
//! `f / sqrt(d_h)` over real positions (special tokens included); the
//! sentence vector is `tanh(sum_i alpha_i h_i)` followed by a linear layer.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dropout::Dropout;
use crate::error::{Error, Result};
use crate::graph::{log_sum_exp, Graph, Segments, Var};
use crate::params::{xavier, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentPool {
    Attention,
    StartToken,
}

impl std::str::FromStr for IntentPool {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(IntentPool::Attention),
            "start_token" => Ok(IntentPool::StartToken),
            _ => Err(Error::Validation(format!("unknown intent pool `{s}`"))),
        }
    }
}

impl std::fmt::Display for IntentPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IntentPool::Attention => "attention",
            IntentPool::StartToken => "start_token",
        })
    }
}

/// Unnormalized attention scores; padded positions get `-inf`.
pub fn attention_logits(
    h: ArrayView2<f64>,
    pad_mask: &[bool],
    w_e: ArrayView2<f64>,
    v: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let d = h.ncols();
    if w_e.dim() != (d, d) || v.len() != d {
        return Err(Error::Shape(format!(
            "attention expects W_int_e {d}x{d} and v of {d}, got {:?} and {}",
            w_e.dim(),
            v.len()
        )));
    }
    if pad_mask.len() != h.nrows() {
        return Err(Error::mismatch("pad mask vs hidden states", pad_mask.len(), h.nrows()));
    }
    let scores = h.dot(&w_e.t()).mapv(f64::tanh).dot(&v);
    Ok(Array1::from_iter(
        scores
            .iter()
            .zip(pad_mask)
            .map(|(&s, &pad)| if pad { f64::NEG_INFINITY } else { s }),
    ))
}

/// `softmax(logits / sqrt(d_h))`, with zeros wherever the logit is `-inf`.
pub fn attention_weights(logits: ArrayView1<f64>, d_h: usize) -> Result<Array1<f64>> {
    if !logits.iter().any(|x| x.is_finite()) {
        return Err(Error::Validation("every position is padded".into()));
    }
    let scale = 1.0 / (d_h as f64).sqrt();
    let scaled = logits.mapv(|x| x * scale);
    let lse = log_sum_exp(scaled.iter().copied().filter(|x| x.is_finite()));
    Ok(scaled.mapv(|x| if x.is_finite() { (x - lse).exp() } else { 0.0 }))
}

/// `tanh(sum_i alpha_i h_i)`.
pub fn pool(h: ArrayView2<f64>, alpha: ArrayView1<f64>) -> Result<Array1<f64>> {
    if alpha.len() != h.nrows() {
        return Err(Error::mismatch("attention weights vs positions", alpha.len(), h.nrows()));
    }
    Ok(alpha.dot(&h).mapv(f64::tanh))
}

/// `W_int h_int + b_int`.
pub fn intent_logits(
    h_int: ArrayView1<f64>,
    w_int: ArrayView2<f64>,
    b_int: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if w_int.ncols() != h_int.len() || w_int.nrows() != b_int.len() {
        return Err(Error::Shape(format!(
            "W_int is {:?}, h_int has {}, b_int has {}",
            w_int.dim(),
            h_int.len(),
            b_int.len()
        )));
    }
    Ok(w_int.dot(&h_int) + b_int)
}

/// Handles to the intent head's tensors.
#[derive(Debug, Clone)]
pub struct IntentHead {
    pub pool: IntentPool,
    pub d_h: usize,
    pub n_intents: usize,
    /// Attention pooling: `W_int_e` (`d x d`) and `v` (`1 x d`). Start-token
    /// pooling: a dense pooler weight (`d x d`, input-first) and bias.
    pool_w: ParamId,
    pool_v: ParamId,
    w_int: ParamId,
    b_int: ParamId,
}

/// What the head produced on a batch.
pub struct IntentForward {
    /// `batch x n_intents`.
    pub logits: Var,
    /// `rows x 1` attention weights, before dropout (attention pooling only).
    pub alpha: Option<Var>,
}

fn pool_names(pool: IntentPool) -> (&'static str, &'static str) {
    match pool {
        IntentPool::Attention => ("intent.W_int_e", "intent.v"),
        IntentPool::StartToken => ("intent.pooler_w", "intent.pooler_b"),
    }
}

impl IntentHead {
    pub fn init(
        store: &mut ParamStore,
        pool: IntentPool,
        d_h: usize,
        n_intents: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (wn, vn) = pool_names(pool);
        store.add(wn, xavier(rng, d_h, d_h), true);
        match pool {
            IntentPool::Attention => store.add(vn, xavier(rng, 1, d_h), true),
            IntentPool::StartToken => store.add(vn, ndarray::Array2::zeros((1, d_h)), false),
        };
        store.add("intent.W_int", xavier(rng, n_intents, d_h), true);
        store.add("intent.b_int", ndarray::Array2::zeros((1, n_intents)), false);
        Self::bind(store, pool, d_h, n_intents)
    }

    pub fn bind(store: &ParamStore, pool: IntentPool, d_h: usize, n_intents: usize) -> Result<Self> {
        let (wn, vn) = pool_names(pool);
        Ok(IntentHead {
            pool,
            d_h,
            n_intents,
            pool_w: store.expect(wn, (d_h, d_h))?,
            pool_v: store.expect(vn, (1, d_h))?,
            w_int: store.expect("intent.W_int", (n_intents, d_h))?,
            b_int: store.expect("intent.b_int", (1, n_intents))?,
        })
    }

    pub fn attention_params(&self) -> Option<(ParamId, ParamId)> {
        (self.pool == IntentPool::Attention).then_some((self.pool_w, self.pool_v))
    }

    pub fn classifier_params(&self) -> (ParamId, ParamId) {
        (self.w_int, self.b_int)
    }

    /// Builds the head over `rows x d_h` encoder states.
    pub fn forward(&self, g: &mut Graph, h: Var, seg: &Segments, drop: &mut Dropout) -> IntentForward {
        let (h_int, alpha) = match self.pool {
            IntentPool::Attention => {
                let w_e = g.param(self.pool_w);
                let v = g.param(self.pool_v);
                let proj = g.matmul_t(h, w_e);
                let act = g.tanh(proj);
                let scores = g.matmul_t(act, v);
                let alpha = g.seg_softmax(scores, seg, 1.0 / (self.d_h as f64).sqrt());
                let dropped = drop.apply(g, alpha);
                let summed = g.seg_weighted_sum(dropped, h, seg);
                (g.tanh(summed), Some(alpha))
            }
            IntentPool::StartToken => {
                let first = (0..seg.batch()).map(|b| seg.row(b, 0)).collect();
                let cls = g.select_rows(h, first);
                let (w, b) = (g.param(self.pool_w), g.param(self.pool_v));
                let y = g.matmul(cls, w);
                let y = g.add_row(y, b);
                (g.tanh(y), None)
            }
        };
        let h_int = drop.apply(g, h_int);
        let (w, b) = (g.param(self.w_int), g.param(self.b_int));
        let y = g.matmul_t(h_int, w);
        IntentForward {
            logits: g.add_row(y, b),
            alpha,
        }
    }
}
