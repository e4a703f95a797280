//! Compact post-LN Transformer encoder trained from scratch.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dropout::{Dropout, Mode};
use crate::error::{Error, Result};
use crate::graph::{Graph, Matrix, Segments, Var};
use crate::params::{uniform, xavier, ParamId, ParamStore};

const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_h: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_h: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            vocab_size: 0,
            max_len: 50,
            dropout_rate: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.d_h == 0 || self.n_heads == 0 || !self.d_h.is_multiple_of(self.n_heads) {
            problems.push(format!(
                "d_h ({}) must be a positive multiple of n_heads ({})",
                self.d_h, self.n_heads
            ));
        }
        if self.n_layers == 0 || self.d_ff == 0 {
            problems.push("n_layers and d_ff must be positive".to_string());
        }
        if self.max_len < 3 {
            problems.push(format!("max_len ({}) must be at least 3", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            problems.push(format!("dropout_rate ({}) must lie in [0, 1)", self.dropout_rate));
        }
        if self.vocab_size < 4 {
            problems.push(format!("vocab_size ({}) is below the reserved tokens", self.vocab_size));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Handles to the encoder's tensors inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    tok: ParamId,
    pos: ParamId,
    layers: Vec<Layer>,
}

fn shapes(c: &EncoderConfig) -> Vec<(String, (usize, usize), bool)> {
    let d = c.d_h;
    let mut out = vec![
        ("encoder.tok".to_string(), (c.vocab_size, d), true),
        ("encoder.pos".to_string(), (c.max_len, d), true),
    ];
    for l in 0..c.n_layers {
        let p = |n: &str| format!("encoder.l{l}.{n}");
        out.extend([
            (p("wq"), (d, d), true),
            (p("bq"), (1, d), false),
            (p("wk"), (d, d), true),
            (p("bk"), (1, d), false),
            (p("wv"), (d, d), true),
            (p("bv"), (1, d), false),
            (p("wo"), (d, d), true),
            (p("bo"), (1, d), false),
            (p("ln1_g"), (1, d), false),
            (p("ln1_b"), (1, d), false),
            (p("w1"), (d, c.d_ff), true),
            (p("b1"), (1, c.d_ff), false),
            (p("w2"), (c.d_ff, d), true),
            (p("b2"), (1, d), false),
            (p("ln2_g"), (1, d), false),
            (p("ln2_b"), (1, d), false),
        ]);
    }
    out
}

impl EncoderParams {
    /// Adds freshly initialized encoder tensors to `store`.
    pub fn init(store: &mut ParamStore, config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        for (name, (r, c), decay) in shapes(config) {
            let value = if name.ends_with("_g") {
                Array2::ones((r, c))
            } else if !decay {
                Array2::zeros((r, c))
            } else if name == "encoder.tok" || name == "encoder.pos" {
                uniform(rng, r, c, 0.1)
            } else {
                xavier(rng, r, c)
            };
            store.add(&name, value, decay);
        }
        Self::bind(store, config)
    }

    /// Resolves handles to existing tensors, checking every shape.
    pub fn bind(store: &ParamStore, config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut ids = shapes(config)
            .into_iter()
            .map(|(name, shape, _)| store.expect(&name, shape))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut next = || ids.next().expect("shape table covers every tensor");
        let tok = next();
        let pos = next();
        let layers = (0..config.n_layers)
            .map(|_| Layer {
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln1_g: next(),
                ln1_b: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
                ln2_g: next(),
                ln2_b: next(),
            })
            .collect();
        Ok(EncoderParams {
            config: config.clone(),
            tok,
            pos,
            layers,
        })
    }

    pub fn token_embedding(&self) -> ParamId {
        self.tok
    }

    pub fn position_embedding(&self) -> ParamId {
        self.pos
    }

    /// Checks ids and lengths of a padded batch before building a graph.
    pub fn check_input(&self, ids: &[usize], seg: &Segments) -> Result<()> {
        if ids.len() != seg.rows() {
            return Err(Error::mismatch("piece ids vs batch rows", ids.len(), seg.rows()));
        }
        if seg.width > self.config.max_len {
            return Err(Error::Validation(format!(
                "sequence length {} exceeds max_len {}",
                seg.width, self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Validation(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Builds the encoder over a padded batch; returns `rows x d_h` states.
    pub fn forward(&self, g: &mut Graph, ids: &[usize], seg: &Segments, drop: &mut Dropout) -> Var {
        let positions: Vec<usize> = (0..seg.rows()).map(|r| r % seg.width).collect();
        let tok = g.param(self.tok);
        let pos = g.param(self.pos);
        let te = g.gather(tok, ids.to_vec());
        let pe = g.gather(pos, positions);
        let x = g.add(te, pe);
        let mut x = drop.apply(g, x);
        for layer in &self.layers {
            x = self.layer(g, layer, x, seg, drop);
        }
        x
    }

    fn layer(&self, g: &mut Graph, l: &Layer, x: Var, seg: &Segments, drop: &mut Dropout) -> Var {
        let dense = |g: &mut Graph, x: Var, w: ParamId, b: ParamId| {
            let (w, b) = (g.param(w), g.param(b));
            let y = g.matmul(x, w);
            g.add_row(y, b)
        };
        let q = dense(g, x, l.wq, l.bq);
        let k = dense(g, x, l.wk, l.bk);
        let v = dense(g, x, l.wv, l.bv);
        let width = seg.width;
        let lens = seg.lens.clone();
        let att = g.attention(q, k, v, self.config.n_heads, seg, |b, _| drop.mask(width, lens[b]));
        let o = dense(g, att, l.wo, l.bo);
        let o = drop.apply(g, o);
        let r = g.add(x, o);
        let (g1, b1) = (g.param(l.ln1_g), g.param(l.ln1_b));
        let x = g.layer_norm(r, g1, b1, LN_EPS);
        let f = dense(g, x, l.w1, l.b1);
        let f = g.gelu(f);
        let f = dense(g, f, l.w2, l.b2);
        let f = drop.apply(g, f);
        let r = g.add(x, f);
        let (g2, b2) = (g.param(l.ln2_g), g.param(l.ln2_b));
        g.layer_norm(r, g2, b2, LN_EPS)
    }
}

/// Deterministic encoder initialization into a fresh store.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<(ParamStore, EncoderParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let params = EncoderParams::init(&mut store, config, &mut rng)?;
    Ok((store, params))
}

/// Encoder output for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub h: Matrix,
    /// `true` at padded positions.
    pub pad_mask: Vec<bool>,
}

impl HiddenStates {
    pub fn n_valid(&self) -> usize {
        self.pad_mask.iter().filter(|&&p| !p).count()
    }
}

/// Encodes one sequence whose first `valid_len` positions are real.
/// `rng` is only consulted in train mode.
pub fn encode(
    piece_ids: &[usize],
    valid_len: usize,
    store: &ParamStore,
    params: &EncoderParams,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<HiddenStates> {
    if valid_len == 0 || valid_len > piece_ids.len() {
        return Err(Error::Validation(format!(
            "valid length {valid_len} outside 1..={}",
            piece_ids.len()
        )));
    }
    let seg = Segments::new(piece_ids.len(), vec![valid_len]);
    params.check_input(piece_ids, &seg)?;
    let mut drop = match mode {
        Mode::Train => Dropout::new(params.config.dropout_rate, rng),
        Mode::Infer => Dropout::off(),
    };
    let mut g = Graph::new(store);
    let h = params.forward(&mut g, piece_ids, &seg, &mut drop);
    Ok(HiddenStates {
        h: g.value(h).clone(),
        pad_mask: (0..piece_ids.len()).map(|t| t >= valid_len).collect(),
    })
}
