//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices, with fused kernels for the handful of sequence operations the
//! model needs (masked self-attention, segment softmax pooling, layer
//! normalization, cross-entropy and the linear-chain CRF likelihood).
//!
//! Sequences are laid out as a padded batch: example `b`, position `t` lives
//! in row `b * width + t`, and only the first `lens[b]` rows of each block
//! are real.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::crf::{self, CrfView};
use crate::params::{ParamId, ParamStore};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    pub width: usize,
    pub lens: Vec<usize>,
}

impl Segments {
    pub fn new(width: usize, lens: Vec<usize>) -> Self {
        debug_assert!(lens.iter().all(|&l| l <= width));
        Segments { width, lens }
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn rows(&self) -> usize {
        self.width * self.lens.len()
    }

    pub fn row(&self, b: usize, t: usize) -> usize {
        b * self.width + t
    }

    pub fn is_valid(&self, row: usize) -> bool {
        row % self.width < self.lens[row / self.width]
    }

    pub fn valid_rows(&self) -> usize {
        self.lens.iter().sum()
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    Tanh(Var),
    Gelu(Var),
    Prelu(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seg: Segments,
        probs: Vec<Matrix>,
        drop: Vec<Option<Matrix>>,
    },
    SegSoftmax {
        x: Var,
        seg: Segments,
        scale: f64,
    },
    SegWeightedSum {
        w: Var,
        x: Var,
        seg: Segments,
    },
    RowSoftmax(Var),
    RepeatRows(Var, usize),
    ConcatCols(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Matrix,
    },
    CrfNll {
        emissions: Var,
        trans: Var,
        start: Var,
        end: Var,
        grads: [Matrix; 4],
    },
}

/// Attention probabilities kept for inspection, one `len x len` block per
/// (example, head).
pub struct AttentionMaps<'a> {
    pub heads: usize,
    pub probs: &'a [Matrix],
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    values: Vec<Matrix>,
    ops: Vec<Op>,
}

/// Parameter gradients indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.index()).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros of the parameter's shape if it did not
    /// take part in the computation.
    pub fn get_or_zeros(&self, id: ParamId, store: &ParamStore) -> Matrix {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(store.value(id).raw_dim()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId::from_index(i), g)))
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.value(id).clone();
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Var {
        let out = self.value(a) * &mask;
        self.push(out, Op::MulConst(a, mask))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    /// `max(0, x) + slope * min(0, x)` with a learned `1 x 1` slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Var {
        let alpha = self.scalar(slope);
        let out = self.value(a).mapv(|x| x.max(0.0) + alpha * x.min(0.0));
        self.push(out, Op::Prelu(a, slope))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let input = self.value(x);
        let n = input.ncols() as f64;
        let mut xhat = Matrix::zeros(input.raw_dim());
        let mut inv_std = Vec::with_capacity(input.nrows());
        for (row, mut out) in input.outer_iter().zip(xhat.outer_iter_mut()) {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            Zip::from(&mut out).and(&row).for_each(|o, &v| *o = (v - mean) * inv);
            inv_std.push(inv);
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Row lookup into an embedding table.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros((ids.len(), t.ncols()));
        for (mut row, &id) in out.outer_iter_mut().zip(&ids) {
            row.assign(&t.row(id));
        }
        self.push(out, Op::Gather { table, ids })
    }

    /// Multi-head scaled dot-product self-attention over a padded batch.
    /// Padded keys are masked out; `drop`, when given, supplies one dropout
    /// mask per (example, head) applied to the probabilities.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seg: &Segments,
        mut dropout: impl FnMut(usize, usize) -> Option<Matrix>,
    ) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let d = qm.ncols();
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let w = seg.width;
        let mut out = Matrix::zeros((seg.rows(), d));
        let mut probs = Vec::with_capacity(seg.batch() * heads);
        let mut drops = Vec::with_capacity(seg.batch() * heads);
        for (b, &len) in seg.lens.iter().enumerate() {
            let rows = b * w..b * w + w;
            for h in 0..heads {
                let cols = h * dk..(h + 1) * dk;
                let qh = qm.slice(s![rows.clone(), cols.clone()]);
                let kh = km.slice(s![b * w..b * w + len, cols.clone()]);
                let vh = vm.slice(s![b * w..b * w + len, cols.clone()]);
                let mut p = qh.dot(&kh.t()) * scale;
                for mut r in p.outer_iter_mut() {
                    let lse = log_sum_exp(r.iter().copied());
                    r.mapv_inplace(|x| (x - lse).exp());
                }
                let mask = dropout(b, h);
                let o = match &mask {
                    Some(m) => (&p * m).dot(&vh),
                    None => p.dot(&vh),
                };
                out.slice_mut(s![rows.clone(), cols]).assign(&o);
                probs.push(p);
                drops.push(mask);
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seg: seg.clone(),
                probs,
                drop: drops,
            },
        )
    }

    pub fn attention_maps(&self, v: Var) -> Option<AttentionMaps<'_>> {
        match &self.ops[v.0] {
            Op::Attention { heads, probs, .. } => Some(AttentionMaps {
                heads: *heads,
                probs,
            }),
            _ => None,
        }
    }

    /// Softmax of `scale * x` within each sequence of a `rows x 1` column;
    /// padded rows get weight 0.
    pub fn seg_softmax(&mut self, x: Var, seg: &Segments, scale: f64) -> Var {
        let input = self.value(x);
        let mut out = Matrix::zeros((seg.rows(), 1));
        for (b, &len) in seg.lens.iter().enumerate() {
            let base = b * seg.width;
            let vals = (0..len).map(|t| scale * input[[base + t, 0]]);
            let lse = log_sum_exp(vals.clone());
            for (t, v) in vals.enumerate() {
                out[[base + t, 0]] = (v - lse).exp();
            }
        }
        self.push(
            out,
            Op::SegSoftmax {
                x,
                seg: seg.clone(),
                scale,
            },
        )
    }

    /// Per-sequence weighted sum of rows: `batch x d`.
    pub fn seg_weighted_sum(&mut self, w: Var, x: Var, seg: &Segments) -> Var {
        let (wm, xm) = (self.value(w), self.value(x));
        let mut out = Matrix::zeros((seg.batch(), xm.ncols()));
        for (b, &len) in seg.lens.iter().enumerate() {
            let mut acc = out.row_mut(b);
            for t in 0..len {
                let r = seg.row(b, t);
                acc.scaled_add(wm[[r, 0]], &xm.row(r));
            }
        }
        self.push(
            out,
            Op::SegWeightedSum {
                w,
                x,
                seg: seg.clone(),
            },
        )
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut r in out.outer_iter_mut() {
            let lse = log_sum_exp(r.iter().copied());
            r.mapv_inplace(|x| (x - lse).exp());
        }
        self.push(out, Op::RowSoftmax(a))
    }

    /// Repeats each row `times` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let input = self.value(a);
        let mut out = Matrix::zeros((input.nrows() * times, input.ncols()));
        for (i, row) in input.outer_iter().enumerate() {
            for t in 0..times {
                out.row_mut(i * times + t).assign(&row);
            }
        }
        self.push(out, Op::RepeatRows(a, times))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let out = self.value(a).select(Axis(0), &rows);
        self.push(out, Op::SelectRows(a, rows))
    }

    /// `sum_r weights[r] * (logsumexp(logits[r]) - logits[r][targets[r]])`.
    /// Rows with zero weight are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Var {
        let l = self.value(logits);
        assert_eq!(l.nrows(), targets.len());
        assert_eq!(l.nrows(), weights.len());
        let mut probs = Matrix::zeros(l.raw_dim());
        let mut loss = 0.0;
        for (r, row) in l.outer_iter().enumerate() {
            if weights[r] == 0.0 {
                continue;
            }
            let lse = log_sum_exp(row.iter().copied());
            loss += weights[r] * (lse - row[targets[r]]);
            for (p, &x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        self.push(
            Matrix::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            },
        )
    }

    /// Weighted sum over sequences of the CRF negative log-likelihood of the
    /// gold path. `gold` is indexed by batch row like the emissions.
    pub fn crf_nll(
        &mut self,
        emissions: Var,
        trans: Var,
        start: Var,
        end: Var,
        seg: &Segments,
        gold: &[usize],
        weights: &[f64],
    ) -> Var {
        let e = self.value(emissions);
        let view = CrfView {
            transitions: self.value(trans).view(),
            start: self.value(start).row(0),
            end: self.value(end).row(0),
        };
        let n_tags = e.ncols();
        let mut d_e = Matrix::zeros(e.raw_dim());
        let mut d_t = Matrix::zeros((n_tags, n_tags));
        let mut d_s = Matrix::zeros((1, n_tags));
        let mut d_end = Matrix::zeros((1, n_tags));
        let mut loss = 0.0;
        for (b, &len) in seg.lens.iter().enumerate() {
            let rows = seg.row(b, 0)..seg.row(b, 0) + len;
            let em = e.slice(s![rows.clone(), ..]);
            let g = &gold[rows.clone()];
            let out = crf::nll_with_grad(em, g, &view);
            let wt = weights[b];
            loss += wt * out.nll;
            d_e.slice_mut(s![rows, ..]).scaled_add(wt, &out.d_emissions);
            d_t.scaled_add(wt, &out.d_transitions);
            d_s.row_mut(0).scaled_add(wt, &out.d_start);
            d_end.row_mut(0).scaled_add(wt, &out.d_end);
        }
        self.push(
            Matrix::from_elem((1, 1), loss),
            Op::CrfNll {
                emissions,
                trans,
                start,
                end,
                grads: [d_e, d_t, d_s, d_end],
            },
        )
    }

    /// Reverse pass from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.values.len()];
        grads[root.0] = Some(Matrix::ones((1, 1)));
        let mut params: Vec<Option<Matrix>> = vec![None; self.store.len()];

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Param(id) => match &mut params[id.index()] {
                    Some(existing) => *existing += &g,
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::MulConst(a, mask) => acc(&mut grads, *a, g * mask),
                Op::Tanh(a) => {
                    let y = &self.values[i];
                    let ga = Zip::from(&g).and(y).map_collect(|&g, &y| g * (1.0 - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let ga = Zip::from(&g).and(x).map_collect(|&g, &x| g * gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::Prelu(a, slope) => {
                    let alpha = self.scalar(*slope);
                    let x = self.value(*a);
                    let ga = Zip::from(&g)
                        .and(x)
                        .map_collect(|&g, &x| if x > 0.0 { g } else { g * alpha });
                    let gs: f64 = Zip::from(&g).and(x).fold(0.0, |s, &g, &x| s + g * x.min(0.0));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *slope, Matrix::from_elem((1, 1), gs));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gain_v = self.value(*gain);
                    let g_gain = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let g_bias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gain_v;
                    let n = xhat.ncols() as f64;
                    let mut gx = Matrix::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.dot(&xh);
                        let inv = inv_std[r];
                        Zip::from(gx.row_mut(r)).and(&dh).and(&xh).for_each(|o, &d, &h| {
                            *o = inv / n * (n * d - sum_dh - h * sum_dh_xh);
                        });
                    }
                    acc(&mut grads, *gain, g_gain);
                    acc(&mut grads, *bias, g_bias);
                    acc(&mut grads, *x, gx);
                }
                Op::Gather { table, ids } => {
                    let mut gt = Matrix::zeros(self.value(*table).raw_dim());
                    for (row, &id) in g.outer_iter().zip(ids) {
                        let mut dst = gt.row_mut(id);
                        dst += &row;
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    seg,
                    probs,
                    drop,
                } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qm.ncols();
                    let dk = d / heads;
                    let scale = 1.0 / (dk as f64).sqrt();
                    let w = seg.width;
                    let mut gq = Matrix::zeros(qm.raw_dim());
                    let mut gk = Matrix::zeros(km.raw_dim());
                    let mut gv = Matrix::zeros(vm.raw_dim());
                    for (b, &len) in seg.lens.iter().enumerate() {
                        for h in 0..*heads {
                            let idx = b * heads + h;
                            let p = &probs[idx];
                            let cols = h * dk..(h + 1) * dk;
                            let all = b * w..b * w + w;
                            let keys = b * w..b * w + len;
                            let go = g.slice(s![all.clone(), cols.clone()]);
                            let qh = qm.slice(s![all.clone(), cols.clone()]);
                            let kh = km.slice(s![keys.clone(), cols.clone()]);
                            let vh = vm.slice(s![keys.clone(), cols.clone()]);
                            let (pd, mut dp) = match &drop[idx] {
                                Some(mask) => {
                                    let pd = p * mask;
                                    let dp = go.dot(&vh.t()) * mask;
                                    (pd, dp)
                                }
                                None => (p.clone(), go.dot(&vh.t())),
                            };
                            gv.slice_mut(s![keys.clone(), cols.clone()])
                                .scaled_add(1.0, &pd.t().dot(&go));
                            for (mut dr, pr) in dp.outer_iter_mut().zip(p.outer_iter()) {
                                let dot = dr.dot(&pr);
                                Zip::from(&mut dr).and(&pr).for_each(|d, &p| *d = p * (*d - dot));
                            }
                            gq.slice_mut(s![all.clone(), cols.clone()])
                                .scaled_add(scale, &dp.dot(&kh));
                            gk.slice_mut(s![keys, cols]).scaled_add(scale, &dp.t().dot(&qh));
                        }
                    }
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::SegSoftmax { x, seg, scale } => {
                    let y = &self.values[i];
                    let mut gx = Matrix::zeros(y.raw_dim());
                    for (b, &len) in seg.lens.iter().enumerate() {
                        let base = b * seg.width;
                        let dot: f64 = (0..len).map(|t| y[[base + t, 0]] * g[[base + t, 0]]).sum();
                        for t in 0..len {
                            let r = base + t;
                            gx[[r, 0]] = scale * y[[r, 0]] * (g[[r, 0]] - dot);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SegWeightedSum { w, x, seg } => {
                    let (wm, xm) = (self.value(*w), self.value(*x));
                    let mut gw = Matrix::zeros(wm.raw_dim());
                    let mut gx = Matrix::zeros(xm.raw_dim());
                    for (b, &len) in seg.lens.iter().enumerate() {
                        let gb = g.row(b);
                        for t in 0..len {
                            let r = seg.row(b, t);
                            gw[[r, 0]] = gb.dot(&xm.row(r));
                            gx.row_mut(r).scaled_add(wm[[r, 0]], &gb);
                        }
                    }
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *x, gx);
                }
                Op::RowSoftmax(a) => {
                    let y = &self.values[i];
                    let mut ga = Matrix::zeros(y.raw_dim());
                    for ((mut gr, yr), dr) in ga.outer_iter_mut().zip(y.outer_iter()).zip(g.outer_iter()) {
                        let dot = yr.dot(&dr);
                        Zip::from(&mut gr).and(&yr).and(&dr).for_each(|o, &y, &d| *o = y * (d - dot));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::RepeatRows(a, times) => {
                    let shape = self.value(*a).raw_dim();
                    let mut ga = Matrix::zeros(shape);
                    for (r, row) in g.outer_iter().enumerate() {
                        let mut dst = ga.row_mut(r / times);
                        dst += &row;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let width = self.value(p).ncols();
                        let gp = g.slice(s![.., offset..offset + width]).to_owned();
                        offset += width;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::SelectRows(a, rows) => {
                    let mut ga = Matrix::zeros(self.value(*a).raw_dim());
                    for (src, &dst) in g.outer_iter().zip(rows) {
                        let mut d = ga.row_mut(dst);
                        d += &src;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let up = g[[0, 0]];
                    let mut gl = probs.clone();
                    for (r, mut row) in gl.outer_iter_mut().enumerate() {
                        let wt = weights[r] * up;
                        if weights[r] == 0.0 {
                            row.fill(0.0);
                            continue;
                        }
                        row[targets[r]] -= 1.0;
                        row *= wt;
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::CrfNll {
                    emissions,
                    trans,
                    start,
                    end,
                    grads: [d_e, d_t, d_s, d_end],
                } => {
                    let up = g[[0, 0]];
                    acc(&mut grads, *emissions, d_e * up);
                    acc(&mut grads, *trans, d_t * up);
                    acc(&mut grads, *start, d_s * up);
                    acc(&mut grads, *end, d_end * up);
                }
            }
        }
        Gradients { grads: params }
    }
}
