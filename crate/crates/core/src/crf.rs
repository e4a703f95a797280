//! Linear-chain CRF: log-space forward/backward, negative log-likelihood
//! with its gradient, and Viterbi decoding.
//!
//! `transitions[[i, j]]` scores moving from tag `i` to tag `j`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::log_sum_exp;

#[derive(Debug, Clone, Copy)]
pub struct CrfView<'a> {
    pub transitions: ArrayView2<'a, f64>,
    pub start: ArrayView1<'a, f64>,
    pub end: ArrayView1<'a, f64>,
}

impl CrfView<'_> {
    pub fn n_tags(&self) -> usize {
        self.start.len()
    }
}

/// Unnormalized score of one tag path.
pub fn path_score(emissions: ArrayView2<f64>, tags: &[usize], crf: &CrfView) -> f64 {
    let mut score = crf.start[tags[0]] + crf.end[tags[tags.len() - 1]];
    for (t, &tag) in tags.iter().enumerate() {
        score += emissions[[t, tag]];
        if t > 0 {
            score += crf.transitions[[tags[t - 1], tag]];
        }
    }
    score
}

fn forward(emissions: ArrayView2<f64>, crf: &CrfView) -> Array2<f64> {
    let (n, k) = emissions.dim();
    let mut alpha = Array2::zeros((n, k));
    for j in 0..k {
        alpha[[0, j]] = crf.start[j] + emissions[[0, j]];
    }
    for t in 1..n {
        for j in 0..k {
            let prev = alpha.row(t - 1);
            alpha[[t, j]] =
                log_sum_exp((0..k).map(|i| prev[i] + crf.transitions[[i, j]])) + emissions[[t, j]];
        }
    }
    alpha
}

fn backward(emissions: ArrayView2<f64>, crf: &CrfView) -> Array2<f64> {
    let (n, k) = emissions.dim();
    let mut beta = Array2::zeros((n, k));
    for j in 0..k {
        beta[[n - 1, j]] = crf.end[j];
    }
    for t in (0..n.saturating_sub(1)).rev() {
        for i in 0..k {
            let next = beta.row(t + 1);
            beta[[t, i]] = log_sum_exp(
                (0..k).map(|j| crf.transitions[[i, j]] + emissions[[t + 1, j]] + next[j]),
            );
        }
    }
    beta
}

/// `log Z`: log-sum over all tag paths of their exponentiated scores.
pub fn log_partition(emissions: ArrayView2<f64>, crf: &CrfView) -> f64 {
    let alpha = forward(emissions, crf);
    let last = alpha.row(alpha.nrows() - 1);
    log_sum_exp((0..crf.n_tags()).map(|j| last[j] + crf.end[j]))
}

fn validate(emissions: ArrayView2<f64>, gold: &[usize], crf: &CrfView) -> Result<()> {
    let (n, k) = emissions.dim();
    if n == 0 {
        return Err(Error::Validation("CRF needs at least one position".into()));
    }
    if k != crf.n_tags() || crf.transitions.dim() != (k, k) || crf.end.len() != k {
        return Err(Error::Shape(format!(
            "emissions have {k} tags, CRF parameters have {}",
            crf.n_tags()
        )));
    }
    if gold.len() != n {
        return Err(Error::mismatch("gold tags vs emissions", gold.len(), n));
    }
    if let Some(&bad) = gold.iter().find(|&&g| g >= k) {
        return Err(Error::Validation(format!("gold tag id {bad} out of range for {k} tags")));
    }
    Ok(())
}

/// `log Z - score(gold)`.
pub fn crf_nll(emissions: ArrayView2<f64>, gold: &[usize], crf: &CrfView) -> Result<f64> {
    validate(emissions, gold, crf)?;
    Ok(log_partition(emissions, crf) - path_score(emissions, gold, crf))
}

/// Per-position tag marginals `p(y_t = j)`.
pub fn marginals(emissions: ArrayView2<f64>, crf: &CrfView) -> Array2<f64> {
    let alpha = forward(emissions, crf);
    let beta = backward(emissions, crf);
    let log_z = log_partition(emissions, crf);
    (&alpha + &beta).mapv(|x| (x - log_z).exp())
}

pub(crate) struct NllGrad {
    pub nll: f64,
    pub d_emissions: Array2<f64>,
    pub d_transitions: Array2<f64>,
    pub d_start: Array1<f64>,
    pub d_end: Array1<f64>,
}

/// NLL and its gradient: expected feature counts under the model minus the
/// gold path's counts.
pub(crate) fn nll_with_grad(emissions: ArrayView2<f64>, gold: &[usize], crf: &CrfView) -> NllGrad {
    let (n, k) = emissions.dim();
    let alpha = forward(emissions, crf);
    let beta = backward(emissions, crf);
    let last = alpha.row(n - 1);
    let log_z = log_sum_exp((0..k).map(|j| last[j] + crf.end[j]));
    let nll = log_z - path_score(emissions, gold, crf);

    let mut d_emissions = (&alpha + &beta).mapv(|x| (x - log_z).exp());
    let mut d_start = d_emissions.row(0).to_owned();
    let mut d_end = d_emissions.row(n - 1).to_owned();
    let mut d_transitions = Array2::zeros((k, k));
    for t in 1..n {
        for i in 0..k {
            for j in 0..k {
                let lp = alpha[[t - 1, i]]
                    + crf.transitions[[i, j]]
                    + emissions[[t, j]]
                    + beta[[t, j]]
                    - log_z;
                d_transitions[[i, j]] += lp.exp();
            }
        }
    }
    for (t, &g) in gold.iter().enumerate() {
        d_emissions[[t, g]] -= 1.0;
        if t > 0 {
            d_transitions[[gold[t - 1], g]] -= 1.0;
        }
    }
    d_start[gold[0]] -= 1.0;
    d_end[gold[n - 1]] -= 1.0;
    NllGrad {
        nll,
        d_emissions,
        d_transitions,
        d_start,
        d_end,
    }
}

/// Highest-scoring tag path and its score. Ties go to the lowest tag id.
pub fn viterbi(emissions: ArrayView2<f64>, crf: &CrfView) -> (Vec<usize>, f64) {
    let (n, k) = emissions.dim();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let mut score = Array2::<f64>::zeros((n, k));
    let mut back = Array2::<usize>::zeros((n, k));
    for j in 0..k {
        score[[0, j]] = crf.start[j] + emissions[[0, j]];
    }
    for t in 1..n {
        for j in 0..k {
            let mut best = (0, f64::NEG_INFINITY);
            for i in 0..k {
                let s = score[[t - 1, i]] + crf.transitions[[i, j]];
                if s > best.1 {
                    best = (i, s);
                }
            }
            back[[t, j]] = best.0;
            score[[t, j]] = best.1 + emissions[[t, j]];
        }
    }
    let mut best = (0, f64::NEG_INFINITY);
    for j in 0..k {
        let s = score[[n - 1, j]] + crf.end[j];
        if s > best.1 {
            best = (j, s);
        }
    }
    let mut path = vec![best.0; n];
    for t in (1..n).rev() {
        path[t - 1] = back[[t, path[t]]];
    }
    (path, best.1)
}
