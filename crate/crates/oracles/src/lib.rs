//! Slow, obviously-correct references for the tagging and CRF code.
//!
//! Nothing here shares code with `nlu-core`; inputs are plain strings and
//! arrays so the two sides can be compared directly.

use ndarray::{Array1, Array2};

/// A labeled span with inclusive bounds.
pub type Span = (String, usize, usize);

fn split(tag: &str) -> Option<(char, &str)> {
    let (p, l) = tag.split_once('-')?;
    match p {
        "B" => Some(('B', l)),
        "I" => Some(('I', l)),
        _ => None,
    }
}

/// Does `tags[i]` extend a chunk with label `label` that is open at `i - 1`?
fn continues(tags: &[&str], i: usize, label: &str) -> bool {
    matches!(split(tags[i]), Some(('I', l)) if l == label)
}

/// Could `tags[i]` carry label `label` as part of some chunk?
fn carries(tags: &[&str], i: usize, label: &str) -> bool {
    matches!(split(tags[i]), Some((_, l)) if l == label)
}

/// Every span `[s, e]` is tested against the definition directly: it opens
/// at `s` (a `B-`, or an `I-` not continuing a same-label tag), every later
/// position is a same-label `I-`, and the next position does not continue it.
pub fn chunks_by_enumeration(tags: &[&str]) -> Vec<Span> {
    let n = tags.len();
    let mut out = Vec::new();
    for s in 0..n {
        let Some((kind, label)) = split(tags[s]) else { continue };
        let opens = kind == 'B' || s == 0 || !carries(tags, s - 1, label);
        if !opens {
            continue;
        }
        for e in s..n {
            if !(s + 1..=e).all(|k| continues(tags, k, label)) {
                break;
            }
            let closes = e + 1 == n || !continues(tags, e + 1, label);
            if closes {
                out.push((label.to_string(), s, e));
            }
        }
    }
    out.sort_by_key(|s| (s.1, s.2));
    out
}

/// Per-token counts over non-`O` tags: (tp, fp, fn).
pub fn token_counts(gold: &[&str], pred: &[&str]) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        match (*g == "O", *p == "O") {
            (false, false) if g == p => tp += 1,
            (false, false) => {
                fp += 1;
                fn_ += 1;
            }
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (true, true) => {}
        }
    }
    (tp, fp, fn_)
}

pub fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// All `k^n` tag paths in lexicographic order.
pub fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
    let total = k.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let mut path = vec![0; n];
            for slot in path.iter_mut().rev() {
                *slot = code % k;
                code /= k;
            }
            path
        })
        .collect()
}

pub struct Crf<'a> {
    pub transitions: &'a Array2<f64>,
    pub start: &'a Array1<f64>,
    pub end: &'a Array1<f64>,
}

impl Crf<'_> {
    pub fn score(&self, emissions: &Array2<f64>, path: &[usize]) -> f64 {
        let mut s = self.start[path[0]] + self.end[path[path.len() - 1]];
        for (t, &y) in path.iter().enumerate() {
            s += emissions[[t, y]];
        }
        for w in path.windows(2) {
            s += self.transitions[[w[0], w[1]]];
        }
        s
    }

    /// `log Z` by summing every path, shifted by the best score.
    pub fn log_partition(&self, emissions: &Array2<f64>) -> f64 {
        let scores: Vec<f64> = all_paths(emissions.nrows(), self.start.len())
            .iter()
            .map(|p| self.score(emissions, p))
            .collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln()
    }

    /// Highest-scoring path; the lexicographically first one on ties.
    pub fn best_path(&self, emissions: &Array2<f64>) -> (Vec<usize>, f64) {
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        for p in all_paths(emissions.nrows(), self.start.len()) {
            let s = self.score(emissions, &p);
            if s > best.1 {
                best = (p, s);
            }
        }
        best
    }
}

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - n| / max(|a|, |n|)` over whole vectors; two near-zero vectors
/// (both norms under `floor`) are compared absolutely instead.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < floor {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_on_small_cases() {
        let got = chunks_by_enumeration(&["B-a", "I-a", "O", "I-b", "I-b", "B-b", "I-a"]);
        let want: Vec<Span> = vec![
            ("a".into(), 0, 1),
            ("b".into(), 3, 4),
            ("b".into(), 5, 5),
            ("a".into(), 6, 6),
        ];
        assert_eq!(got, want);
        assert!(chunks_by_enumeration(&["O", "O"]).is_empty());
    }

    #[test]
    fn paths_cover_the_space() {
        let p = all_paths(3, 2);
        assert_eq!(p.len(), 8);
        assert_eq!(p[5], vec![1, 0, 1]);
    }

    #[test]
    fn single_position_partition() {
        let e = Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap();
        let t = Array2::zeros((2, 2));
        let z = Array1::zeros(2);
        let crf = Crf { transitions: &t, start: &z, end: &z };
        assert!((crf.log_partition(&e) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn difference_of_a_cubic() {
        let d = central_difference(|x| x * x * x, 2.0, 1e-5);
        assert!((d - 12.0).abs() < 1e-8);
        assert_eq!(relative_error(&[0.0], &[1e-12], 1e-9), 1e-12);
    }
}
