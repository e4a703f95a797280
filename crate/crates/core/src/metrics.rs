//! Evaluation measures: intent accuracy, sentence accuracy, chunk-level slot
//! F1, per-token micro F1, and relative error reduction.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tags::{extract_chunks, SlotTag};

/// True/false positive and false negative counts with derived scores.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct F1Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl F1Counts {
    /// `2tp / (2tp + fp + fn)`; an empty gold and predicted set scores 1.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn precision(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }
}

fn ratio_or_one(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        1.0
    } else {
        num as f64 / denom as f64
    }
}

fn check_pairs(gold: &[Vec<SlotTag>], pred: &[Vec<SlotTag>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::mismatch("corpus size", gold.len(), pred.len()));
    }
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(Error::mismatch("tag sequence", g.len(), p.len()));
        }
        if g.iter().chain(p).any(|t| matches!(t, SlotTag::X)) {
            return Err(Error::Validation(
                "X tags must be de-aligned before scoring".into(),
            ));
        }
    }
    Ok(())
}

/// Micro-averaged chunk-level counts over a corpus.
pub fn slot_f1(gold: &[Vec<SlotTag>], pred: &[Vec<SlotTag>]) -> Result<F1Counts> {
    check_pairs(gold, pred)?;
    let mut counts = F1Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        let gold_chunks: HashSet<_> = extract_chunks(g).into_iter().collect();
        let pred_chunks: HashSet<_> = extract_chunks(p).into_iter().collect();
        let hit = gold_chunks.intersection(&pred_chunks).count();
        counts.tp += hit;
        counts.fp += pred_chunks.len() - hit;
        counts.fn_ += gold_chunks.len() - hit;
    }
    Ok(counts)
}

/// Micro-averaged counts where every non-`O` token tag is one item.
pub fn per_token_micro_f1(gold: &[Vec<SlotTag>], pred: &[Vec<SlotTag>]) -> Result<F1Counts> {
    check_pairs(gold, pred)?;
    let mut counts = F1Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        for (gt, pt) in g.iter().zip(p) {
            match (gt.is_outside(), pt.is_outside()) {
                (true, true) => {}
                _ if gt == pt => counts.tp += 1,
                (g_out, p_out) => {
                    if !p_out {
                        counts.fp += 1;
                    }
                    if !g_out {
                        counts.fn_ += 1;
                    }
                }
            }
        }
    }
    Ok(counts)
}

pub fn intent_accuracy<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::mismatch("intent list", gold.len(), pred.len()));
    }
    let hits = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| g.as_ref() == p.as_ref())
        .count();
    Ok(ratio_or_one(hits, gold.len()))
}

/// Fraction of utterances whose intent and every word-level tag are correct.
pub fn sentence_accuracy<S: AsRef<str>>(
    gold_intents: &[S],
    pred_intents: &[S],
    gold_tags: &[Vec<SlotTag>],
    pred_tags: &[Vec<SlotTag>],
) -> Result<f64> {
    if gold_intents.len() != pred_intents.len() {
        return Err(Error::mismatch(
            "intent list",
            gold_intents.len(),
            pred_intents.len(),
        ));
    }
    if gold_intents.len() != gold_tags.len() {
        return Err(Error::mismatch(
            "intents vs tag sequences",
            gold_intents.len(),
            gold_tags.len(),
        ));
    }
    check_pairs(gold_tags, pred_tags)?;
    let hits = (0..gold_intents.len())
        .filter(|&i| {
            gold_intents[i].as_ref() == pred_intents[i].as_ref() && gold_tags[i] == pred_tags[i]
        })
        .count();
    Ok(ratio_or_one(hits, gold_intents.len()))
}

/// Percentage of the baseline's error removed by model `a`:
/// `100 * (1 - (1 - acc_a) / (1 - acc_b))`. Negative when `a` is worse.
pub fn relative_error_reduction(acc_a: f64, acc_b: f64) -> Result<f64> {
    let baseline_error = 1.0 - acc_b;
    if baseline_error <= 0.0 {
        return Err(Error::UndefinedBaseline);
    }
    Ok(100.0 * (1.0 - (1.0 - acc_a) / baseline_error))
}

/// Corpus-level scores of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub intent_acc: f64,
    pub sent_acc: f64,
    pub slot_f1: f64,
    pub token_f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl EvalReport {
    pub fn compute<S: AsRef<str>>(
        gold_intents: &[S],
        pred_intents: &[S],
        gold_tags: &[Vec<SlotTag>],
        pred_tags: &[Vec<SlotTag>],
    ) -> Result<Self> {
        let chunks = slot_f1(gold_tags, pred_tags)?;
        let tokens = per_token_micro_f1(gold_tags, pred_tags)?;
        Ok(EvalReport {
            intent_acc: intent_accuracy(gold_intents, pred_intents)?,
            sent_acc: sentence_accuracy(gold_intents, pred_intents, gold_tags, pred_tags)?,
            slot_f1: chunks.f1(),
            token_f1: tokens.f1(),
            tp: chunks.tp,
            fp: chunks.fp,
            fn_: chunks.fn_,
        })
    }

    /// Dev selection score: the sum of the three headline measures.
    pub fn selection_score(&self) -> f64 {
        self.intent_acc + self.sent_acc + self.slot_f1
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.kv_pairs() {
            let _ = writeln!(out, "{key}={value}");
        }
        out
    }

    fn kv_pairs(&self) -> [(&'static str, String); 7] {
        [
            ("intent_acc", self.intent_acc.to_string()),
            ("sent_acc", self.sent_acc.to_string()),
            ("slot_f1", self.slot_f1.to_string()),
            ("token_f1", self.token_f1.to_string()),
            ("tp", self.tp.to_string()),
            ("fp", self.fp.to_string()),
            ("fn", self.fn_.to_string()),
        ]
    }

    /// Parses either the key=value form or the JSON form.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            return Ok(serde_json::from_str(text)?);
        }
        let map = parse_kv(text)?;
        let float = |key: &str| -> Result<f64> {
            let raw = map
                .get(key)
                .ok_or_else(|| Error::Validation(format!("report is missing `{key}`")))?;
            raw.parse()
                .map_err(|_| Error::Validation(format!("`{key}` is not a number: {raw}")))
        };
        let count = |key: &str| -> Result<usize> {
            match map.get(key) {
                None => Ok(0),
                Some(raw) => raw
                    .parse()
                    .map_err(|_| Error::Validation(format!("`{key}` is not a count: {raw}"))),
            }
        };
        let token_f1 = match map.get("token_f1") {
            Some(_) => float("token_f1")?,
            None => f64::NAN,
        };
        Ok(EvalReport {
            intent_acc: float("intent_acc")?,
            sent_acc: float("sent_acc")?,
            slot_f1: float("slot_f1")?,
            token_f1,
            tp: count("tp")?,
            fp: count("fp")?,
            fn_: count("fn")?,
        })
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: format!("expected key=value, found `{line}`"),
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Relative error reduction of `a` over `b` for each headline measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerTable {
    pub intent_acc: f64,
    pub sent_acc: f64,
    pub slot_f1: f64,
}

impl RerTable {
    pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<Self> {
        let measures = [
            ("intent_acc", a.intent_acc, b.intent_acc),
            ("sent_acc", a.sent_acc, b.sent_acc),
            ("slot_f1", a.slot_f1, b.slot_f1),
        ];
        for (name, x, y) in measures {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Validation(format!("measure `{name}` is missing")));
            }
        }
        Ok(RerTable {
            intent_acc: relative_error_reduction(a.intent_acc, b.intent_acc)?,
            sent_acc: relative_error_reduction(a.sent_acc, b.sent_acc)?,
            slot_f1: relative_error_reduction(a.slot_f1, b.slot_f1)?,
        })
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "measure\trer_percent\nintent_acc\t{:.2}\nsent_acc\t{:.2}\nslot_f1\t{:.2}\n",
            self.intent_acc, self.sent_acc, self.slot_f1
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> Vec<SlotTag> {
        s.split_whitespace().map(|t| t.parse().unwrap()).collect()
    }

    #[test]
    fn identical_prediction_scores_one() {
        let gold = vec![seq("O O O B-year O B-artist I-artist")];
        let c = slot_f1(&gold, &gold).unwrap();
        assert_eq!(c.f1(), 1.0);
        assert_eq!(per_token_micro_f1(&gold, &gold).unwrap().f1(), 1.0);
    }

    #[test]
    fn missing_chunk_halves_recall() {
        let gold = vec![seq("O O O B-year O B-artist I-artist")];
        let pred = vec![seq("O O O B-year O O O")];
        let c = slot_f1(&gold, &pred).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (1, 0, 1));
        assert_eq!(c.precision(), 1.0);
        assert_eq!(c.recall(), 0.5);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_corpus_scores_one() {
        let empty: Vec<Vec<SlotTag>> = vec![];
        assert_eq!(slot_f1(&empty, &empty).unwrap().f1(), 1.0);
        let outside = vec![seq("O O O")];
        assert_eq!(slot_f1(&outside, &outside).unwrap().f1(), 1.0);
        assert_eq!(per_token_micro_f1(&outside, &outside).unwrap().f1(), 1.0);
    }

    #[test]
    fn per_token_score_inflates_over_chunks() {
        let gold = vec![seq("B-a I-a")];
        let pred = vec![seq("B-a I-b")];
        assert_eq!(per_token_micro_f1(&gold, &pred).unwrap().f1(), 0.5);
        assert_eq!(slot_f1(&gold, &pred).unwrap().f1(), 0.0);
    }

    #[test]
    fn length_mismatch_and_x_are_rejected() {
        let gold = vec![seq("O O")];
        assert!(slot_f1(&gold, &[seq("O")]).is_err());
        assert!(slot_f1(&gold, &[]).is_err());
        assert!(slot_f1(&gold, &[seq("O X")]).is_err());
    }

    #[test]
    fn sentence_accuracy_definition() {
        let gi = ["a", "b"];
        let gold = vec![seq("O B-x"), seq("B-y O")];
        assert_eq!(sentence_accuracy(&gi, &gi, &gold, &gold).unwrap(), 1.0);
        let pred = vec![seq("O B-x"), seq("O O")];
        assert_eq!(sentence_accuracy(&gi, &gi, &gold, &pred).unwrap(), 0.5);

        let gi3 = ["a", "b", "c"];
        let pi3 = ["a", "x", "c"];
        let gold3 = vec![seq("O"), seq("O"), seq("B-x")];
        let pred3 = vec![seq("O"), seq("O"), seq("O")];
        let acc = sentence_accuracy(&gi3, &pi3, &gold3, &pred3).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-15);
        assert!(sentence_accuracy(&gi3, &pi3[..2], &gold3, &pred3).is_err());
    }

    #[test]
    fn rer_matches_published_values() {
        let a = relative_error_reduction(0.9787, 0.9776).unwrap();
        assert!((a - 4.91).abs() < 0.01, "{a}");
        let b = relative_error_reduction(0.8869, 0.8690).unwrap();
        assert!((b - 13.66).abs() < 0.01, "{b}");
        assert_eq!(relative_error_reduction(0.7, 0.7).unwrap(), 0.0);
        assert!(relative_error_reduction(0.6, 0.7).unwrap() < 0.0);
        assert!(matches!(
            relative_error_reduction(0.6, 1.0),
            Err(Error::UndefinedBaseline)
        ));
    }

    #[test]
    fn report_text_forms_parse_back() {
        let report = EvalReport {
            intent_acc: 0.5,
            sent_acc: 0.25,
            slot_f1: 2.0 / 3.0,
            token_f1: 0.75,
            tp: 3,
            fp: 1,
            fn_: 2,
        };
        let kv = report.to_kv();
        for key in ["intent_acc=", "sent_acc=", "slot_f1=", "token_f1=", "tp=", "fp=", "fn="] {
            assert!(kv.contains(key), "{kv}");
        }
        assert_eq!(EvalReport::parse(&kv).unwrap(), report);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"fn\":2"));
        assert_eq!(EvalReport::parse(&json).unwrap(), report);
    }

    #[test]
    fn compare_requires_all_measures() {
        let err = EvalReport::parse("intent_acc=0.9\nslot_f1=0.9\n");
        assert!(err.is_err());
    }
}
