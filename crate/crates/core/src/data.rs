//! Corpus files, label vocabularies and corpus statistics.
//!
//! File format: a `# intent=<label>` header, then one `word tag` pair per
//! line, with a blank line between utterances. Multi-intent headers such as
//! `# intent=b#a` are normalized at load time.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tags::{orphan_insides, SlotTag};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaggedUtterance {
    pub words: Vec<String>,
    pub tags: Vec<SlotTag>,
    pub intent: String,
}

impl TaggedUtterance {
    pub fn new(words: Vec<String>, tags: Vec<SlotTag>, intent: impl Into<String>) -> Result<Self> {
        let intent = intent.into();
        if words.len() != tags.len() {
            return Err(Error::mismatch("words vs tags", words.len(), tags.len()));
        }
        if intent.is_empty() {
            return Err(Error::Validation("empty intent label".into()));
        }
        if tags.contains(&SlotTag::X) {
            return Err(Error::Validation("gold tags may not contain X".into()));
        }
        Ok(TaggedUtterance { words, tags, intent })
    }
}

/// An `I-` tag that does not continue a chunk of the same label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LintFlag {
    pub line: usize,
    pub utterance: usize,
    pub position: usize,
    pub tag: String,
}

impl std::fmt::Display for LintFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "line {}: utterance {} position {}: {} does not continue a chunk",
            self.line, self.utterance, self.position, self.tag
        )
    }
}

/// Sorts and `#`-joins a set of intent labels.
pub fn combine_intents<S: AsRef<str>>(labels: &[S]) -> String {
    let set: BTreeSet<&str> = labels
        .iter()
        .flat_map(|l| l.as_ref().split('#'))
        .filter(|l| !l.is_empty())
        .collect();
    set.into_iter().collect::<Vec<_>>().join("#")
}

const HEADER: &str = "# intent=";

pub fn parse_corpus(text: &str) -> Result<(Vec<TaggedUtterance>, Vec<LintFlag>)> {
    let mut out = Vec::new();
    let mut flags = Vec::new();
    let mut current: Option<(String, Vec<String>, Vec<SlotTag>, Vec<usize>, usize)> = None;

    let mut finish = |cur: Option<(String, Vec<String>, Vec<SlotTag>, Vec<usize>, usize)>,
                      out: &mut Vec<TaggedUtterance>|
     -> Result<()> {
        if let Some((intent, words, tags, lines, header_line)) = cur {
            if words.is_empty() {
                return Err(Error::Parse {
                    line: header_line,
                    message: "utterance has no tokens".into(),
                });
            }
            for pos in orphan_insides(&tags) {
                flags.push(LintFlag {
                    line: lines[pos],
                    utterance: out.len(),
                    position: pos,
                    tag: tags[pos].to_string(),
                });
            }
            out.push(TaggedUtterance::new(words, tags, intent)?);
        }
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(current.take(), &mut out)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix(HEADER) {
            finish(current.take(), &mut out)?;
            let intent = combine_intents(&[rest.trim()]);
            if intent.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty intent label".into(),
                });
            }
            current = Some((intent, Vec::new(), Vec::new(), Vec::new(), line_no));
            continue;
        }
        let Some((_, words, tags, lines, _)) = current.as_mut() else {
            return Err(Error::Parse {
                line: line_no,
                message: "token line before any `# intent=` header".into(),
            });
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected `word tag`, found {} fields", fields.len()),
            });
        }
        let tag = SlotTag::parse_gold(fields[1])
            .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        words.push(fields[0].to_string());
        tags.push(tag);
        lines.push(line_no);
    }
    finish(current.take(), &mut out)?;
    Ok((out, flags))
}

pub fn load_corpus(path: &Path) -> Result<Vec<TaggedUtterance>> {
    Ok(load_corpus_with_lint(path)?.0)
}

pub fn load_corpus_with_lint(path: &Path) -> Result<(Vec<TaggedUtterance>, Vec<LintFlag>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

pub fn corpus_to_text(corpus: &[TaggedUtterance]) -> String {
    let mut s = String::new();
    for (i, u) in corpus.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        let _ = writeln!(s, "{HEADER}{}", u.intent);
        for (w, t) in u.words.iter().zip(&u.tags) {
            let _ = writeln!(s, "{w} {t}");
        }
    }
    s
}

pub fn save_corpus(path: &Path, corpus: &[TaggedUtterance]) -> Result<()> {
    std::fs::write(path, corpus_to_text(corpus)).map_err(|e| Error::io(path, e))
}

/// Intent and slot-tag vocabularies, fixed from the training split.
///
/// Slot ids: `O` is 0 and `X` is 1, followed by the sorted `B-`/`I-` tags.
/// Intents unseen in training resolve to [`Labels::unk_intent`], an id the
/// classifier never outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub intents: Vec<String>,
    pub slots: Vec<String>,
}

pub const UNK_INTENT: &str = "[UNK]";

impl Labels {
    pub fn from_train(train: &[TaggedUtterance]) -> Self {
        let intents: BTreeSet<&str> = train.iter().map(|u| u.intent.as_str()).collect();
        let tags: BTreeSet<String> = train
            .iter()
            .flat_map(|u| u.tags.iter())
            .filter(|t| !t.is_outside())
            .map(|t| t.to_string())
            .collect();
        let mut slots = vec!["O".to_string(), "X".to_string()];
        slots.extend(tags);
        Labels {
            intents: intents.into_iter().map(String::from).collect(),
            slots,
        }
    }

    pub fn n_intents(&self) -> usize {
        self.intents.len()
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn unk_intent(&self) -> usize {
        self.intents.len()
    }

    pub fn intent_id(&self, intent: &str) -> usize {
        self.intents
            .binary_search_by(|s| s.as_str().cmp(intent))
            .unwrap_or(self.unk_intent())
    }

    pub fn intent_name(&self, id: usize) -> &str {
        self.intents.get(id).map(String::as_str).unwrap_or(UNK_INTENT)
    }

    /// Unseen tags map to `O`.
    pub fn slot_id(&self, tag: &SlotTag) -> usize {
        let s = tag.to_string();
        self.slots.iter().position(|t| *t == s).unwrap_or(0)
    }

    pub fn slot_tag(&self, id: usize) -> SlotTag {
        self.slots
            .get(id)
            .and_then(|s| s.parse().ok())
            .unwrap_or(SlotTag::O)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub vocab_size: usize,
    pub avg_sentence_length: f64,
    pub n_intents: usize,
    pub n_slots: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

impl CorpusStats {
    /// Vocabulary, length and label counts come from `train` only. `n_slots`
    /// counts distinct tag strings, `O` included.
    pub fn compute(train: &[TaggedUtterance], dev: &[TaggedUtterance], test: &[TaggedUtterance]) -> Self {
        let vocab: HashSet<&str> = train.iter().flat_map(|u| u.words.iter().map(String::as_str)).collect();
        let intents: HashSet<&str> = train.iter().map(|u| u.intent.as_str()).collect();
        let tags: HashSet<String> = train.iter().flat_map(|u| u.tags.iter().map(|t| t.to_string())).collect();
        let words: usize = train.iter().map(|u| u.words.len()).sum();
        CorpusStats {
            vocab_size: vocab.len(),
            avg_sentence_length: if train.is_empty() { 0.0 } else { words as f64 / train.len() as f64 },
            n_intents: intents.len(),
            n_slots: tags.len(),
            n_train: train.len(),
            n_dev: dev.len(),
            n_test: test.len(),
        }
    }

    pub fn to_kv(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("vocab_size", self.vocab_size.to_string());
        m.insert("avg_sentence_length", format!("{:.2}", self.avg_sentence_length));
        m.insert("n_intents", self.n_intents.to_string());
        m.insert("n_slots", self.n_slots.to_string());
        m.insert("n_train", self.n_train.to_string());
        m.insert("n_dev", self.n_dev.to_string());
        m.insert("n_test", self.n_test.to_string());
        m.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
