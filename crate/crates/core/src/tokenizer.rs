//! Word-piece vocabulary induction and greedy longest-match tokenization.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const CONTINUATION: &str = "##";

const RESERVED: [&str; 4] = [PAD, UNK, CLS, SEP];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPieceVocab {
    pieces: Vec<String>,
    ids: HashMap<String, usize>,
}

impl WordPieceVocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const CLS_ID: usize = 2;
    pub const SEP_ID: usize = 3;

    /// Builds a vocabulary from pieces in id order. The first four entries
    /// must be the reserved tokens.
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < RESERVED.len() || pieces[..RESERVED.len()] != RESERVED {
            return Err(Error::Validation(format!(
                "vocabulary must start with {RESERVED:?}"
            )));
        }
        let mut ids = HashMap::with_capacity(pieces.len());
        for (id, piece) in pieces.iter().enumerate() {
            if piece.is_empty() || piece.chars().any(char::is_whitespace) {
                return Err(Error::Parse {
                    line: id + 1,
                    message: format!("invalid piece `{piece}`"),
                });
            }
            if ids.insert(piece.clone(), id).is_some() {
                return Err(Error::Parse {
                    line: id + 1,
                    message: format!("duplicate piece `{piece}`"),
                });
            }
        }
        Ok(WordPieceVocab { pieces, ids })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.ids.get(piece).copied()
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Greedy longest-match-first segmentation. A word that cannot be fully
    /// segmented becomes a single unknown piece.
    pub fn tokenize(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        let mut candidate = String::new();
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.extend(&chars[start..end]);
                if let Some(id) = self.id(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => return vec![Self::UNK_ID],
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = self.pieces.join("\n");
        out.push('\n');
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pieces(text.lines().map(str::to_string).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn merge_symbols(left: &str, right: &str) -> String {
    let mut merged = left.to_string();
    merged.push_str(right.strip_prefix(CONTINUATION).unwrap_or(right));
    merged
}

/// Induces a vocabulary by repeated frequency-ranked merges of adjacent
/// symbols. Every character seen in the corpus gets both a word-initial and
/// a continuation entry. Ties between equally frequent pairs go to the
/// lexicographically smallest pair. Stops early when no pairs remain.
pub fn train_vocab<I, S>(corpus: I, target_size: usize) -> Result<WordPieceVocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for word in corpus {
        let word = word.as_ref();
        if !word.is_empty() {
            *counts.entry(word.to_string()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Validation("cannot train a vocabulary on an empty corpus".into()));
    }

    let alphabet: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).collect();
    let mut pieces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    pieces.extend(alphabet.iter().map(|c| c.to_string()));
    pieces.extend(alphabet.iter().map(|c| format!("{CONTINUATION}{c}")));
    if target_size < pieces.len() {
        return Err(Error::Validation(format!(
            "target vocabulary size {target_size} is below the {} reserved and alphabet entries",
            pieces.len()
        )));
    }
    let mut known: BTreeSet<String> = pieces.iter().cloned().collect();

    let mut words: Vec<(Vec<String>, usize)> = counts
        .into_iter()
        .map(|(word, n)| {
            let symbols = word
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION}{c}")
                    }
                })
                .collect();
            (symbols, n)
        })
        .collect();

    while pieces.len() < target_size {
        let mut pair_counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (symbols, n) in &words {
            for pair in symbols.windows(2) {
                *pair_counts.entry((&pair[0], &pair[1])).or_default() += n;
            }
        }
        // BTreeMap iteration is lexicographic, so the first maximum wins ties.
        let Some(((left, right), _)) = pair_counts
            .iter()
            .fold(None, |best: Option<(&(&str, &str), usize)>, (pair, &n)| match best {
                Some((_, m)) if m >= n => best,
                _ => Some((pair, n)),
            })
            .map(|(pair, n)| (*pair, n))
        else {
            break;
        };
        let (left, right) = (left.to_string(), right.to_string());
        let merged = merge_symbols(&left, &right);

        for (symbols, _) in &mut words {
            let mut i = 0;
            while i + 1 < symbols.len() {
                if symbols[i] == left && symbols[i + 1] == right {
                    symbols[i] = merged.clone();
                    symbols.remove(i + 1);
                }
                i += 1;
            }
        }
        if known.insert(merged.clone()) {
            pieces.push(merged);
        }
    }

    WordPieceVocab::from_pieces(pieces)
}
