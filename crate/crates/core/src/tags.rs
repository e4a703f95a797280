//! BIO slot tags and chunk extraction.
//!
//! Gold data carries `O`, `B-label` and `I-label`. The extra `X` tag marks
//! non-initial word pieces and special tokens in aligned sequences and never
//! appears at word level.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotTag {
    O,
    B(String),
    I(String),
    X,
}

impl SlotTag {
    pub fn label(&self) -> Option<&str> {
        match self {
            SlotTag::B(l) | SlotTag::I(l) => Some(l),
            SlotTag::O | SlotTag::X => None,
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, SlotTag::O)
    }

    /// Parses a word-level gold tag. `X` is rejected.
    pub fn parse_gold(s: &str) -> Result<Self, Error> {
        match s.parse()? {
            SlotTag::X => Err(Error::Validation(
                "tag X is reserved for aligned word pieces".into(),
            )),
            tag => Ok(tag),
        }
    }
}

impl fmt::Display for SlotTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotTag::O => f.write_str("O"),
            SlotTag::X => f.write_str("X"),
            SlotTag::B(l) => write!(f, "B-{l}"),
            SlotTag::I(l) => write!(f, "I-{l}"),
        }
    }
}

impl FromStr for SlotTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "O" => return Ok(SlotTag::O),
            "X" => return Ok(SlotTag::X),
            _ => {}
        }
        let bad = || Error::Validation(format!("tag `{s}` is outside the BIO grammar"));
        let (prefix, label) = s.split_once('-').ok_or_else(bad)?;
        if label.is_empty() || label.chars().any(char::is_whitespace) {
            return Err(bad());
        }
        match prefix {
            "B" => Ok(SlotTag::B(label.to_string())),
            "I" => Ok(SlotTag::I(label.to_string())),
            _ => Err(bad()),
        }
    }
}

/// A labeled span with inclusive word bounds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chunk {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl Chunk {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Chunk {
            label: label.into(),
            start,
            end,
        }
    }
}

/// Extracts maximal labeled runs, sorted by start.
///
/// Lenient repair: an `I-` tag after `O` or after a tag with a different
/// label opens a new chunk. `X` is treated as outside.
pub fn extract_chunks(tags: &[SlotTag]) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut open: Option<(&str, usize)> = None;

    for (i, tag) in tags.iter().enumerate() {
        match tag {
            SlotTag::O | SlotTag::X => {
                if let Some((label, start)) = open.take() {
                    chunks.push(Chunk::new(label, start, i - 1));
                }
            }
            SlotTag::B(label) => {
                if let Some((prev, start)) = open.take() {
                    chunks.push(Chunk::new(prev, start, i - 1));
                }
                open = Some((label, i));
            }
            SlotTag::I(label) => match open {
                Some((prev, _)) if prev == label => {}
                _ => {
                    if let Some((prev, start)) = open.take() {
                        chunks.push(Chunk::new(prev, start, i - 1));
                    }
                    open = Some((label, i));
                }
            },
        }
    }
    if let Some((label, start)) = open {
        chunks.push(Chunk::new(label, start, tags.len() - 1));
    }
    chunks
}

/// Positions where an `I-` tag does not continue a chunk of the same label.
pub fn orphan_insides(tags: &[SlotTag]) -> Vec<usize> {
    tags.iter()
        .enumerate()
        .filter_map(|(i, tag)| match tag {
            SlotTag::I(label) => {
                let continues = i > 0 && tags[i - 1].label() == Some(label.as_str());
                (!continues).then_some(i)
            }
            _ => None,
        })
        .collect()
}
