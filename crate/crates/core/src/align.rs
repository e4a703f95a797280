//! Sub-word alignment between word-level tags and word-piece sequences.

use crate::error::{Error, Result};
use crate::features::WordFeatureVector;
use crate::tags::SlotTag;
use crate::tokenizer::WordPieceVocab;

/// A framed word-piece sequence with piece-level tags and bookkeeping.
///
/// Layout: `[CLS] pieces... [SEP] [PAD]*`. The first piece of each word
/// carries that word's tag and is marked active; later pieces and the
/// special tokens carry `X`. Padding is neither active nor valid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSequence {
    pub piece_ids: Vec<usize>,
    pub piece_tags: Vec<SlotTag>,
    pub active: Vec<bool>,
    pub valid: Vec<bool>,
    pub features: Vec<WordFeatureVector>,
    pub word_index: Vec<Option<usize>>,
    /// Words kept after truncation.
    pub n_words: usize,
    pub truncated: bool,
}

impl AlignedSequence {
    pub fn len(&self) -> usize {
        self.piece_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.piece_ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Appends padding up to `len` positions.
    pub fn pad_to(&mut self, len: usize) {
        while self.piece_ids.len() < len {
            self.piece_ids.push(WordPieceVocab::PAD_ID);
            self.piece_tags.push(SlotTag::X);
            self.active.push(false);
            self.valid.push(false);
            self.features.push(WordFeatureVector::zero());
            self.word_index.push(None);
        }
    }
}

/// Aligns words, their gold tags and per-word features onto word pieces.
///
/// Words that would push the framed sequence past `max_len` are dropped
/// whole from the end and `truncated` is set.
pub fn align<S: AsRef<str>>(
    words: &[S],
    tags: &[SlotTag],
    features: &[WordFeatureVector],
    vocab: &WordPieceVocab,
    max_len: usize,
) -> Result<AlignedSequence> {
    if words.len() != tags.len() {
        return Err(Error::mismatch("words vs tags", words.len(), tags.len()));
    }
    if words.len() != features.len() {
        return Err(Error::mismatch("words vs features", words.len(), features.len()));
    }
    if max_len < 3 {
        return Err(Error::Validation(format!("max_len {max_len} cannot hold a framed word")));
    }
    if tags.iter().any(|t| matches!(t, SlotTag::X)) {
        return Err(Error::Validation("gold word tags may not contain X".into()));
    }

    let mut seq = AlignedSequence {
        piece_ids: vec![WordPieceVocab::CLS_ID],
        piece_tags: vec![SlotTag::X],
        active: vec![false],
        valid: vec![true],
        features: vec![WordFeatureVector::zero()],
        word_index: vec![None],
        n_words: 0,
        truncated: false,
    };

    let budget = max_len - 2;
    for (w, word) in words.iter().enumerate() {
        let pieces = vocab.tokenize(word.as_ref());
        if seq.piece_ids.len() - 1 + pieces.len() > budget {
            seq.truncated = true;
            break;
        }
        for (k, id) in pieces.into_iter().enumerate() {
            seq.piece_ids.push(id);
            seq.piece_tags.push(if k == 0 { tags[w].clone() } else { SlotTag::X });
            seq.active.push(k == 0);
            seq.valid.push(true);
            seq.features.push(features[w]);
            seq.word_index.push(Some(w));
        }
        seq.n_words += 1;
    }

    seq.piece_ids.push(WordPieceVocab::SEP_ID);
    seq.piece_tags.push(SlotTag::X);
    seq.active.push(false);
    seq.valid.push(true);
    seq.features.push(WordFeatureVector::zero());
    seq.word_index.push(None);
    Ok(seq)
}

/// Aligns an untagged utterance; every word gets `O` as a placeholder tag.
pub fn align_words<S: AsRef<str>>(
    words: &[S],
    features: &[WordFeatureVector],
    vocab: &WordPieceVocab,
    max_len: usize,
) -> Result<AlignedSequence> {
    let tags = vec![SlotTag::O; words.len()];
    align(words, &tags, features, vocab, max_len)
}

/// Gathers piece-level predictions back to word level. `X` at an active
/// position decodes to `O`.
pub fn de_align(seq: &AlignedSequence, predictions: &[SlotTag]) -> Result<Vec<SlotTag>> {
    if predictions.len() != seq.len() {
        return Err(Error::mismatch(
            "piece predictions vs sequence",
            predictions.len(),
            seq.len(),
        ));
    }
    Ok(seq
        .active
        .iter()
        .zip(predictions)
        .filter(|(&active, _)| active)
        .map(|(_, tag)| match tag {
            SlotTag::X => SlotTag::O,
            t => t.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{CaseClass, EntityClass};

    fn vocab() -> WordPieceVocab {
        let pieces = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "play", "broad", "##rick", "b"];
        WordPieceVocab::from_pieces(pieces.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn feats(n: usize) -> Vec<WordFeatureVector> {
        vec![WordFeatureVector::encode(EntityClass::None, CaseClass::Lower); n]
    }

    #[test]
    fn first_piece_keeps_the_tag() {
        let tags = vec![SlotTag::O, SlotTag::I("artist".into())];
        let seq = align(&["play", "broadrick"], &tags, &feats(2), &vocab(), 50).unwrap();
        let shown: Vec<String> = seq.piece_tags.iter().map(|t| t.to_string()).collect();
        assert_eq!(shown, ["X", "O", "I-artist", "X", "X"]);
        assert_eq!(seq.active, [false, true, true, false, false]);
        assert_eq!(seq.word_index, [None, Some(0), Some(1), Some(1), None]);
        assert!(seq.features[0].is_zero() && seq.features[4].is_zero());
        assert_eq!(seq.features[2], seq.features[3]);
        assert_eq!(de_align(&seq, &seq.piece_tags).unwrap(), tags);
    }

    #[test]
    fn single_word_has_one_active_position() {
        let seq = align(&["play"], &[SlotTag::O], &feats(1), &vocab(), 50).unwrap();
        assert_eq!(seq.active_count(), 1);
        assert_eq!(seq.len(), 3);
    }

    #[test]
    fn truncation_drops_whole_words() {
        let words = ["play", "broadrick", "play"];
        let tags = vec![SlotTag::O; 3];
        // Budget of 2 pieces: "play" fits, "broad ##rick" would split.
        let seq = align(&words, &tags, &feats(3), &vocab(), 4).unwrap();
        assert!(seq.truncated);
        assert_eq!(seq.n_words, 1);
        assert_eq!(seq.len(), 3);
        assert_eq!(de_align(&seq, &seq.piece_tags).unwrap().len(), 1);
    }

    #[test]
    fn x_at_active_position_decodes_to_outside() {
        let seq = align(&["play"], &[SlotTag::B("a".into())], &feats(1), &vocab(), 50).unwrap();
        let preds = vec![SlotTag::X; 3];
        assert_eq!(de_align(&seq, &preds).unwrap(), [SlotTag::O]);
        assert!(de_align(&seq, &preds[..2]).is_err());
    }

    #[test]
    fn empty_mask_yields_empty_tags() {
        let seq = align::<&str>(&[], &[], &[], &vocab(), 50).unwrap();
        assert_eq!(seq.active_count(), 0);
        assert!(de_align(&seq, &seq.piece_tags).unwrap().is_empty());
    }

    #[test]
    fn padding_is_neither_valid_nor_active() {
        let mut seq = align(&["play", "b"], &[SlotTag::O, SlotTag::O], &feats(2), &vocab(), 50).unwrap();
        seq.pad_to(7);
        assert_eq!(seq.len(), 7);
        assert_eq!(seq.n_valid(), 4);
        assert_eq!(seq.active_count(), 2);
        assert_eq!(de_align(&seq, &seq.piece_tags).unwrap().len(), 2);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        assert!(align(&["play"], &[], &feats(1), &vocab(), 50).is_err());
        assert!(align(&["play"], &[SlotTag::X], &feats(1), &vocab(), 50).is_err());
        assert!(align(&["play"], &[SlotTag::O], &feats(1), &vocab(), 2).is_err());
    }
}
