use nlu_core::align::{align, de_align};
use nlu_core::features::WordFeatureVector;
use nlu_core::tags::SlotTag;
use nlu_core::tokenizer::{train_vocab, WordPieceVocab, CONTINUATION};
use nlu_core::toy::toy_grammar;
use proptest::prelude::*;

fn small_vocab() -> WordPieceVocab {
    let toy = toy_grammar(99, 400, 0, 0);
    // A small target keeps most words split into several pieces.
    train_vocab(toy.train.iter().flat_map(|u| u.words.clone()), 120).unwrap()
}

/// Characters with a word-initial entry in the vocabulary.
fn alphabet() -> Vec<char> {
    small_vocab()
        .pieces()
        .iter()
        .filter(|p| p.chars().count() == 1)
        .filter_map(|p| p.chars().next())
        .collect()
}

#[test]
fn round_trip_on_toy_utterances() {
    let vocab = small_vocab();
    let toy = toy_grammar(7, 1000, 0, 0);
    let mut multi_piece = 0;
    for u in &toy.train {
        let feats = vec![WordFeatureVector::zero(); u.words.len()];
        let seq = align(&u.words, &u.tags, &feats, &vocab, 50).unwrap();
        assert!(!seq.truncated);
        assert_eq!(seq.active_count(), u.words.len());
        assert_eq!(de_align(&seq, &seq.piece_tags).unwrap(), u.tags);
        for (i, t) in seq.piece_tags.iter().enumerate() {
            if !seq.active[i] {
                assert_eq!(*t, SlotTag::X);
            }
        }
        multi_piece += (seq.len() > u.words.len() + 2) as usize;
    }
    assert!(multi_piece > 500, "vocabulary too large to exercise X pieces");
}

proptest! {
    #[test]
    fn pieces_spell_the_word(chars in prop::collection::vec(prop::sample::select(alphabet()), 1..12)) {
        let vocab = small_vocab();
        let word: String = chars.into_iter().collect();
        let ids = vocab.tokenize(&word);
        prop_assert_eq!(&ids, &vocab.tokenize(&word));
        let spelled: String = ids
            .iter()
            .map(|&id| vocab.piece(id).unwrap().trim_start_matches(CONTINUATION))
            .collect();
        prop_assert_eq!(spelled, word);
    }

    #[test]
    fn truncation_keeps_whole_words(max_len in 3usize..20, seed in 0u64..50) {
        let vocab = small_vocab();
        let u = &toy_grammar(seed, 1, 0, 0).train[0];
        let feats = vec![WordFeatureVector::zero(); u.words.len()];
        let seq = align(&u.words, &u.tags, &feats, &vocab, max_len).unwrap();
        prop_assert!(seq.len() <= max_len);
        prop_assert_eq!(seq.active_count(), seq.n_words);
        let back = de_align(&seq, &seq.piece_tags).unwrap();
        prop_assert_eq!(&back[..], &u.tags[..seq.n_words]);
    }
}
