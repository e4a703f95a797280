//! Word-level inference and evaluation around a trained [`JointModel`],
//! plus the checkpoint that carries everything needed to rebuild it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{align, align_words, de_align, AlignedSequence};
use crate::data::{Labels, TaggedUtterance};
use crate::error::{Error, Result};
use crate::features::{Annotator, ResourceText};
use crate::metrics::EvalReport;
use crate::model::{Batch, EncodedExample, JointModel, ModelConfig};
use crate::params::{NamedTensor, ParamStore};
use crate::tags::SlotTag;
use crate::tokenizer::WordPieceVocab;
use crate::train::TrainConfig;

const PREDICT_BATCH: usize = 64;
const FORMAT: &str = "nlu-checkpoint/1";

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub model: JointModel,
    pub vocab: WordPieceVocab,
    pub labels: Labels,
    pub resources: ResourceText,
    annotator: Annotator,
}

/// Word-level output for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePrediction {
    pub intent: String,
    pub tags: Vec<SlotTag>,
}

/// Pooling weight of one piece position, special tokens included.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub token: String,
    /// Index of the word the piece belongs to; `None` for special tokens.
    pub word: Option<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub vocab: Vec<String>,
    pub labels: Labels,
    pub resources: ResourceText,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != FORMAT {
            return Err(Error::Validation(format!(
                "unsupported checkpoint format `{}`",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }
}

/// The vocabulary is uncased; casing only reaches the model through the
/// word features.
fn lowered<S: AsRef<str>>(words: &[S]) -> Vec<String> {
    words.iter().map(|w| w.as_ref().to_lowercase()).collect()
}

impl Pipeline {
    pub fn new(model: JointModel, vocab: WordPieceVocab, labels: Labels, resources: ResourceText) -> Result<Self> {
        if vocab.len() != model.config.encoder.vocab_size {
            return Err(Error::mismatch("vocabulary vs embedding rows", vocab.len(), model.config.encoder.vocab_size));
        }
        if labels.n_intents() != model.config.n_intents || labels.n_slots() != model.config.n_slots {
            return Err(Error::Validation("label vocabularies do not match the model heads".into()));
        }
        let annotator = Annotator::new(&resources)?;
        Ok(Pipeline {
            model,
            vocab,
            labels,
            resources,
            annotator,
        })
    }

    pub fn annotator(&self) -> &Annotator {
        &self.annotator
    }

    fn max_len(&self) -> usize {
        self.model.config.encoder.max_len
    }

    /// Aligns a gold utterance and maps its piece tags to slot ids.
    pub fn encode(&self, u: &TaggedUtterance) -> Result<EncodedExample> {
        let features = self.annotator.features(&u.words);
        let seq = align(&lowered(&u.words), &u.tags, &features, &self.vocab, self.max_len())?;
        let slots = seq.piece_tags.iter().map(|t| self.labels.slot_id(t)).collect();
        Ok(EncodedExample {
            seq,
            intent: self.labels.intent_id(&u.intent),
            slots,
        })
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Result<AlignedSequence> {
        let features = self.annotator.features(words);
        align_words(&lowered(words), &features, &self.vocab, self.max_len())
    }

    fn unlabeled(&self, seq: AlignedSequence) -> EncodedExample {
        let n = seq.len();
        EncodedExample {
            seq,
            intent: 0,
            slots: vec![0; n],
        }
    }

    pub fn predict<S: AsRef<str>>(&self, utterances: &[Vec<S>]) -> Result<Vec<UtterancePrediction>> {
        let mut out = Vec::with_capacity(utterances.len());
        for chunk in utterances.chunks(PREDICT_BATCH) {
            let examples = chunk
                .iter()
                .map(|w| Ok(self.unlabeled(self.encode_words(w)?)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&EncodedExample> = examples.iter().collect();
            let preds = self.model.predict(&Batch::new(&refs))?;
            for ((words, ex), p) in chunk.iter().zip(&examples).zip(preds) {
                let pieces: Vec<SlotTag> = p.slots.iter().map(|&s| self.labels.slot_tag(s)).collect();
                let mut tags = de_align(&ex.seq, &pieces)?;
                tags.resize(words.len(), SlotTag::O);
                out.push(UtterancePrediction {
                    intent: self.labels.intent_name(p.intent).to_string(),
                    tags,
                });
            }
        }
        Ok(out)
    }

    /// Scores word-level predictions against a gold corpus.
    pub fn evaluate(&self, corpus: &[TaggedUtterance]) -> Result<EvalReport> {
        let words: Vec<Vec<&str>> = corpus
            .iter()
            .map(|u| u.words.iter().map(String::as_str).collect())
            .collect();
        let preds = self.predict(&words)?;
        let gold_intents: Vec<&str> = corpus.iter().map(|u| u.intent.as_str()).collect();
        let pred_intents: Vec<&str> = preds.iter().map(|p| p.intent.as_str()).collect();
        let gold_tags: Vec<Vec<SlotTag>> = corpus.iter().map(|u| u.tags.clone()).collect();
        let pred_tags: Vec<Vec<SlotTag>> = preds.iter().map(|p| p.tags.clone()).collect();
        EvalReport::compute(&gold_intents, &pred_intents, &gold_tags, &pred_tags)
    }

    /// Intent pooling weights over every real piece position.
    pub fn attention<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<AttentionRow>> {
        let seq = self.encode_words(words)?;
        let ex = self.unlabeled(seq);
        let pred = self.model.predict(&Batch::new(&[&ex]))?.remove(0);
        let alpha = pred.alpha.ok_or_else(|| {
            Error::Validation("model pools the start token; no attention weights".into())
        })?;
        Ok(ex
            .seq
            .piece_ids
            .iter()
            .zip(&ex.seq.word_index)
            .zip(alpha)
            .map(|((&id, &word), weight)| AttentionRow {
                token: self.vocab.piece(id).unwrap_or("[UNK]").to_string(),
                word,
                weight,
            })
            .collect())
    }

    pub fn to_checkpoint(&self, train: Option<&TrainConfig>) -> Checkpoint {
        Checkpoint {
            format: FORMAT.to_string(),
            model: self.model.config.clone(),
            train: train.cloned(),
            vocab: self.vocab.pieces().to_vec(),
            labels: self.labels.clone(),
            resources: self.resources.clone(),
            tensors: self.model.store.to_tensors(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let store = ParamStore::from_tensors(ckpt.tensors)?;
        let model = JointModel::bind(ckpt.model, store)?;
        let vocab = WordPieceVocab::from_pieces(ckpt.vocab)?;
        Pipeline::new(model, vocab, ckpt.labels, ckpt.resources)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}
