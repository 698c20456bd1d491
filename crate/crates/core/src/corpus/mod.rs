//! Tokenization, vocabularies, and labeled compression datasets.

mod dataset;
mod synthetic;
mod tokenize;
mod vocab;

pub use dataset::{load_dataset, parse_dataset, split, to_jsonl, write_dataset, SplitSpec};
pub use synthetic::{make_synthetic_corpus, RuleSpec, WordClass};
pub use tokenize::{detokenize, tokenize};
pub use vocab::{Vocabulary, DEFAULT_MIN_FREQUENCY, PAD, UNK};

use serde::{Deserialize, Serialize};

/// Gold label of one token. Serialized as `1` (preserve) or `0` (discard).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Discard,
    Preserve,
}

impl Label {
    /// Class index used by the classifier head.
    pub fn class(self) -> usize {
        match self {
            Label::Discard => 0,
            Label::Preserve => 1,
        }
    }

    pub fn from_class(class: usize) -> Option<Label> {
        match class {
            0 => Some(Label::Discard),
            1 => Some(Label::Preserve),
            _ => None,
        }
    }
}

/// A tokenized prompt with one gold label per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSequence {
    tokens: Vec<String>,
    labels: Vec<Label>,
}

impl LabeledSequence {
    /// Fails unless `tokens` and `labels` are nonempty and of equal length.
    pub fn new(tokens: Vec<String>, labels: Vec<Label>) -> Result<Self, String> {
        if tokens.is_empty() {
            return Err("record has no tokens".into());
        }
        if tokens.len() != labels.len() {
            return Err(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            ));
        }
        Ok(LabeledSequence { tokens, labels })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Zero-based positions labeled preserve.
    pub fn preserve_indices(&self) -> Vec<usize> {
        self.indices_of(Label::Preserve)
    }

    /// Zero-based positions labeled discard.
    pub fn discard_indices(&self) -> Vec<usize> {
        self.indices_of(Label::Discard)
    }

    fn indices_of(&self, label: Label) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == label).then_some(i))
            .collect()
    }

    pub fn encode(&self, vocab: &Vocabulary) -> EncodedSequence {
        EncodedSequence {
            ids: vocab.encode(&self.tokens),
            targets: self.labels.iter().map(|l| l.class()).collect(),
            preserve: self.preserve_indices(),
            discard: self.discard_indices(),
        }
    }
}

/// A sequence mapped to vocabulary ids, ready for the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<usize>,
    /// Class index per token (`1` = preserve).
    pub targets: Vec<usize>,
    pub preserve: Vec<usize>,
    pub discard: Vec<usize>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// True when both classes occur, so inter-class similarity is defined.
    pub fn has_both_classes(&self) -> bool {
        !self.preserve.is_empty() && !self.discard.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct RecordJson {
    pub tokens: Vec<String>,
    pub labels: Vec<i64>,
}
