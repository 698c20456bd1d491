//! Rule-labeled synthetic corpora standing in for a human-labeled
//! compression dataset.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Label, LabeledSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WordClass {
    /// Always preserved.
    Content,
    /// Always discarded.
    Filler,
    /// Discarded, but makes an immediately following value word preserved.
    Cue,
    /// Preserved only right after a cue word.
    Value,
}

/// Generated vocabulary sizes, sampling weights, and sequence lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSpec {
    pub content_words: usize,
    pub filler_words: usize,
    pub cue_words: usize,
    pub value_words: usize,
    pub content_weight: f64,
    pub filler_weight: f64,
    /// Weight of emitting a cue word followed by a value word.
    pub cue_weight: f64,
    /// Weight of emitting a value word on its own.
    pub value_weight: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for RuleSpec {
    fn default() -> Self {
        RuleSpec {
            content_words: 40,
            filler_words: 20,
            cue_words: 6,
            value_words: 30,
            content_weight: 0.35,
            filler_weight: 0.35,
            cue_weight: 0.15,
            value_weight: 0.15,
            min_len: 12,
            max_len: 28,
        }
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn syllables(mut i: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::new();
    loop {
        let s = i % base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        i /= base;
        if i == 0 {
            break;
        }
    }
    out
}

impl RuleSpec {
    /// Only content and filler words: the label is a function of the word.
    pub fn token_class_only() -> Self {
        RuleSpec {
            cue_words: 0,
            value_words: 0,
            cue_weight: 0.0,
            value_weight: 0.0,
            content_weight: 0.5,
            filler_weight: 0.5,
            ..RuleSpec::default()
        }
    }

    /// Surface form of the `i`-th word of `class`.
    pub fn word(&self, class: WordClass, i: usize) -> String {
        match class {
            WordClass::Content => format!("ka{}", syllables(i)),
            WordClass::Filler => format!("fi{}", syllables(i)),
            WordClass::Cue => format!("ze{}", syllables(i)),
            WordClass::Value => (10 + i).to_string(),
        }
    }

    /// The labeling rule.
    pub fn label(previous: Option<WordClass>, current: WordClass) -> Label {
        match current {
            WordClass::Content => Label::Preserve,
            WordClass::Filler | WordClass::Cue => Label::Discard,
            WordClass::Value if previous == Some(WordClass::Cue) => Label::Preserve,
            WordClass::Value => Label::Discard,
        }
    }

    fn class_size(&self, class: WordClass) -> usize {
        match class {
            WordClass::Content => self.content_words,
            WordClass::Filler => self.filler_words,
            WordClass::Cue => self.cue_words,
            WordClass::Value => self.value_words,
        }
    }

    fn sample_word(&self, class: WordClass, rng: &mut impl Rng) -> String {
        self.word(class, rng.gen_range(0..self.class_size(class)))
    }

    fn weights(&self) -> [(WordClass, f64); 4] {
        let usable = |class, w: f64| if self.class_size(class) > 0 { w } else { 0.0 };
        let pair_ok = self.cue_words > 0 && self.value_words > 0;
        [
            (WordClass::Content, usable(WordClass::Content, self.content_weight)),
            (WordClass::Filler, usable(WordClass::Filler, self.filler_weight)),
            (WordClass::Cue, if pair_ok { self.cue_weight } else { 0.0 }),
            (WordClass::Value, usable(WordClass::Value, self.value_weight)),
        ]
    }
}

/// Generates `size` sequences whose labels follow [`RuleSpec::label`]
/// exactly. Identical arguments give identical corpora.
///
/// # Panics
///
/// If every sampling weight is zero or `min_len` is 0 or exceeds `max_len`.
pub fn make_synthetic_corpus(spec: &RuleSpec, size: usize, seed: u64) -> Vec<LabeledSequence> {
    assert!(spec.min_len >= 1 && spec.min_len <= spec.max_len, "bad length range");
    let weights = spec.weights();
    let dist = WeightedIndex::new(weights.iter().map(|w| w.1)).expect("some class must have weight");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    (0..size)
        .map(|_| {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let mut tokens = Vec::with_capacity(len);
            let mut labels = Vec::with_capacity(len);
            let mut previous = None;
            while tokens.len() < len {
                let mut class = weights[dist.sample(&mut rng)].0;
                if class == WordClass::Cue && tokens.len() + 2 > len {
                    class = WordClass::Filler;
                    if spec.filler_words == 0 {
                        class = WordClass::Content;
                    }
                }
                let mut emit = |class: WordClass, rng: &mut ChaCha8Rng| {
                    tokens.push(spec.sample_word(class, rng));
                    labels.push(RuleSpec::label(previous, class));
                    previous = Some(class);
                };
                emit(class, &mut rng);
                if class == WordClass::Cue {
                    emit(WordClass::Value, &mut rng);
                }
            }
            LabeledSequence::new(tokens, labels).expect("generated lengths match")
        })
        .collect()
}
