//! Sentences, scored examples, the synthetic scored corpus and the `qaff-v1`
//! interchange format.

mod enumerate;
mod grammar;
mod interchange;
mod lexicon;
mod preprocess;
mod synth;

pub use enumerate::{enumerate_end_distribution, DiscreteDist, GrammarOracle};
pub use grammar::{GrammarBuilder, Production, Symbol, SynthGrammar};
pub use interchange::{
    read_interchange, write_interchange, write_interchange_to, InterchangeHeader, InterchangeReader, FORMAT_TAG,
};
pub use lexicon::{squash, LexiconScorer};
pub use preprocess::{preprocess, PreprocessRules};
pub use synth::{
    reference_grammar, reference_lexicon, sample_corpus, sample_sentences, SynthOptions, INTENSIFIERS, PIVOT, TICK,
};

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Default truncation length, in tokens.
pub const MAX_TOKENS: usize = 32;

/// Name of the signed valence channel. Every other channel is treated as an
/// emotion probability in `[0, 1]`.
pub const VALENCE: &str = "valence";

/// An ordered, whitespace-free token list of bounded length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<String>,
    max_len: usize,
}

impl TokenSequence {
    /// Builds a sequence, truncating to `max_len`. Fails on empty input or
    /// tokens that contain whitespace.
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>, max_len: usize) -> Result<Self> {
        let mut tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::Domain("empty token sequence".into()));
        }
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if let Some(bad) = tokens.iter().find(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return Err(Error::Domain(format!("invalid token {bad:?}")));
        }
        tokens.truncate(max_len);
        Ok(Self { tokens, max_len })
    }

    /// Whitespace tokenization with the default 32-token cap.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(text.split_whitespace(), MAX_TOKENS)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Row-major `rows × dim` matrix of 32-bit context features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimMismatch {
                expected: rows * dim,
                found: data.len(),
            });
        }
        Ok(Self { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Closed score interval of a channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRange {
    pub lo: f64,
    pub hi: f64,
}

impl ScoreRange {
    pub const SIGNED: ScoreRange = ScoreRange { lo: -1.0, hi: 1.0 };
    pub const UNIT: ScoreRange = ScoreRange { lo: 0.0, hi: 1.0 };

    pub fn for_channel(channel: &str) -> Self {
        if channel == VALENCE {
            Self::SIGNED
        } else {
            Self::UNIT
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// Range of the negated channel.
    pub fn negated(&self) -> Self {
        ScoreRange {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

/// The training unit: a sentence, its per-token features and end scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub seq: TokenSequence,
    pub features: FeatureMatrix,
    pub scores: BTreeMap<String, f64>,
}

impl ScoredExample {
    pub fn new(seq: TokenSequence, features: FeatureMatrix, scores: BTreeMap<String, f64>) -> Result<Self> {
        if features.rows() != seq.len() {
            return Err(Error::DimMismatch {
                expected: seq.len(),
                found: features.rows(),
            });
        }
        for (channel, &v) in &scores {
            if !v.is_finite() || !ScoreRange::for_channel(channel).contains(v) {
                return Err(Error::Domain(format!("score {v} out of range for channel {channel}")));
            }
        }
        Ok(Self { seq, features, scores })
    }

    pub fn score(&self, channel: &str) -> Result<f64> {
        self.scores
            .get(channel)
            .copied()
            .ok_or_else(|| Error::Domain(format!("example has no score for channel {channel:?}")))
    }

    pub fn tokens(&self) -> &[String] {
        self.seq.tokens()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_sequence_truncates_and_validates() {
        let seq = TokenSequence::new((0..40).map(|i| format!("w{i}")), 32).unwrap();
        assert_eq!(seq.len(), 32);
        assert!(TokenSequence::new(Vec::<String>::new(), 32).is_err());
        assert!(TokenSequence::new(["a b"], 32).is_err());
    }

    #[test]
    fn example_rejects_row_mismatch_and_out_of_range_scores() {
        let seq = TokenSequence::from_text("a b c").unwrap();
        let feats = FeatureMatrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(ScoredExample::new(seq.clone(), feats, BTreeMap::new()).is_err());
        let feats = FeatureMatrix::new(3, 1, vec![0.0; 3]).unwrap();
        let mut scores = BTreeMap::new();
        scores.insert("anxiety".to_string(), 1.5);
        assert!(ScoredExample::new(seq, feats, scores).is_err());
    }
}
