//! The synthetic testbed in one place: reference grammar and lexicon, an
//! n-gram model fitted to grammar samples, and the featurizer over its
//! vocabulary.

use serde::{Deserialize, Serialize};

use crate::corpus::{
    reference_grammar, reference_lexicon, sample_sentences, GrammarOracle, LexiconScorer, ScoredExample, SynthGrammar,
    SynthOptions, TokenSequence, VALENCE,
};
use crate::embed::{fit_ngram, ContextFeaturizer, ModelBundle, NGramLM};
use crate::Result;

/// Sample seeds for the language-model, training and validation corpora are
/// spread this far apart so their per-item seeds never overlap.
pub const SEED_STRIDE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestbedConfig {
    pub synth: SynthOptions,
    pub embed_dim: usize,
    pub window: usize,
    pub featurizer_seed: u64,
    pub lm_order: usize,
    pub lm_k: f64,
    /// Grammar sentences used to fit the language model.
    pub lm_sentences: usize,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            synth: SynthOptions::default(),
            embed_dim: ContextFeaturizer::DEFAULT_DIM,
            window: ContextFeaturizer::DEFAULT_WINDOW,
            featurizer_seed: 11,
            lm_order: NGramLM::DEFAULT_ORDER,
            lm_k: NGramLM::DEFAULT_K,
            lm_sentences: 20_000,
        }
    }
}

/// Which disjoint sample stream a corpus is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    LanguageModel,
    Train,
    Validation,
    Evaluation,
}

impl Split {
    fn offset(self) -> u64 {
        match self {
            Split::LanguageModel => 0,
            Split::Train => 1,
            Split::Validation => 2,
            Split::Evaluation => 3,
        }
    }
}

pub struct Testbed {
    pub config: TestbedConfig,
    pub grammar: SynthGrammar,
    pub scorer: LexiconScorer,
    pub bundle: ModelBundle,
}

impl Testbed {
    pub fn new(config: TestbedConfig) -> Result<Self> {
        let grammar = reference_grammar(&config.synth)?;
        let scorer = reference_lexicon();
        let lm_corpus = sample_sentences(&grammar, config.lm_sentences, Self::stream_seed(&config, Split::LanguageModel));
        let lm = fit_ngram(&lm_corpus, config.lm_order, config.lm_k)?;
        let bundle = ModelBundle::new(lm, config.embed_dim, config.window, config.featurizer_seed)?;
        Ok(Self {
            config,
            grammar,
            scorer,
            bundle,
        })
    }

    fn stream_seed(config: &TestbedConfig, split: Split) -> u64 {
        config.synth.seed.wrapping_add(split.offset().wrapping_mul(SEED_STRIDE))
    }

    pub fn seed_for(&self, split: Split) -> u64 {
        Self::stream_seed(&self.config, split)
    }

    pub fn lm(&self) -> &NGramLM {
        &self.bundle.lm
    }

    pub fn featurizer(&self) -> &ContextFeaturizer {
        &self.bundle.featurizer
    }

    pub fn oracle(&self) -> GrammarOracle {
        GrammarOracle::new(&self.grammar, &self.scorer)
    }

    pub fn sentences(&self, split: Split, n: usize) -> Vec<TokenSequence> {
        sample_sentences(&self.grammar, n, self.seed_for(split))
    }

    /// Valence-scored, featurized examples from one split.
    pub fn examples(&self, split: Split, n: usize) -> Result<Vec<ScoredExample>> {
        self.sentences(split, n)
            .into_iter()
            .map(|seq| self.example(seq))
            .collect()
    }

    pub fn example(&self, seq: TokenSequence) -> Result<ScoredExample> {
        let features = self.featurizer().featurize(seq.tokens());
        let score = self.scorer.score(seq.tokens());
        ScoredExample::new(seq, features, [(VALENCE.to_string(), score)].into())
    }

    /// `(tokens, score)` pairs from one split.
    pub fn scored_tokens(&self, split: Split, n: usize) -> Vec<(Vec<String>, f64)> {
        self.sentences(split, n)
            .into_iter()
            .map(|s| {
                let y = self.scorer.score(s.tokens());
                (s.tokens().to_vec(), y)
            })
            .collect()
    }
}
