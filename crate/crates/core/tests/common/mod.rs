#![allow(dead_code)]

use qaff_core::corpus::{GrammarOracle, ScoreRange};
use qaff_core::quantile::{QuantileForecaster, QuantileLevels, QuantileSet};
use qaff_core::Result;

/// The grammar oracle as a decoding forecaster. A continuation the grammar
/// cannot produce (smoothing mass of the language model) carries no
/// information: it gets the context's distribution, or a set spread over the
/// whole range when the context itself is underivable. Either way both tails
/// weigh it alike.
pub struct DecodingOracle<'a>(pub &'a GrammarOracle);

impl DecodingOracle<'_> {
    fn spread(&self) -> QuantileSet {
        let values = self.levels().values().iter().map(|a| 2.0 * a - 1.0).collect();
        QuantileSet::new(self.levels().clone(), values, self.range())
    }
}

impl QuantileForecaster for DecodingOracle<'_> {
    fn range(&self) -> ScoreRange {
        self.0.range()
    }

    fn levels(&self) -> &QuantileLevels {
        self.0.levels()
    }

    fn trajectory(&self, tokens: &[String]) -> Result<Vec<QuantileSet>> {
        self.0.trajectory(tokens)
    }

    fn next_sets(&self, context: &[String], candidates: &[&str]) -> Result<Vec<QuantileSet>> {
        let fallback = match self.0.trajectory(context) {
            Ok(mut sets) => sets.pop().unwrap_or_else(|| self.spread()),
            Err(_) => self.spread(),
        };
        Ok(candidates
            .iter()
            .map(|c| match self.0.next_sets(context, &[c]) {
                Ok(mut sets) => sets.remove(0),
                Err(_) => fallback.clone(),
            })
            .collect())
    }
}

pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(String::from).collect()
}

use qaff_core::corpus::ScoreRange as Range;
use qaff_core::embed::LanguageModel;

/// A language model with the same next-token distribution after every context.
pub struct FixedLM {
    pub vocab: Vec<String>,
    pub probs: Vec<f64>,
}

impl FixedLM {
    pub fn new(pairs: &[(&str, f64)]) -> Self {
        Self {
            vocab: pairs.iter().map(|p| p.0.to_string()).collect(),
            probs: pairs.iter().map(|p| p.1).collect(),
        }
    }
}

impl LanguageModel for FixedLM {
    fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    fn next_probs(&self, _context: &[String]) -> Vec<f64> {
        self.probs.clone()
    }

    fn token_id(&self, word: &str) -> Option<usize> {
        self.vocab.iter().position(|w| w == word)
    }
}

/// A forecaster with hand-set quantile sets: tokens listed in `sets` get that
/// constant set, every other token gets quantiles equal to `level - 0.5`.
pub struct TableForecaster {
    pub levels: QuantileLevels,
    pub sets: Vec<(String, f64)>,
}

impl TableForecaster {
    pub fn new(sets: &[(&str, f64)]) -> Self {
        Self {
            levels: QuantileLevels::standard(),
            sets: sets.iter().map(|(w, v)| (w.to_string(), *v)).collect(),
        }
    }

    pub fn set_for(&self, token: &str) -> QuantileSet {
        let values = match self.sets.iter().find(|(w, _)| w == token) {
            Some(&(_, v)) => vec![v; self.levels.len()],
            None => self.levels.values().iter().map(|a| a - 0.5).collect(),
        };
        QuantileSet::new(self.levels.clone(), values, Range::SIGNED)
    }
}

impl QuantileForecaster for TableForecaster {
    fn range(&self) -> Range {
        Range::SIGNED
    }

    fn levels(&self) -> &QuantileLevels {
        &self.levels
    }

    fn trajectory(&self, tokens: &[String]) -> Result<Vec<QuantileSet>> {
        Ok(tokens.iter().map(|t| self.set_for(t)).collect())
    }

    fn next_sets(&self, _context: &[String], candidates: &[&str]) -> Result<Vec<QuantileSet>> {
        Ok(candidates.iter().map(|c| self.set_for(c)).collect())
    }
}
