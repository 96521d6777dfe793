//! Quantile heads: the Huber quantile loss, the one-hidden-layer head, and
//! Monte-Carlo / TD(0) training.

mod head;
mod levels;
mod loss;
mod train;

pub use head::{QuantileHead, Squash};
pub use levels::{QuantileLevels, QuantileSet};
pub use loss::{huber, huber_grad, minimize_free_quantiles, pinball_huber, pinball_huber_grad};
pub use train::{train, train_mc, train_td0, EpochLog, Method, TrainConfig, TrainReport};

use crate::corpus::ScoreRange;
use crate::embed::ContextFeaturizer;
use crate::{Error, Result};

/// Anything that maps a token prefix to a predicted end-score distribution.
pub trait QuantileForecaster: Sync {
    fn range(&self) -> ScoreRange;

    fn levels(&self) -> &QuantileLevels;

    /// One quantile set per position of `tokens`, each conditioned on the
    /// tokens up to and including that position.
    fn trajectory(&self, tokens: &[String]) -> Result<Vec<QuantileSet>>;

    /// Quantile sets for `context + [candidate]`, one per candidate.
    fn next_sets(&self, context: &[String], candidates: &[&str]) -> Result<Vec<QuantileSet>>;
}

impl<F: QuantileForecaster + ?Sized> QuantileForecaster for &F {
    fn range(&self) -> ScoreRange {
        (**self).range()
    }

    fn levels(&self) -> &QuantileLevels {
        (**self).levels()
    }

    fn trajectory(&self, tokens: &[String]) -> Result<Vec<QuantileSet>> {
        (**self).trajectory(tokens)
    }

    fn next_sets(&self, context: &[String], candidates: &[&str]) -> Result<Vec<QuantileSet>> {
        (**self).next_sets(context, candidates)
    }
}

/// A trained head reading features from a windowed featurizer.
#[derive(Debug, Clone, Copy)]
pub struct FeaturizedHead<'a> {
    head: &'a QuantileHead,
    featurizer: &'a ContextFeaturizer,
}

impl<'a> FeaturizedHead<'a> {
    pub fn new(head: &'a QuantileHead, featurizer: &'a ContextFeaturizer) -> Result<Self> {
        if head.input_dim() != featurizer.output_dim() {
            return Err(Error::DimMismatch {
                expected: head.input_dim(),
                found: featurizer.output_dim(),
            });
        }
        Ok(Self { head, featurizer })
    }

    pub fn head(&self) -> &QuantileHead {
        self.head
    }

    pub fn featurizer(&self) -> &ContextFeaturizer {
        self.featurizer
    }
}

impl QuantileForecaster for FeaturizedHead<'_> {
    fn range(&self) -> ScoreRange {
        self.head.range()
    }

    fn levels(&self) -> &QuantileLevels {
        self.head.levels()
    }

    fn trajectory(&self, tokens: &[String]) -> Result<Vec<QuantileSet>> {
        self.head.predict(&self.featurizer.featurize(tokens))
    }

    fn next_sets(&self, context: &[String], candidates: &[&str]) -> Result<Vec<QuantileSet>> {
        candidates
            .iter()
            .map(|c| {
                let row: Vec<f64> = self.featurizer.window_row(context, c).iter().map(|&v| v as f64).collect();
                self.head.predict_row(&row)
            })
            .collect()
    }
}
