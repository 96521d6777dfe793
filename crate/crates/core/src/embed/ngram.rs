use std::collections::{BTreeMap, HashMap};

use super::vocab::UNK;
use crate::corpus::TokenSequence;
use crate::{Error, Result};

/// Autoregressive next-token model over a fixed, ordered vocabulary.
pub trait LanguageModel: Sync {
    fn vocabulary(&self) -> &[String];

    /// Probability of every vocabulary entry following `context`. Sums to 1.
    fn next_probs(&self, context: &[String]) -> Vec<f64>;

    /// Index of `word` in [`vocabulary`](Self::vocabulary), if present.
    fn token_id(&self, word: &str) -> Option<usize>;
}

const BOS: u32 = u32::MAX;

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ContextCounts {
    pub(crate) total: u64,
    pub(crate) next: BTreeMap<u32, u64>,
}

/// Add-k smoothed n-gram model. The vocabulary is the sorted set of corpus
/// words plus `<unk>`; contexts are left-padded with a sentence-start marker.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLM {
    order: usize,
    k: f64,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    counts: HashMap<Vec<u32>, ContextCounts>,
}

/// Fits an `order`-gram model with add-`k` smoothing.
pub fn fit_ngram(corpus: &[TokenSequence], order: usize, k: f64) -> Result<NGramLM> {
    if order < 1 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::Config(format!("smoothing constant must be positive, got {k}")));
    }
    if corpus.is_empty() {
        return Err(Error::Domain("cannot fit a language model on an empty corpus".into()));
    }
    let mut words: Vec<String> = corpus.iter().flat_map(|s| s.tokens().iter().cloned()).collect();
    words.push(UNK.to_string());
    words.sort();
    words.dedup();
    let mut lm = NGramLM::empty(order, k, words);
    for seq in corpus {
        let ids: Vec<u32> = seq.tokens().iter().map(|t| lm.id(t)).collect();
        for t in 0..ids.len() {
            let ctx = lm.context_ids(&ids[..t]);
            let entry = lm.counts.entry(ctx).or_default();
            entry.total += 1;
            *entry.next.entry(ids[t]).or_insert(0) += 1;
        }
    }
    Ok(lm)
}

impl NGramLM {
    pub const DEFAULT_ORDER: usize = 3;
    pub const DEFAULT_K: f64 = 0.1;

    fn empty(order: usize, k: f64, vocab: Vec<String>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self {
            order,
            k,
            vocab,
            index,
            counts: HashMap::new(),
        }
    }

    pub(crate) fn from_parts(order: usize, k: f64, vocab: Vec<String>, counts: HashMap<Vec<u32>, ContextCounts>) -> Self {
        Self {
            counts,
            ..Self::empty(order, k, vocab)
        }
    }

    pub(crate) fn counts(&self) -> &HashMap<Vec<u32>, ContextCounts> {
        &self.counts
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or_else(|| self.index[UNK])
    }

    /// Last `order - 1` ids, left-padded with the start marker.
    fn context_ids(&self, ids: &[u32]) -> Vec<u32> {
        let n = self.order - 1;
        let mut ctx = vec![BOS; n.saturating_sub(ids.len())];
        ctx.extend_from_slice(&ids[ids.len().saturating_sub(n)..]);
        ctx
    }

    /// Smoothed `P(word | context)`.
    pub fn prob(&self, context: &[String], word: &str) -> f64 {
        let ids: Vec<u32> = context.iter().map(|t| self.id(t)).collect();
        let ctx = self.context_ids(&ids);
        let v = self.vocab.len() as f64;
        let (c, total) = match self.counts.get(&ctx) {
            Some(cc) => (cc.next.get(&self.id(word)).copied().unwrap_or(0), cc.total),
            None => (0, 0),
        };
        (c as f64 + self.k) / (total as f64 + self.k * v)
    }

    /// `Σ_t ln P(x_t | x_<t)`.
    pub fn sentence_log_prob<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        (0..tokens.len()).map(|t| self.prob(&tokens[..t], &tokens[t]).ln()).sum()
    }

    /// `exp(-mean token log-probability)` over a corpus.
    pub fn perplexity(&self, corpus: &[TokenSequence]) -> f64 {
        let mut lp = 0.0;
        let mut n = 0usize;
        for seq in corpus {
            lp += self.sentence_log_prob(seq.tokens());
            n += seq.len();
        }
        (-lp / n.max(1) as f64).exp()
    }
}

impl LanguageModel for NGramLM {
    fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    fn next_probs(&self, context: &[String]) -> Vec<f64> {
        let ids: Vec<u32> = context.iter().map(|t| self.id(t)).collect();
        let ctx = self.context_ids(&ids);
        let v = self.vocab.len() as f64;
        let mut probs = vec![0.0; self.vocab.len()];
        match self.counts.get(&ctx) {
            Some(cc) => {
                let denom = cc.total as f64 + self.k * v;
                probs.iter_mut().for_each(|p| *p = self.k / denom);
                for (&w, &c) in &cc.next {
                    probs[w as usize] = (c as f64 + self.k) / denom;
                }
            }
            None => probs.iter_mut().for_each(|p| *p = 1.0 / v),
        }
        probs
    }

    fn token_id(&self, word: &str) -> Option<usize> {
        self.index.get(word).map(|&i| i as usize)
    }
}
