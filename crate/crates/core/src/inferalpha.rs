//! Recovering the targeting level of a sentence source: each sentence is
//! scored under every candidate (α, tail) by replaying the reweighted
//! decoder along its tokens, and the best candidate is averaged per source.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::LanguageModel;
use crate::generate::{prompt_target, reweight, sample_sentence, tail_weight, truncate, GenerationConfig, Tail};
use crate::quantile::QuantileForecaster;
use crate::stats::{mean, pearson};
use crate::{Error, Result};

/// One hypothesis about how a sentence was decoded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaCandidate {
    pub alpha: f64,
    pub tail: Tail,
}

impl AlphaCandidate {
    pub const UNBIASED: Self = Self {
        alpha: 1.0,
        tail: Tail::Lower,
    };

    pub fn is_unbiased(&self) -> bool {
        self.alpha == 1.0
    }

    /// A single number per candidate: α for the lower tail, `2 - α` for the
    /// upper tail, 1 for unbiased decoding.
    pub fn reported(&self) -> f64 {
        match self.tail {
            _ if self.is_unbiased() => 1.0,
            Tail::Lower => self.alpha,
            Tail::Upper => 2.0 - self.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub alphas: Vec<f64>,
    pub tails: Vec<Tail>,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        Self {
            alphas: vec![0.05, 0.1, 0.25, 0.5, 0.75],
            tails: vec![Tail::Lower, Tail::Upper],
        }
    }
}

impl AlphaGrid {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Config("grid levels must lie in (0, 1)".into()));
        }
        if self.tails.is_empty() && !self.alphas.is_empty() {
            return Err(Error::Config("grid needs at least one tail".into()));
        }
        Ok(())
    }

    /// The unbiased candidate followed by every (α, tail) pair.
    pub fn candidates(&self) -> Vec<AlphaCandidate> {
        let mut out = vec![AlphaCandidate::UNBIASED];
        for &tail in &self.tails {
            for &alpha in &self.alphas {
                out.push(AlphaCandidate { alpha, tail });
            }
        }
        out
    }

    /// Sorted reported values of all candidates.
    pub fn reported_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.candidates().iter().map(AlphaCandidate::reported).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Grid value nearest to `x` (the lower one on exact ties).
    pub fn nearest(&self, x: f64) -> f64 {
        self.reported_values()
            .into_iter()
            .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
            .expect("grid contains the unbiased candidate")
    }
}

/// Decoder settings the candidates are replayed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    /// Lower bound on token weights so no candidate assigns zero probability.
    pub weight_floor: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            top_k: g.top_k,
            top_p: g.top_p,
            temperature: g.temperature,
            weight_floor: 1e-3,
        }
    }
}

impl ReplayConfig {
    pub fn from_generation(g: &GenerationConfig) -> Self {
        Self {
            top_k: g.top_k,
            top_p: g.top_p,
            temperature: g.temperature,
            ..Self::default()
        }
    }
}

/// Log-likelihood of `tokens[1..]` given `tokens[0]` under each candidate.
///
/// Every step uses the decoder's truncated candidate set; a token outside it
/// (possible for sentences from elsewhere) is scored against the full
/// vocabulary instead.
pub fn sentence_logliks<L, F>(lm: &L, forecaster: &F, tokens: &[String], candidates: &[AlphaCandidate], cfg: &ReplayConfig) -> Result<Vec<f64>>
where
    L: LanguageModel + ?Sized,
    F: QuantileForecaster + ?Sized,
{
    if tokens.len() < 2 {
        return Err(Error::Domain("sentence needs a prompt token and a continuation".into()));
    }
    let prompt_set = forecaster.trajectory(&tokens[..1])?.pop().expect("one set");
    let targets: Vec<Option<f64>> = candidates
        .iter()
        .map(|c| (!c.is_unbiased()).then(|| prompt_target(&prompt_set, c.alpha, c.tail)))
        .collect();
    let vocab = lm.vocabulary();
    let mut ll = vec![0.0; candidates.len()];
    for t in 1..tokens.len() {
        let context = &tokens[..t];
        let probs = lm.next_probs(context);
        let mut cands = truncate(&probs, cfg.top_k, cfg.top_p, cfg.temperature);
        let mut chosen = cands.iter().position(|c| vocab[c.0] == tokens[t]);
        if chosen.is_none() {
            let id = lm
                .token_id(&tokens[t])
                .ok_or_else(|| Error::Domain(format!("token {:?} is not in the language model vocabulary", tokens[t])))?;
            cands = probs.iter().copied().enumerate().collect();
            chosen = Some(id);
        }
        let chosen = chosen.expect("set above");
        let names: Vec<&str> = cands.iter().map(|c| vocab[c.0].as_str()).collect();
        let p: Vec<f64> = cands.iter().map(|c| c.1).collect();
        let sets = if targets.iter().any(Option::is_some) {
            forecaster.next_sets(context, &names)?
        } else {
            Vec::new()
        };
        for (k, cand) in candidates.iter().enumerate() {
            let lp = match targets[k] {
                None => p[chosen].ln(),
                Some(target) => {
                    let w: Vec<f64> = sets.iter().map(|s| tail_weight(s, target, cand.tail).max(cfg.weight_floor)).collect();
                    let (pp, _) = reweight(&p, &w);
                    pp[chosen].ln()
                }
            };
            ll[k] += lp;
        }
    }
    Ok(ll)
}

/// Log-likelihoods of one sentence over a grid, with the best candidate and
/// the normalized posterior under a uniform prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub candidates: Vec<AlphaCandidate>,
    pub logliks: Vec<f64>,
    pub posterior: Vec<f64>,
    pub best: AlphaCandidate,
}

/// Log-likelihoods within this distance count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Prefers unbiased decoding, then larger α, then the lower tail.
fn tie_rank(c: &AlphaCandidate) -> (bool, f64, bool) {
    (c.is_unbiased(), c.alpha, c.tail == Tail::Lower)
}

pub fn fit_sentence<L, F>(lm: &L, forecaster: &F, tokens: &[String], grid: &AlphaGrid, cfg: &ReplayConfig) -> Result<AlphaFit>
where
    L: LanguageModel + ?Sized,
    F: QuantileForecaster + ?Sized,
{
    grid.validate()?;
    let candidates = grid.candidates();
    let logliks = sentence_logliks(lm, forecaster, tokens, &candidates, cfg)?;
    let top = logliks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best = candidates
        .iter()
        .zip(&logliks)
        .filter(|(_, &l)| top - l <= TIE_TOLERANCE)
        .map(|(c, _)| *c)
        .max_by(|a, b| {
            let (ua, aa, la) = tie_rank(a);
            let (ub, ab, lb) = tie_rank(b);
            ua.cmp(&ub).then(aa.total_cmp(&ab)).then(la.cmp(&lb))
        })
        .expect("grid is nonempty");
    let weights: Vec<f64> = logliks.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(AlphaFit {
        posterior: weights.iter().map(|w| w / z).collect(),
        candidates,
        logliks,
        best,
    })
}

/// Fits every sentence of a source in parallel.
pub fn fit_sentences<L, F>(lm: &L, forecaster: &F, sentences: &[Vec<String>], grid: &AlphaGrid, cfg: &ReplayConfig) -> Result<Vec<AlphaFit>>
where
    L: LanguageModel + ?Sized,
    F: QuantileForecaster + ?Sized,
{
    sentences
        .par_iter()
        .map(|s| fit_sentence(lm, forecaster, s, grid, cfg))
        .collect()
}

/// Source-level estimate: the mean reported value of the per-sentence fits.
pub fn fit_source(fits: &[AlphaFit]) -> Result<f64> {
    if fits.is_empty() {
        return Err(Error::Domain("source has no sentences".into()));
    }
    Ok(mean(&fits.iter().map(|f| f.best.reported()).collect::<Vec<_>>()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub grid: AlphaGrid,
    /// Sentences per simulated source.
    pub sizes: Vec<usize>,
    pub simulations: usize,
    /// Sentences generated per true candidate; sources subsample this pool.
    pub pool_size: usize,
    pub generation: GenerationConfig,
    pub replay: ReplayConfig,
    pub seed: u64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            grid: AlphaGrid::default(),
            sizes: vec![10, 50, 100],
            simulations: 20,
            pool_size: 200,
            generation: GenerationConfig::default(),
            replay: ReplayConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub size: usize,
    /// Share of simulated sources whose estimate rounds to the true value.
    pub accuracy: f64,
    /// Correlation of true and estimated values over all simulated sources.
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
    /// `(true reported value, estimate)` per simulated source, by size.
    pub estimates: Vec<Vec<(f64, f64)>>,
}

/// Generates a pool of sentences for every biased grid candidate (the
/// unbiased one when the grid has no others), fits each
/// sentence once, and draws `simulations` sources of each size per
/// candidate by subsampling the pool without replacement.
///
/// Prompts are single tokens drawn from the language model's sentence-start
/// distribution under the decoder's truncation.
pub fn recovery_experiment<L, F>(lm: &L, forecaster: &F, config: &RecoveryConfig) -> Result<RecoveryReport>
where
    L: LanguageModel + ?Sized,
    F: QuantileForecaster + ?Sized,
{
    config.grid.validate()?;
    if config.sizes.iter().any(|&n| n == 0 || n > config.pool_size) {
        return Err(Error::Config("source sizes must lie in 1..=pool_size".into()));
    }
    if config.simulations == 0 {
        return Err(Error::Config("simulations must be at least 1".into()));
    }
    let mut truths: Vec<AlphaCandidate> = config.grid.candidates().into_iter().filter(|c| !c.is_unbiased()).collect();
    if truths.is_empty() {
        truths.push(AlphaCandidate::UNBIASED);
    }
    let vocab = lm.vocabulary();
    let starts = truncate(&lm.next_probs(&[]), config.generation.top_k, config.generation.top_p, config.generation.temperature);

    let mut pools: Vec<Vec<f64>> = Vec::with_capacity(truths.len());
    for (ti, truth) in truths.iter().enumerate() {
        let gen = GenerationConfig {
            alpha: truth.alpha,
            tail: truth.tail,
            ..config.generation.clone()
        };
        let base = config.seed.wrapping_add((ti as u64) << 32);
        let reported: Vec<f64> = (0..config.pool_size)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(base.wrapping_add(i as u64));
                let u: f64 = rand::Rng::random(&mut rng);
                let mut acc = 0.0;
                let mut pick = starts[starts.len() - 1].0;
                for &(id, p) in &starts {
                    acc += p;
                    if u < acc {
                        pick = id;
                        break;
                    }
                }
                let prompt = vec![vocab[pick].clone()];
                let g = sample_sentence(lm, forecaster, &prompt, &gen, &mut rng)?;
                let fit = fit_sentence(lm, forecaster, &g.full_tokens(), &config.grid, &config.replay)?;
                Ok(fit.best.reported())
            })
            .collect::<Result<_>>()?;
        pools.push(reported);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for &size in &config.sizes {
        let mut pairs = Vec::new();
        for (truth, pool) in truths.iter().zip(&pools) {
            for _ in 0..config.simulations {
                let picked: Vec<f64> = sample(&mut rng, pool.len(), size).into_iter().map(|i| pool[i]).collect();
                pairs.push((truth.reported(), mean(&picked)));
            }
        }
        let hits = pairs.iter().filter(|(t, e)| config.grid.nearest(*e) == *t).count();
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        rows.push(RecoveryRow {
            size,
            accuracy: hits as f64 / pairs.len() as f64,
            pearson: pearson(&xs, &ys),
        });
        estimates.push(pairs);
    }
    Ok(RecoveryReport { rows, estimates })
}
