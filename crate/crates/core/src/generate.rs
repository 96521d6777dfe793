//! Tail-targeted sampling: next-token probabilities are reweighted by the
//! share of each candidate's predicted end-score distribution that lies
//! beyond the prompt's α-quantile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::LanguageModel;
use crate::quantile::{QuantileForecaster, QuantileSet};
use crate::{Error, Result};

/// Which tail of the prompt distribution to target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Lower,
    Upper,
}

impl std::str::FromStr for Tail {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(Tail::Lower),
            "upper" => Ok(Tail::Upper),
            other => Err(Error::Config(format!("tail must be lower or upper, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Tail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tail::Lower => "lower",
            Tail::Upper => "upper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Target level; 1 disables reweighting.
    pub alpha: f64,
    pub tail: Tail,
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    /// Cap on generated tokens (the prompt not included).
    pub max_tokens: usize,
    pub terminator: String,
    pub seed: u64,
    pub n_samples: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            tail: Tail::Lower,
            top_k: 50,
            top_p: 0.95,
            temperature: 1.0,
            max_tokens: 40,
            terminator: ".".to_string(),
            seed: 0,
            n_samples: 1,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.top_k < 1 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.max_tokens < 1 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_unbiased(&self) -> bool {
        self.alpha == 1.0
    }
}

/// The target value: the prompt's α-quantile, or for the upper tail the
/// α-quantile of the negated distribution.
pub fn prompt_target(prompt_set: &QuantileSet, alpha: f64, tail: Tail) -> f64 {
    match tail {
        Tail::Lower => prompt_set.value_at(alpha),
        Tail::Upper => prompt_set.negated().value_at(alpha),
    }
}

/// Share of a candidate's distribution below `target`, read off the
/// interpolated quantile function (0 if every quantile is above, 1 if every
/// quantile is below).
pub fn token_weight(set: &QuantileSet, target: f64) -> f64 {
    set.level_at(target)
}

/// [`token_weight`] for either tail; `target` comes from [`prompt_target`].
pub fn tail_weight(set: &QuantileSet, target: f64, tail: Tail) -> f64 {
    match tail {
        Tail::Lower => token_weight(set, target),
        Tail::Upper => token_weight(&set.negated(), target),
    }
}

/// Candidate ids and renormalized probabilities after temperature, top-k and
/// top-p, in descending probability order (ties by id).
pub fn truncate(probs: &[f64], top_k: usize, top_p: f64, temperature: f64) -> Vec<(usize, f64)> {
    let mut cands: Vec<(usize, f64)> = if temperature == 1.0 {
        probs.iter().copied().enumerate().collect()
    } else {
        probs.iter().map(|&p| p.powf(1.0 / temperature)).enumerate().collect()
    };
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cands.truncate(top_k);
    let total: f64 = cands.iter().map(|c| c.1).sum();
    let mut acc = 0.0;
    let mut keep = cands.len();
    for (i, c) in cands.iter().enumerate() {
        acc += c.1 / total;
        if acc >= top_p {
            keep = i + 1;
            break;
        }
    }
    cands.truncate(keep);
    let total: f64 = cands.iter().map(|c| c.1).sum();
    cands.iter_mut().for_each(|c| c.1 /= total);
    cands
}

/// Below this total reweighted mass a step falls back to the max-weight
/// candidate.
pub const ZERO_MASS: f64 = 1e-12;

/// `p'_i = w_i p_i / Σ_j w_j p_j`, or a one-hot on the max-weight candidate
/// (ties by base probability, then position) when the mass vanishes. The
/// flag reports the fallback.
pub fn reweight(p: &[f64], weights: &[f64]) -> (Vec<f64>, bool) {
    assert_eq!(p.len(), weights.len());
    let mass: f64 = p.iter().zip(weights).map(|(a, b)| a * b).sum();
    if mass < ZERO_MASS {
        let mut best = 0;
        for i in 1..p.len() {
            if weights[i] > weights[best] || (weights[i] == weights[best] && p[i] > p[best]) {
                best = i;
            }
        }
        let mut out = vec![0.0; p.len()];
        out[best] = 1.0;
        return (out, true);
    }
    (p.iter().zip(weights).map(|(a, b)| a * b / mass).collect(), false)
}

/// One decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReweightedStep {
    pub candidates: Vec<String>,
    /// Truncated base probabilities.
    pub p: Vec<f64>,
    pub weights: Vec<f64>,
    pub p_prime: Vec<f64>,
    pub chosen: usize,
    pub target: f64,
    pub fallback: bool,
}

impl ReweightedStep {
    pub fn token(&self) -> &str {
        &self.candidates[self.chosen]
    }
}

/// Coloring of a step by how much reweighting moved the chosen token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepClass {
    StrongUp,
    Up,
    Neutral,
    Down,
    StrongDown,
}

/// Ratio thresholds: above 1.5 / 1.1 up, below 0.66 / 0.8 down.
pub fn step_class(p: f64, p_prime: f64) -> StepClass {
    let r = p_prime / p;
    if r > 1.5 {
        StepClass::StrongUp
    } else if r > 1.1 {
        StepClass::Up
    } else if r < 0.66 {
        StepClass::StrongDown
    } else if r < 0.8 {
        StepClass::Down
    } else {
        StepClass::Neutral
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub prompt: Vec<String>,
    /// Generated continuation, prompt excluded.
    pub tokens: Vec<String>,
    pub terminated: bool,
    pub target: Option<f64>,
    pub steps: Vec<ReweightedStep>,
}

impl Generated {
    /// Prompt followed by the continuation.
    pub fn full_tokens(&self) -> Vec<String> {
        self.prompt.iter().chain(&self.tokens).cloned().collect()
    }
}

/// Inverse-CDF draw over `probs` from one uniform variate.
fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples one continuation of `prompt` from the reweighted distribution.
/// Each step consumes exactly one uniform variate from `rng`.
pub fn sample_sentence<L, F, R>(lm: &L, forecaster: &F, prompt: &[String], config: &GenerationConfig, rng: &mut R) -> Result<Generated>
where
    L: LanguageModel + ?Sized,
    F: QuantileForecaster + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    if prompt.is_empty() {
        return Err(Error::Domain("prompt must contain at least one token".into()));
    }
    let target = if config.is_unbiased() {
        None
    } else {
        let prompt_set = forecaster.trajectory(prompt)?.pop().expect("nonempty prompt");
        Some(prompt_target(&prompt_set, config.alpha, config.tail))
    };
    let vocab = lm.vocabulary();
    let mut context = prompt.to_vec();
    let mut steps = Vec::new();
    let mut terminated = false;
    for _ in 0..config.max_tokens {
        let cands = truncate(&lm.next_probs(&context), config.top_k, config.top_p, config.temperature);
        let names: Vec<&str> = cands.iter().map(|c| vocab[c.0].as_str()).collect();
        let p: Vec<f64> = cands.iter().map(|c| c.1).collect();
        let (weights, p_prime, fallback) = match target {
            None => (vec![1.0; p.len()], p.clone(), false),
            Some(t) => {
                let sets = forecaster.next_sets(&context, &names)?;
                let w: Vec<f64> = sets.iter().map(|s| tail_weight(s, t, config.tail)).collect();
                let (pp, fb) = reweight(&p, &w);
                (w, pp, fb)
            }
        };
        let chosen = draw(&p_prime, rng.random::<f64>());
        let token = names[chosen].to_string();
        steps.push(ReweightedStep {
            candidates: names.iter().map(|s| s.to_string()).collect(),
            p,
            weights,
            p_prime,
            chosen,
            target: target.unwrap_or(f64::NAN),
            fallback,
        });
        let done = token == config.terminator;
        context.push(token);
        if done {
            terminated = true;
            break;
        }
    }
    Ok(Generated {
        tokens: context[prompt.len()..].to_vec(),
        prompt: prompt.to_vec(),
        terminated,
        target,
        steps,
    })
}

/// Plain truncated sampling without a forecaster, drawing one uniform per
/// step exactly like [`sample_sentence`].
pub fn sample_baseline<L, R>(lm: &L, prompt: &[String], config: &GenerationConfig, rng: &mut R) -> Result<(Vec<String>, bool)>
where
    L: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    let vocab = lm.vocabulary();
    let mut context = prompt.to_vec();
    for _ in 0..config.max_tokens {
        let cands = truncate(&lm.next_probs(&context), config.top_k, config.top_p, config.temperature);
        let p: Vec<f64> = cands.iter().map(|c| c.1).collect();
        let token = vocab[cands[draw(&p, rng.random::<f64>())].0].clone();
        let done = token == config.terminator;
        context.push(token);
        if done {
            return Ok((context[prompt.len()..].to_vec(), true));
        }
    }
    Ok((context[prompt.len()..].to_vec(), false))
}

/// `config.n_samples` continuations in parallel; sample `i` is seeded with
/// `config.seed + i`.
pub fn generate_batch<L, F>(lm: &L, forecaster: &F, prompt: &[String], config: &GenerationConfig) -> Result<Vec<Generated>>
where
    L: LanguageModel + ?Sized,
    F: QuantileForecaster + ?Sized,
{
    (0..config.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(i as u64));
            sample_sentence(lm, forecaster, prompt, config, &mut rng)
        })
        .collect()
}

/// One step of a JSON-lines generation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub token: String,
    pub p: f64,
    pub w: f64,
    pub p_prime: f64,
}

/// The JSON-lines output format of a generated sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt: String,
    pub alpha: f64,
    pub tail: Tail,
    pub tokens: Vec<String>,
    pub terminated: bool,
    pub score: Option<f64>,
    pub steps: Vec<StepRecord>,
}

impl GenerationRecord {
    pub fn new(g: &Generated, config: &GenerationConfig, score: Option<f64>) -> Self {
        Self {
            prompt: g.prompt.join(" "),
            alpha: config.alpha,
            tail: config.tail,
            tokens: g.tokens.clone(),
            terminated: g.terminated,
            score,
            steps: g
                .steps
                .iter()
                .map(|s| StepRecord {
                    token: s.token().to_string(),
                    p: s.p[s.chosen],
                    w: s.weights[s.chosen],
                    p_prime: s.p_prime[s.chosen],
                })
                .collect(),
        }
    }
}
