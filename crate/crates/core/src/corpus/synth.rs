//! The reference synthetic grammar and its lexicon.
//!
//! Every sentence is `OPENER CORE ...` where the two opener words carry small
//! weights on a mixed-radix grid (`-3..=3` and multiples of 7 up to ±21), so
//! the opener total takes 49 equally likely values. Polar core adjectives and
//! verbs outweigh any opener total; a few near-neutral ones leave the sign to
//! the opener. Sentence forms:
//!
//! - `OPENER CORE TAIL .` (7 tokens)
//! - `OPENER CORE but ADJ .` (8 tokens), the reversal form
//! - `OPENER SUBJ COP INTENS STRONG .` (7 tokens), the rare intensifier form

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grammar::{GrammarBuilder, SynthGrammar};
use super::lexicon::LexiconScorer;
use super::{ScoredExample, TokenSequence, MAX_TOKENS, VALENCE};
use crate::embed::ContextFeaturizer;
use crate::{Error, Result};

const OPENER_A: &[(&str, i32)] = &[
    ("sadly", -3),
    ("sigh", -2),
    ("hmm", -1),
    ("well", 0),
    ("oh", 1),
    ("yes", 2),
    ("gladly", 3),
];

const OPENER_B: &[(&str, i32)] = &[
    ("grimly", -21),
    ("sternly", -14),
    ("quietly", -7),
    ("today", 0),
    ("calmly", 7),
    ("warmly", 14),
    ("brightly", 21),
];

const SUBJ_COP: &[&str] = &[
    "I am", "you are", "it is", "this is", "life is",
];

const ADJ: &[(&str, i32)] = &[
    ("fine", 28),
    ("nice", 28),
    ("good", 32),
    ("glad", 32),
    ("happy", 36),
    ("kind", 36),
    ("great", 40),
    ("lovely", 40),
    ("wonderful", 44),
    ("brilliant", 44),
    ("bored", -28),
    ("tired", -28),
    ("bad", -32),
    ("upset", -32),
    ("sad", -36),
    ("angry", -36),
    ("awful", -40),
    ("bitter", -40),
    ("terrible", -44),
    ("miserable", -44),
];

/// Near-neutral core words; they keep end-score distributions from splitting
/// into two modes with an empty gap at zero.
const NEUTRAL_ADJ: &[(&str, i32)] = &[
    ("okay", 6),
    ("quiet", 3),
    ("normal", 0),
    ("different", 0),
    ("plain", -3),
    ("busy", -6),
];

const NEUTRAL_VERB: &[(&str, i32)] = &[("watch", 3), ("need", 0), ("notice", -3)];

const VERB: &[(&str, i32)] = &[
    ("like", 28),
    ("enjoy", 32),
    ("love", 36),
    ("admire", 40),
    ("adore", 44),
    ("dislike", -28),
    ("resent", -32),
    ("hate", -36),
    ("dread", -40),
    ("loathe", -44),
];

const NOUN: &[(&str, i32)] = &[
    ("movies", 4),
    ("music", 3),
    ("pizza", 2),
    ("coffee", 1),
    ("people", 0),
    ("winter", 0),
    ("school", -1),
    ("rain", -2),
    ("work", -3),
    ("mondays", -4),
];

const TAIL: &[(&str, i32)] = &[
    ("overall", 2),
    ("mostly", 1),
    ("again", 0),
    ("now", 0),
    ("here", 0),
    ("too", 0),
    ("anyway", 0),
    ("tonight", 0),
    ("sometimes", -1),
    ("recently", -2),
];

/// Intensifiers carry no weight of their own; they announce a strong
/// adjective of either sign.
pub const INTENSIFIERS: &[&str] = &["so", "really", "extremely", "incredibly"];

const STRONG: &[(&str, i32)] = &[
    ("ecstatic", 128),
    ("overjoyed", 120),
    ("delighted", 112),
    ("devastated", -128),
    ("furious", -120),
    ("heartbroken", -112),
];

/// Reversal connective of the reference grammar.
pub const PIVOT: &str = "but";

/// Score units per lexicon tick.
pub const TICK: f64 = 1.0 / 32.0;

/// Knobs of the reference grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    /// Probability of the intensifier sentence form.
    pub intensifier_rate: f64,
    /// Probability of the reversal form among the remaining sentences.
    pub reversal_rate: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            intensifier_rate: 0.0075,
            reversal_rate: 0.24,
            seed: 7,
        }
    }
}

/// Builds the reference grammar.
pub fn reference_grammar(options: &SynthOptions) -> Result<SynthGrammar> {
    let r = options.intensifier_rate;
    let rev = options.reversal_rate;
    if !(0.0..1.0).contains(&r) || !(0.0..1.0).contains(&rev) {
        return Err(Error::Config("intensifier and reversal rates must lie in [0, 1)".into()));
    }
    let words = |table: &[(&'static str, i32)]| table.iter().map(|w| w.0).collect::<Vec<_>>();
    let mut b = GrammarBuilder::new("S").rule("S", (1.0 - r) * (1.0 - rev), "A B CORE TAIL .");
    if rev > 0.0 {
        b = b.rule("S", (1.0 - r) * rev, &format!("A B CORE {PIVOT} ADJ ."));
    }
    if r > 0.0 {
        b = b.rule("S", r, "A B SUBJCOP INTENS STRONG .");
    }
    b = b
        .rule("CORE", 0.6, "SUBJCOP ADJ")
        .rule("CORE", 0.4, "I VERB NOUN")
        .words("A", &words(OPENER_A))
        .words("B", &words(OPENER_B))
        .words("ADJ", &[words(ADJ), words(NEUTRAL_ADJ)].concat())
        .words("VERB", &[words(VERB), words(NEUTRAL_VERB)].concat())
        .words("NOUN", &words(NOUN))
        .words("TAIL", &words(TAIL))
        .words("INTENS", INTENSIFIERS)
        .words("STRONG", &words(STRONG));
    for sc in SUBJ_COP {
        b = b.rule("SUBJCOP", 1.0, sc);
    }
    b.build(MAX_TOKENS, options.seed)
}

/// Lexicon matching [`reference_grammar`]: tick 1/32, pivot "but".
pub fn reference_lexicon() -> LexiconScorer {
    let mut s = LexiconScorer::new(TICK, Some(PIVOT));
    for table in [OPENER_A, OPENER_B, ADJ, NEUTRAL_ADJ, VERB, NEUTRAL_VERB, NOUN, TAIL, STRONG] {
        for &(w, t) in table {
            s.insert(w, t);
        }
    }
    s
}

/// Samples `n` sentences; sentence `i` uses its own generator seeded with
/// `seed + i`.
pub fn sample_sentences(grammar: &SynthGrammar, n: usize, seed: u64) -> Vec<TokenSequence> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            TokenSequence::new(grammar.sample(&mut rng), grammar.max_len()).expect("grammar sentences are nonempty")
        })
        .collect()
}

/// Samples `n` valence-scored, featurized sentences using the grammar's seed.
pub fn sample_corpus(
    grammar: &SynthGrammar,
    n: usize,
    scorer: &LexiconScorer,
    featurizer: &ContextFeaturizer,
) -> Result<Vec<ScoredExample>> {
    if n == 0 {
        return Err(Error::Domain("corpus size must be at least 1".into()));
    }
    sample_sentences(grammar, n, grammar.seed())
        .into_par_iter()
        .map(|seq| {
            let features = featurizer.featurize(seq.tokens());
            let score = scorer.score(seq.tokens());
            ScoredExample::new(seq, features, [(VALENCE.to_string(), score)].into())
        })
        .collect()
}
