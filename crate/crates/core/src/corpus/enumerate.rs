//! Exact conditional end-score distributions under the synthetic grammar.
//!
//! The scorer is affine in the running total between pivots, so the effect
//! of any unexpanded remainder of a derivation on the final total is a map
//! `r ↦ s·r + c` with `s = ±1`. The distribution of `(s, c)` depends only on
//! the remaining symbol stack and is memoized per stack.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use super::grammar::{Symbol, SynthGrammar};
use super::lexicon::LexiconScorer;
use crate::quantile::{QuantileForecaster, QuantileLevels, QuantileSet};
use crate::{Error, Result};

use super::ScoreRange;

/// Finite distribution over scores, atoms sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDist {
    /// Merges equal values and sorts. Probabilities must be nonnegative.
    pub fn from_atoms(atoms: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut v: Vec<(f64, f64)> = atoms.into_iter().filter(|a| a.1 > 0.0).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (x, p) in v {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += p,
                _ => merged.push((x, p)),
            }
        }
        Self { atoms: merged }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.0 * a.1).sum::<f64>() / self.total()
    }

    /// `P(Y < x)`.
    pub fn cdf_below(&self, x: f64) -> f64 {
        self.atoms.iter().take_while(|a| a.0 < x).map(|a| a.1).sum()
    }

    /// `P(Y = x)`.
    pub fn mass_at(&self, x: f64) -> f64 {
        self.atoms.iter().filter(|a| a.0 == x).map(|a| a.1).sum()
    }

    pub fn max_atom(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).fold(0.0, f64::max)
    }

    /// Lower quantile: the smallest value whose CDF reaches `alpha`.
    pub fn quantile(&self, alpha: f64) -> f64 {
        let target = alpha * self.total();
        let mut acc = 0.0;
        for &(x, p) in &self.atoms {
            acc += p;
            if acc >= target - 1e-12 {
                return x;
            }
        }
        self.atoms.last().map(|a| a.0).unwrap_or(f64::NAN)
    }

    pub fn quantile_set(&self, levels: &QuantileLevels, range: ScoreRange) -> QuantileSet {
        let values = levels.values().iter().map(|&a| self.quantile(a)).collect();
        QuantileSet::new(levels.clone(), values, range)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
enum Sym {
    Word(u32),
    Nt(u32),
}

type Stack = Vec<Sym>;
/// `(sign, offset) → probability`, sign encoded as `true` for negation.
type Completion = BTreeMap<(bool, i64), f64>;

struct Compiled {
    words: Vec<String>,
    word_ids: HashMap<String, u32>,
    word_ticks: Vec<i64>,
    word_is_pivot: Vec<bool>,
    rules: Vec<Vec<(f64, Vec<Sym>)>>,
    start: u32,
}

impl Compiled {
    fn new(grammar: &SynthGrammar, scorer: &LexiconScorer) -> Self {
        let words = grammar.vocabulary();
        let word_ids: HashMap<String, u32> = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let word_ticks = words.iter().map(|w| scorer.word_ticks(w) as i64).collect();
        let word_is_pivot = words.iter().map(|w| scorer.is_pivot(w)).collect();
        let rules = (0..grammar.nonterminal_count())
            .map(|nt| {
                grammar
                .productions(nt)
                .iter()
                .map(|p| {
                    let syms = p
                        .symbols
                        .iter()
                        .map(|s| match s {
                            Symbol::Word(w) => Sym::Word(word_ids[w]),
                            Symbol::Nonterminal(n) => Sym::Nt(*n as u32),
                        })
                        .collect();
                    (p.prob, syms)
                })
                .collect()
            })
            .collect();
        Self {
            words,
            word_ids,
            word_ticks,
            word_is_pivot,
            rules,
            start: grammar.start() as u32,
        }
    }

    fn apply(&self, total: i64, word: u32) -> i64 {
        if self.word_is_pivot[word as usize] {
            -total
        } else {
            total + self.word_ticks[word as usize]
        }
    }

    /// Expands leading nonterminals until the top is a word or the stack is
    /// empty. The top of the stack is its last element.
    fn expand(&self, stack: Stack, prob: f64, out: &mut Vec<(Stack, f64)>) {
        match stack.last() {
            Some(&Sym::Nt(nt)) => {
                for (p, syms) in &self.rules[nt as usize] {
                    let mut next = stack[..stack.len() - 1].to_vec();
                    next.extend(syms.iter().rev().copied());
                    self.expand(next, prob * p, out);
                }
            }
            _ => out.push((stack, prob)),
        }
    }
}

/// Stateful enumerator with a completion cache.
struct Enumerator {
    compiled: Compiled,
    cache: HashMap<Stack, Completion>,
}

/// Parse states after a prefix: `(stack, running total) → probability`.
type ParseStates = BTreeMap<(Stack, i64), f64>;

impl Enumerator {
    fn new(grammar: &SynthGrammar, scorer: &LexiconScorer) -> Self {
        Self {
            compiled: Compiled::new(grammar, scorer),
            cache: HashMap::new(),
        }
    }

    fn completion(&mut self, stack: &Stack) -> Completion {
        if let Some(c) = self.cache.get(stack) {
            return c.clone();
        }
        let result = match stack.last() {
            None => {
                let mut c = Completion::new();
                c.insert((false, 0), 1.0);
                c
            }
            Some(&Sym::Word(w)) => {
                let rest = stack[..stack.len() - 1].to_vec();
                let sub = self.completion(&rest);
                let mut c = Completion::new();
                let pivot = self.compiled.word_is_pivot[w as usize];
                let a = self.compiled.word_ticks[w as usize];
                for ((neg, off), p) in sub {
                    let key = if pivot {
                        (!neg, off)
                    } else {
                        (neg, off + if neg { -a } else { a })
                    };
                    *c.entry(key).or_insert(0.0) += p;
                }
                c
            }
            Some(&Sym::Nt(_)) => {
                let mut expanded = Vec::new();
                self.compiled.expand(stack.clone(), 1.0, &mut expanded);
                let mut c = Completion::new();
                for (s, p) in expanded {
                    for (key, q) in self.completion(&s) {
                        *c.entry(key).or_insert(0.0) += p * q;
                    }
                }
                c
            }
        };
        self.cache.insert(stack.clone(), result.clone());
        result
    }

    fn parse<S: AsRef<str>>(&self, prefix: &[S]) -> Result<ParseStates> {
        let mut states: ParseStates = BTreeMap::new();
        states.insert((vec![Sym::Nt(self.compiled.start)], 0), 1.0);
        for (i, tok) in prefix.iter().enumerate() {
            let tok = tok.as_ref();
            let id = *self
                .compiled
                .word_ids
                .get(tok)
                .ok_or_else(|| Error::Domain(format!("token {tok:?} is not in the grammar vocabulary")))?;
            let mut next: ParseStates = BTreeMap::new();
            for ((stack, total), p) in states {
                let mut expanded = Vec::new();
                self.compiled.expand(stack, p, &mut expanded);
                for (mut s, q) in expanded {
                    if s.last() == Some(&Sym::Word(id)) {
                        s.pop();
                        *next.entry((s, self.compiled.apply(total, id))).or_insert(0.0) += q;
                    }
                }
            }
            if next.is_empty() {
                return Err(Error::Domain(format!(
                    "prefix is not derivable at token {i} ({tok:?})"
                )));
            }
            states = next;
        }
        Ok(states)
    }

    /// Distribution over final integer totals given the prefix.
    fn end_totals<S: AsRef<str>>(&mut self, prefix: &[S]) -> Result<BTreeMap<i64, f64>> {
        let states = self.parse(prefix)?;
        let norm: f64 = states.values().sum();
        let mut totals = BTreeMap::new();
        for ((stack, r), p) in states {
            for ((neg, off), q) in self.completion(&stack) {
                let u = if neg { -r + off } else { r + off };
                *totals.entry(u).or_insert(0.0) += p * q / norm;
            }
        }
        Ok(totals)
    }

    fn next_tokens<S: AsRef<str>>(&self, prefix: &[S]) -> Result<Vec<(Option<String>, f64)>> {
        let states = self.parse(prefix)?;
        let norm: f64 = states.values().sum();
        let mut by_token: BTreeMap<Option<u32>, f64> = BTreeMap::new();
        for ((stack, _), p) in states {
            let mut expanded = Vec::new();
            self.compiled.expand(stack, p, &mut expanded);
            for (s, q) in expanded {
                let key = match s.last() {
                    Some(Sym::Word(w)) => Some(*w),
                    None => None,
                    Some(Sym::Nt(_)) => unreachable!("expand stops at words"),
                };
                *by_token.entry(key).or_insert(0.0) += q / norm;
            }
        }
        Ok(by_token
            .into_iter()
            .map(|(k, p)| (k.map(|w| self.compiled.words[w as usize].clone()), p))
            .collect())
    }
}

/// Exact end-score forecaster for sentences of a synthetic grammar.
///
/// Serves as the brute-force oracle for prefix distributions and as an ideal
/// [`QuantileForecaster`] with full-prefix information.
pub struct GrammarOracle {
    scorer: LexiconScorer,
    levels: QuantileLevels,
    inner: Mutex<Enumerator>,
}

impl GrammarOracle {
    pub fn new(grammar: &SynthGrammar, scorer: &LexiconScorer) -> Self {
        Self {
            scorer: scorer.clone(),
            levels: QuantileLevels::standard(),
            inner: Mutex::new(Enumerator::new(grammar, scorer)),
        }
    }

    /// Exact distribution of the end score over all completions of `prefix`.
    /// Fails if the prefix is not derivable.
    pub fn end_distribution<S: AsRef<str>>(&self, prefix: &[S]) -> Result<DiscreteDist> {
        let totals = self.inner.lock().expect("oracle lock").end_totals(prefix)?;
        Ok(DiscreteDist::from_atoms(
            totals.into_iter().map(|(u, p)| (self.scorer.score_ticks(u), p)),
        ))
    }

    /// Next-token distribution implied by the grammar; `None` marks the end
    /// of the sentence.
    pub fn next_tokens<S: AsRef<str>>(&self, prefix: &[S]) -> Result<Vec<(Option<String>, f64)>> {
        self.inner.lock().expect("oracle lock").next_tokens(prefix)
    }
}

impl QuantileForecaster for GrammarOracle {
    fn range(&self) -> ScoreRange {
        ScoreRange::SIGNED
    }

    fn levels(&self) -> &QuantileLevels {
        &self.levels
    }

    fn trajectory(&self, tokens: &[String]) -> Result<Vec<QuantileSet>> {
        (1..=tokens.len())
            .map(|t| Ok(self.end_distribution(&tokens[..t])?.quantile_set(&self.levels, ScoreRange::SIGNED)))
            .collect()
    }

    fn next_sets(&self, context: &[String], candidates: &[&str]) -> Result<Vec<QuantileSet>> {
        let mut prefix = context.to_vec();
        candidates
            .iter()
            .map(|c| {
                prefix.push(c.to_string());
                let set = self
                    .end_distribution(&prefix)
                    .map(|d| d.quantile_set(&self.levels, ScoreRange::SIGNED));
                prefix.pop();
                set
            })
            .collect()
    }
}

/// Exact end-score distribution of all completions of `prefix`.
pub fn enumerate_end_distribution<S: AsRef<str>>(
    grammar: &SynthGrammar,
    prefix: &[S],
    scorer: &LexiconScorer,
) -> Result<DiscreteDist> {
    GrammarOracle::new(grammar, scorer).end_distribution(prefix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GrammarBuilder;

    fn toy() -> (SynthGrammar, LexiconScorer) {
        let g = GrammarBuilder::new("S")
            .rule("S", 3.0, "the X is ADJ .")
            .rule("S", 1.0, "the X is ADJ but ADJ .")
            .words("X", &["food", "boss"])
            .rule("ADJ", 1.0, "good")
            .rule("ADJ", 1.0, "bad")
            .rule("ADJ", 2.0, "fine")
            .build(16, 0)
            .unwrap();
        let s = LexiconScorer::new(0.5, Some("but"))
            .with_word("good", 2)
            .with_word("bad", -2)
            .with_word("boss", -1);
        (g, s)
    }

    #[test]
    fn full_sentence_is_a_point_mass() {
        let (g, s) = toy();
        let sent = ["the", "boss", "is", "good", "."];
        let d = enumerate_end_distribution(&g, &sent, &s).unwrap();
        assert_eq!(d.atoms().len(), 1);
        assert_eq!(d.atoms()[0].0, s.score(&sent));
        assert!((d.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_prefix_gives_the_marginal() {
        let (g, s) = toy();
        let d = enumerate_end_distribution(&g, &[] as &[&str], &s).unwrap();
        assert!((d.total() - 1.0).abs() < 1e-12);
        // Brute force over all 2 * 3 + 2 * 3 * 3 sentences.
        let adjs = [("good", 0.25), ("bad", 0.25), ("fine", 0.5)];
        let mut expected: BTreeMap<i64, f64> = BTreeMap::new();
        for x in ["food", "boss"] {
            for (a, pa) in adjs {
                let sent = ["the", x, "is", a, "."];
                *expected.entry(s.total_ticks(&sent)).or_default() += 0.75 * 0.5 * pa;
                for (b, pb) in adjs {
                    let sent = ["the", x, "is", a, "but", b, "."];
                    *expected.entry(s.total_ticks(&sent)).or_default() += 0.25 * 0.5 * pa * pb;
                }
            }
        }
        let brute = DiscreteDist::from_atoms(expected.into_iter().map(|(u, p)| (s.score_ticks(u), p)));
        assert_eq!(d.atoms().len(), brute.atoms().len());
        for (a, b) in d.atoms().iter().zip(brute.atoms()) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn pivot_prefix_is_sign_flipped() {
        let (g, s) = toy();
        let before = ["the", "food", "is", "good"];
        let at = ["the", "food", "is", "good", "but"];
        let d = enumerate_end_distribution(&g, &at, &s).unwrap();
        // After "but" the pre-pivot total (+2) is negated and one of the
        // three adjectives follows: totals -4, -2, 0.
        let expected = [(-4, 0.25), (-2, 0.5), (0, 0.25)];
        for ((x, p), (u, q)) in d.atoms().iter().zip(expected) {
            assert_eq!(*x, s.score_ticks(u));
            assert!((p - q).abs() < 1e-12);
        }
        assert!(d.mean() < 0.0);
        assert!(enumerate_end_distribution(&g, &before, &s).unwrap().mean() > 0.0);
    }

    #[test]
    fn underivable_prefix_is_a_domain_error() {
        let (g, s) = toy();
        assert!(matches!(
            enumerate_end_distribution(&g, &["is", "the"], &s),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            enumerate_end_distribution(&g, &["zebra"], &s),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn law_of_total_probability() {
        let (g, s) = toy();
        let oracle = GrammarOracle::new(&g, &s);
        for prefix in [vec![], vec!["the"], vec!["the", "boss", "is"], vec!["the", "food", "is", "bad"]] {
            let parent = oracle.end_distribution(&prefix).unwrap();
            let mut mixed: BTreeMap<u64, f64> = BTreeMap::new();
            for (tok, p) in oracle.next_tokens(&prefix).unwrap() {
                let tok = tok.expect("sentences end with a word");
                let mut child = prefix.clone();
                child.push(tok.as_str());
                for &(x, q) in oracle.end_distribution(&child).unwrap().atoms() {
                    *mixed.entry(x.to_bits()).or_default() += p * q;
                }
            }
            for &(x, p) in parent.atoms() {
                assert!((mixed[&x.to_bits()] - p).abs() < 1e-10);
            }
            assert_eq!(mixed.len(), parent.atoms().len());
        }
    }

    #[test]
    fn lower_quantile_of_discrete_distribution() {
        let d = DiscreteDist::from_atoms([(0.0, 0.2), (1.0, 0.3), (2.0, 0.5)]);
        assert_eq!(d.quantile(0.05), 0.0);
        assert_eq!(d.quantile(0.2), 0.0);
        assert_eq!(d.quantile(0.25), 1.0);
        assert_eq!(d.quantile(0.95), 2.0);
        assert!((d.cdf_below(1.0) - 0.2).abs() < 1e-15);
        assert!((d.mass_at(1.0) - 0.3).abs() < 1e-15);
    }
}
