use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Word(String),
    Nonterminal(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Production {
    /// Probability of this expansion, normalized per nonterminal.
    pub prob: f64,
    pub symbols: Vec<Symbol>,
}

/// Weighted, non-recursive template grammar over a closed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGrammar {
    names: Vec<String>,
    rules: Vec<Vec<Production>>,
    start: usize,
    max_len: usize,
    seed: u64,
}

/// Collects rules as `(lhs, weight, "space separated rhs")`. Any rhs symbol
/// that is also a left-hand side is a nonterminal; everything else is a word.
/// An empty rhs is the empty expansion.
#[derive(Debug, Clone)]
pub struct GrammarBuilder {
    start: String,
    rules: Vec<(String, f64, String)>,
}

impl GrammarBuilder {
    pub fn new(start: &str) -> Self {
        Self {
            start: start.to_string(),
            rules: Vec::new(),
        }
    }

    pub fn rule(mut self, lhs: &str, weight: f64, rhs: &str) -> Self {
        self.rules.push((lhs.to_string(), weight, rhs.to_string()));
        self
    }

    /// One rule per alternative word, all with the same weight.
    pub fn words(mut self, lhs: &str, words: &[&str]) -> Self {
        for w in words {
            self.rules.push((lhs.to_string(), 1.0, w.to_string()));
        }
        self
    }

    pub fn build(self, max_len: usize, seed: u64) -> Result<SynthGrammar> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut names = Vec::new();
        for (lhs, _, _) in &self.rules {
            if !index.contains_key(lhs) {
                index.insert(lhs.clone(), names.len());
                names.push(lhs.clone());
            }
        }
        let start = *index
            .get(&self.start)
            .ok_or_else(|| Error::Config(format!("start symbol {:?} has no rules", self.start)))?;

        let mut raw: Vec<Vec<(f64, Vec<Symbol>)>> = vec![Vec::new(); names.len()];
        for (lhs, weight, rhs) in &self.rules {
            if !(weight.is_finite() && *weight > 0.0) {
                return Err(Error::Config(format!("rule {lhs} -> {rhs:?} has non-positive weight {weight}")));
            }
            let symbols = rhs
                .split_whitespace()
                .map(|s| match index.get(s) {
                    Some(&i) => Symbol::Nonterminal(i),
                    None => Symbol::Word(s.to_string()),
                })
                .collect();
            raw[index[lhs]].push((*weight, symbols));
        }

        let rules = raw
            .into_iter()
            .map(|prods| {
                let total: f64 = prods.iter().map(|p| p.0).sum();
                prods
                    .into_iter()
                    .map(|(w, symbols)| Production { prob: w / total, symbols })
                    .collect()
            })
            .collect();

        let grammar = SynthGrammar {
            names,
            rules,
            start,
            max_len,
            seed,
        };
        let longest = grammar.longest_derivation()?;
        if longest > max_len {
            return Err(Error::Config(format!(
                "grammar derives sentences of {longest} tokens, above max_len {max_len}"
            )));
        }
        Ok(grammar)
    }
}

impl SynthGrammar {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn nonterminal_count(&self) -> usize {
        self.rules.len()
    }

    pub fn productions(&self, nonterminal: usize) -> &[Production] {
        &self.rules[nonterminal]
    }

    pub fn name(&self, nonterminal: usize) -> &str {
        &self.names[nonterminal]
    }

    /// All terminal words, sorted.
    pub fn vocabulary(&self) -> Vec<String> {
        let words: BTreeSet<&str> = self
            .rules
            .iter()
            .flatten()
            .flat_map(|p| &p.symbols)
            .filter_map(|s| match s {
                Symbol::Word(w) => Some(w.as_str()),
                Symbol::Nonterminal(_) => None,
            })
            .collect();
        words.into_iter().map(str::to_string).collect()
    }

    /// Length of the longest derivable sentence. Recursive grammars cannot be
    /// bounded and are rejected.
    fn longest_derivation(&self) -> Result<usize> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Unvisited,
            Active,
            Done(usize),
        }
        fn visit(g: &SynthGrammar, nt: usize, marks: &mut [Mark]) -> Result<usize> {
            match marks[nt] {
                Mark::Done(n) => return Ok(n),
                Mark::Active => {
                    return Err(Error::Config(format!(
                        "nonterminal {} is recursive; derivations may not terminate",
                        g.names[nt]
                    )))
                }
                Mark::Unvisited => {}
            }
            marks[nt] = Mark::Active;
            let mut best = 0;
            for prod in &g.rules[nt] {
                let mut len = 0;
                for sym in &prod.symbols {
                    len += match sym {
                        Symbol::Word(_) => 1,
                        Symbol::Nonterminal(c) => visit(g, *c, marks)?,
                    };
                }
                best = best.max(len);
            }
            marks[nt] = Mark::Done(best);
            Ok(best)
        }
        let mut marks = vec![Mark::Unvisited; self.names.len()];
        visit(self, self.start, &mut marks)
    }

    /// Samples one sentence by top-down expansion.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![Symbol::Nonterminal(self.start)];
        while let Some(sym) = stack.pop() {
            match sym {
                Symbol::Word(w) => out.push(w),
                Symbol::Nonterminal(nt) => {
                    let prods = &self.rules[nt];
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut chosen = prods.len() - 1;
                    for (i, p) in prods.iter().enumerate() {
                        acc += p.prob;
                        if u < acc {
                            chosen = i;
                            break;
                        }
                    }
                    stack.extend(prods[chosen].symbols.iter().rev().cloned());
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_normalize_per_nonterminal() {
        let g = GrammarBuilder::new("S")
            .rule("S", 3.0, "A .")
            .rule("S", 1.0, "b .")
            .words("A", &["x", "y"])
            .build(8, 0)
            .unwrap();
        let probs: Vec<f64> = g.productions(g.start()).iter().map(|p| p.prob).collect();
        assert_eq!(probs, vec![0.75, 0.25]);
        assert_eq!(g.vocabulary(), vec![".", "b", "x", "y"]);
    }

    #[test]
    fn recursive_or_overlong_grammars_are_rejected() {
        let rec = GrammarBuilder::new("S").rule("S", 1.0, "a S").rule("S", 1.0, "a").build(32, 0);
        assert!(matches!(rec, Err(Error::Config(_))));
        let long = GrammarBuilder::new("S").rule("S", 1.0, "a a a a").build(3, 0);
        assert!(matches!(long, Err(Error::Config(_))));
        let zero = GrammarBuilder::new("S").rule("S", 0.0, "a").build(3, 0);
        assert!(matches!(zero, Err(Error::Config(_))));
    }

    #[test]
    fn sampling_respects_structure() {
        let g = GrammarBuilder::new("S")
            .rule("S", 1.0, "OPT word .")
            .rule("OPT", 1.0, "")
            .rule("OPT", 1.0, "maybe")
            .build(8, 0)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen_short = false;
        let mut seen_long = false;
        for _ in 0..50 {
            let s = g.sample(&mut rng);
            assert_eq!(s.last().unwrap(), ".");
            match s.len() {
                2 => seen_short = true,
                3 => seen_long = true,
                n => panic!("unexpected length {n}"),
            }
        }
        assert!(seen_short && seen_long);
    }
}
