use std::collections::HashMap;

/// Odd, strictly increasing map from the real line onto `(-1, 1)`.
pub fn squash(u: f64) -> f64 {
    u / (1.0 + u.abs())
}

/// Deterministic lexicon-based sentence scorer.
///
/// Word weights are integer multiples of `tick`, so sums are exact and the
/// enumeration oracle can key distributions on integer totals. Reading left
/// to right, each word adds its weight to a running total; the pivot word
/// negates the total accumulated so far. The score is `squash(tick * total)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconScorer {
    ticks: HashMap<String, i32>,
    tick: f64,
    pivot: Option<String>,
}

impl LexiconScorer {
    pub fn new(tick: f64, pivot: Option<&str>) -> Self {
        Self {
            ticks: HashMap::new(),
            tick,
            pivot: pivot.map(str::to_string),
        }
    }

    pub fn with_word(mut self, word: &str, ticks: i32) -> Self {
        self.ticks.insert(word.to_string(), ticks);
        self
    }

    pub fn insert(&mut self, word: &str, ticks: i32) {
        self.ticks.insert(word.to_string(), ticks);
    }

    pub fn tick(&self) -> f64 {
        self.tick
    }

    pub fn pivot(&self) -> Option<&str> {
        self.pivot.as_deref()
    }

    pub fn is_pivot(&self, word: &str) -> bool {
        self.pivot.as_deref() == Some(word)
    }

    /// Integer weight of a word; unknown words are neutral.
    pub fn word_ticks(&self, word: &str) -> i32 {
        self.ticks.get(word).copied().unwrap_or(0)
    }

    /// Real-valued weight of a word.
    pub fn weight(&self, word: &str) -> f64 {
        self.word_ticks(word) as f64 * self.tick
    }

    /// Applies one token to a running integer total.
    pub fn step(&self, total: i64, word: &str) -> i64 {
        if self.is_pivot(word) {
            -total
        } else {
            total + self.word_ticks(word) as i64
        }
    }

    pub fn total_ticks<S: AsRef<str>>(&self, tokens: &[S]) -> i64 {
        tokens.iter().fold(0, |acc, w| self.step(acc, w.as_ref()))
    }

    pub fn score_ticks(&self, total: i64) -> f64 {
        squash(total as f64 * self.tick)
    }

    pub fn score<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        self.score_ticks(self.total_ticks(tokens))
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, i32)> {
        self.ticks.iter().map(|(w, &t)| (w.as_str(), t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scorer() -> LexiconScorer {
        LexiconScorer::new(0.125, Some("but"))
            .with_word("great", 16)
            .with_word("awful", -16)
            .with_word("boss", -2)
    }

    #[test]
    fn squash_is_odd_bounded_and_monotone() {
        assert_eq!(squash(0.0), 0.0);
        assert_eq!(squash(1.0), 0.5);
        assert_eq!(squash(-3.0), -squash(3.0));
        assert!(squash(1e9) < 1.0);
        assert!(squash(0.5) < squash(0.6));
    }

    #[test]
    fn scoring_is_deterministic_and_bounded() {
        let s = scorer();
        let sent = ["my", "boss", "is", "great", "."];
        assert_eq!(s.score(&sent), s.score(&sent));
        assert_eq!(s.total_ticks(&sent), 14);
        assert!((s.score(&sent) - squash(1.75)).abs() < 1e-15);
    }

    #[test]
    fn pivot_negates_the_preceding_total() {
        let s = scorer();
        assert_eq!(s.total_ticks(&["great", "but"]), -16);
        assert_eq!(s.total_ticks(&["great", "but", "awful"]), -32);
        assert_eq!(s.total_ticks(&["awful", "but", "great"]), 32);
    }
}
