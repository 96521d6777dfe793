use std::collections::HashMap;

/// Reserved left-padding token.
pub const PAD: &str = "<pad>";
/// Reserved token for out-of-vocabulary words.
pub const UNK: &str = "<unk>";

/// Closed token vocabulary with the reserved `<pad>` (id 0) and `<unk>`
/// (id 1) entries first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;

    /// Builds a vocabulary from `words` in order, skipping duplicates and the
    /// reserved entries.
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut vocab = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        vocab.push(PAD);
        vocab.push(UNK);
        for w in words {
            vocab.push(w.as_ref());
        }
        vocab
    }

    fn push(&mut self, w: &str) {
        if !self.index.contains_key(w) {
            self.index.insert(w.to_string(), self.words.len());
            self.words.push(w.to_string());
        }
    }

    /// Id of `word`, or the `<unk>` id.
    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// All entries including the reserved ones.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_entries_come_first_and_unknowns_map_to_unk() {
        let v = Vocabulary::new(["b", "a", "b", UNK]);
        assert_eq!(v.words(), &[PAD, UNK, "b", "a"]);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("zebra"), Vocabulary::UNK_ID);
        assert_eq!(v.get("zebra"), None);
    }
}
