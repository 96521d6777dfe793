use super::{TokenSequence, MAX_TOKENS};

/// Sentence filtering and truncation rules.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessRules {
    /// Sentences with fewer words than this are dropped.
    pub min_words: usize,
    pub max_tokens: usize,
    /// Any sentence containing one of these characters is dropped.
    pub excluded_chars: Vec<char>,
    pub terminators: Vec<char>,
}

impl Default for PreprocessRules {
    fn default() -> Self {
        Self {
            min_words: 5,
            max_tokens: MAX_TOKENS,
            excluded_chars: vec!['|', '\n', '\r', ':', '(', ')', '[', ']', '{', '}'],
            terminators: vec!['.', '?', '!'],
        }
    }
}

/// Splits raw text into sentences on terminal punctuation, drops short or
/// run-on sentences and returns whitespace tokens with the terminal mark as
/// its own token.
pub fn preprocess(raw_text: &str, rules: &PreprocessRules) -> Vec<TokenSequence> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in raw_text.char_indices() {
        if rules.terminators.contains(&c) {
            let end = i + c.len_utf8();
            push_sentence(&raw_text[start..end], rules, &mut out);
            start = end;
        }
    }
    push_sentence(&raw_text[start..], rules, &mut out);
    out
}

fn push_sentence(fragment: &str, rules: &PreprocessRules, out: &mut Vec<TokenSequence>) {
    let sentence = fragment.trim();
    if sentence.is_empty() || sentence.chars().any(|c| rules.excluded_chars.contains(&c)) {
        return;
    }
    let (body, terminal) = match sentence.chars().last() {
        Some(c) if rules.terminators.contains(&c) => (&sentence[..sentence.len() - c.len_utf8()], Some(c)),
        _ => (sentence, None),
    };
    let words: Vec<&str> = body.split_whitespace().collect();
    if words.len() < rules.min_words {
        return;
    }
    let tokens = words
        .into_iter()
        .map(str::to_string)
        .chain(terminal.map(|c| c.to_string()));
    if let Ok(seq) = TokenSequence::new(tokens, rules.max_tokens) {
        out.push(seq);
    }
}
