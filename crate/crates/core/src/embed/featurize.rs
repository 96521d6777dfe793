use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::vocab::Vocabulary;
use crate::corpus::FeatureMatrix;
use crate::{Error, Result};

/// Windowed context features from fixed random token embeddings.
///
/// Row `t` concatenates the embeddings of tokens `t-k+1 ..= t`, oldest first,
/// left-padded with the `<pad>` embedding. Unknown tokens use `<unk>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeaturizer {
    vocab: Vocabulary,
    dim: usize,
    window: usize,
    seed: u64,
    table: Vec<f32>,
}

impl ContextFeaturizer {
    pub const DEFAULT_DIM: usize = 32;
    pub const DEFAULT_WINDOW: usize = 4;

    /// Draws one standard-normal vector per vocabulary entry, in vocabulary
    /// order, from a generator seeded with `seed`.
    pub fn new(vocab: Vocabulary, dim: usize, window: usize, seed: u64) -> Result<Self> {
        if dim == 0 || window == 0 {
            return Err(Error::Config("embedding dim and window must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..vocab.len() * dim)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x as f32
            })
            .collect();
        Ok(Self {
            vocab,
            dim,
            window,
            seed,
            table,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Width of a feature row, `window · dim`.
    pub fn output_dim(&self) -> usize {
        self.window * self.dim
    }

    pub fn embedding(&self, word: &str) -> &[f32] {
        self.embedding_id(self.vocab.id(word))
    }

    fn embedding_id(&self, id: usize) -> &[f32] {
        &self.table[id * self.dim..(id + 1) * self.dim]
    }

    fn push_row<S: AsRef<str>>(&self, window_tokens: &[S], out: &mut Vec<f32>) {
        let pad = self.window - window_tokens.len();
        for _ in 0..pad {
            out.extend_from_slice(self.embedding_id(Vocabulary::PAD_ID));
        }
        for tok in window_tokens {
            out.extend_from_slice(self.embedding(tok.as_ref()));
        }
    }

    /// One feature row per token.
    pub fn featurize<S: AsRef<str>>(&self, tokens: &[S]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(tokens.len() * self.output_dim());
        for t in 0..tokens.len() {
            let start = (t + 1).saturating_sub(self.window);
            self.push_row(&tokens[start..=t], &mut data);
        }
        FeatureMatrix::new(tokens.len(), self.output_dim(), data).expect("row layout")
    }

    /// Feature row of `next` appended to `context`.
    pub fn window_row<S: AsRef<str>>(&self, context: &[S], next: &str) -> Vec<f32> {
        let keep = self.window - 1;
        let start = context.len().saturating_sub(keep);
        let mut tokens: Vec<&str> = context[start..].iter().map(AsRef::as_ref).collect();
        tokens.push(next);
        let mut row = Vec::with_capacity(self.output_dim());
        self.push_row(&tokens, &mut row);
        row
    }
}
