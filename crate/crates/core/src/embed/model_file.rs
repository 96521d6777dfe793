//! `QAFFLM1` model files: an n-gram language model plus the featurizer
//! settings that belong with it.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic          7 bytes  "QAFFLM1"
//! order          u32
//! k              f64
//! vocab_len      u32
//! vocab_len × { byte_len u32, UTF-8 bytes }   sorted LM vocabulary
//! feat_seed      u64
//! feat_dim       u32
//! feat_window    u32
//! n_entries      u64
//! n_entries × { (order - 1) × context id u32, next id u32, count u64 }
//! ```
//!
//! Context ids index the LM vocabulary; `0xFFFFFFFF` is the sentence-start
//! marker. Entries are sorted by context, then next id. The featurizer
//! vocabulary is the LM vocabulary behind the reserved `<pad>`/`<unk>`
//! entries, so it is rebuilt rather than stored.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::featurize::ContextFeaturizer;
use super::ngram::{ContextCounts, LanguageModel, NGramLM};
use super::vocab::Vocabulary;
use crate::{Error, Result};

const MAGIC: &[u8; 7] = b"QAFFLM1";

/// Language model and featurizer that share one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub lm: NGramLM,
    pub featurizer: ContextFeaturizer,
}

impl ModelBundle {
    /// Pairs `lm` with a fresh featurizer over its vocabulary.
    pub fn new(lm: NGramLM, dim: usize, window: usize, seed: u64) -> Result<Self> {
        let featurizer = ContextFeaturizer::new(Vocabulary::new(lm.vocabulary()), dim, window, seed)?;
        Ok(Self { lm, featurizer })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let lm = &self.lm;
        w.write_all(MAGIC)?;
        w.write_all(&(lm.order() as u32).to_le_bytes())?;
        w.write_all(&lm.k().to_le_bytes())?;
        w.write_all(&(lm.vocabulary().len() as u32).to_le_bytes())?;
        for word in lm.vocabulary() {
            w.write_all(&(word.len() as u32).to_le_bytes())?;
            w.write_all(word.as_bytes())?;
        }
        let f = &self.featurizer;
        w.write_all(&f.seed().to_le_bytes())?;
        w.write_all(&(f.dim() as u32).to_le_bytes())?;
        w.write_all(&(f.window() as u32).to_le_bytes())?;
        let mut contexts: Vec<(&Vec<u32>, &ContextCounts)> = lm.counts().iter().collect();
        contexts.sort_by(|a, b| a.0.cmp(b.0));
        let n_entries: usize = contexts.iter().map(|(_, c)| c.next.len()).sum();
        w.write_all(&(n_entries as u64).to_le_bytes())?;
        for (ctx, cc) in contexts {
            for (&next, &count) in &cc.next {
                for &id in ctx {
                    w.write_all(&id.to_le_bytes())?;
                }
                w.write_all(&next.to_le_bytes())?;
                w.write_all(&count.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic; not a QAFFLM1 model file".into()));
        }
        let order = read_u32(&mut r)? as usize;
        if order < 1 {
            return Err(Error::Format("n-gram order must be at least 1".into()));
        }
        let k = f64::from_le_bytes(read_array(&mut r)?);
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Format(format!("invalid smoothing constant {k}")));
        }
        let vocab_len = read_u32(&mut r)? as usize;
        let mut vocab = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            let len = read_u32(&mut r)? as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            vocab.push(String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?);
        }
        let seed = u64::from_le_bytes(read_array(&mut r)?);
        let dim = read_u32(&mut r)? as usize;
        let window = read_u32(&mut r)? as usize;
        let n_entries = u64::from_le_bytes(read_array(&mut r)?);
        let mut counts: HashMap<Vec<u32>, ContextCounts> = HashMap::new();
        for _ in 0..n_entries {
            let ctx = (0..order - 1).map(|_| read_u32(&mut r)).collect::<Result<Vec<u32>>>()?;
            let next = read_u32(&mut r)?;
            let count = u64::from_le_bytes(read_array(&mut r)?);
            let valid = |id: u32| id == u32::MAX || (id as usize) < vocab_len;
            if !ctx.iter().all(|&id| valid(id)) || (next as usize) >= vocab_len {
                return Err(Error::Format("n-gram entry references an id outside the vocabulary".into()));
            }
            let entry = counts.entry(ctx).or_default();
            entry.total += count;
            entry.next.insert(next, count);
        }
        let lm = NGramLM::from_parts(order, k, vocab, counts);
        Self::new(lm, dim, window, seed).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenSequence;
    use crate::embed::fit_ngram;

    #[test]
    fn round_trip_preserves_model_and_featurizer() {
        let corpus: Vec<TokenSequence> = ["a b c .", "a b d .", "b c ."]
            .iter()
            .map(|t| TokenSequence::from_text(t).unwrap())
            .collect();
        let bundle = ModelBundle::new(fit_ngram(&corpus, 3, 0.1).unwrap(), 8, 4, 42).unwrap();
        let mut buf = Vec::new();
        bundle.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..7], b"QAFFLM1");
        let back = ModelBundle::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, bundle);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn wrong_magic_and_truncation_are_rejected() {
        assert!(matches!(ModelBundle::read_from(&b"QAFFQH1...."[..]), Err(Error::Format(_))));
        let corpus = vec![TokenSequence::from_text("a b .").unwrap()];
        let bundle = ModelBundle::new(fit_ngram(&corpus, 2, 0.1).unwrap(), 4, 2, 1).unwrap();
        let mut buf = Vec::new();
        bundle.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(ModelBundle::read_from(buf.as_slice()).is_err());
    }
}
