use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::levels::{QuantileLevels, QuantileSet};
use super::loss::{pinball_huber, pinball_huber_grad};
use crate::corpus::{FeatureMatrix, ScoreRange, VALENCE};
use crate::{Error, Result};

const MAGIC: &[u8; 7] = b"QAFFQH1";

/// Output squashing applied independently to every quantile output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Squash {
    /// `tanh`, range `[-1, 1]`.
    Tanh,
    /// Logistic sigmoid, range `[0, 1]`.
    Sigmoid,
}

impl Squash {
    pub fn for_channel(channel: &str) -> Self {
        if channel == VALENCE {
            Squash::Tanh
        } else {
            Squash::Sigmoid
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Squash::Tanh => z.tanh(),
            Squash::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the squashed output.
    fn slope(self, q: f64) -> f64 {
        match self {
            Squash::Tanh => 1.0 - q * q,
            Squash::Sigmoid => q * (1.0 - q),
        }
    }

    fn tag(self) -> u8 {
        match self {
            Squash::Tanh => 0,
            Squash::Sigmoid => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Squash::Tanh),
            1 => Ok(Squash::Sigmoid),
            t => Err(Error::Format(format!("unknown squash tag {t}"))),
        }
    }
}

/// One-hidden-layer (tanh) network mapping a context feature vector to one
/// squashed output per quantile level.
///
/// Parameters live in a single flat vector laid out as
/// `[w1 (hidden × input), b1 (hidden), w2 (levels × hidden), b2 (levels)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileHead {
    input_dim: usize,
    hidden: usize,
    levels: QuantileLevels,
    channel: String,
    squash: Squash,
    range: ScoreRange,
    params: Vec<f64>,
}

/// Forward-pass intermediates for one feature row.
pub(crate) struct RowCache {
    x: Vec<f64>,
    h: Vec<f64>,
    pub(crate) q: Vec<f64>,
}

impl QuantileHead {
    pub const DEFAULT_HIDDEN: usize = 100;

    /// Fresh head with symmetric uniform fan-in initialization.
    pub fn new(input_dim: usize, hidden: usize, levels: QuantileLevels, channel: &str, seed: u64) -> Self {
        let n = levels.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::param_count_for(input_dim, hidden, n));
        let b_in = 1.0 / (input_dim as f64).sqrt();
        for _ in 0..hidden * input_dim {
            params.push(rng.random_range(-b_in..b_in));
        }
        for _ in 0..hidden {
            params.push(rng.random_range(-b_in..b_in));
        }
        let b_hidden = 1.0 / (hidden as f64).sqrt();
        for _ in 0..n * hidden {
            params.push(rng.random_range(-b_hidden..b_hidden));
        }
        for _ in 0..n {
            params.push(rng.random_range(-b_hidden..b_hidden));
        }
        let squash = Squash::for_channel(channel);
        Self {
            input_dim,
            hidden,
            levels,
            channel: channel.to_string(),
            squash,
            range: squash_range(squash),
            params,
        }
    }

    fn param_count_for(input: usize, hidden: usize, n: usize) -> usize {
        hidden * input + hidden + n * hidden + n
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn levels(&self) -> &QuantileLevels {
        &self.levels
    }

    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn squash(&self) -> Squash {
        self.squash
    }

    pub fn range(&self) -> ScoreRange {
        self.range
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Sign-flipped twin of a `tanh` head: every output is negated, so its
    /// quantile sets are the negations of this head's.
    pub fn negated(&self) -> Result<Self> {
        if self.squash != Squash::Tanh {
            return Err(Error::Domain("only tanh heads have an exact sign-flipped twin".into()));
        }
        let mut out = self.clone();
        let off = self.hidden * self.input_dim + self.hidden;
        for p in &mut out.params[off..] {
            *p = -*p;
        }
        out.range = self.range.negated();
        Ok(out)
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.input_dim;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.levels.len() * self.hidden;
        (w1, b1, w2)
    }

    pub(crate) fn forward_row(&self, x: &[f64]) -> RowCache {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let n = self.levels.len();
        let p = &self.params;
        let mut h = Vec::with_capacity(self.hidden);
        for j in 0..self.hidden {
            let w = &p[j * self.input_dim..(j + 1) * self.input_dim];
            let a: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + p[o_b1 + j];
            h.push(a.tanh());
        }
        let mut q = Vec::with_capacity(n);
        for i in 0..n {
            let w = &p[o_w2 + i * self.hidden..o_w2 + (i + 1) * self.hidden];
            let z: f64 = w.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + p[o_b2 + i];
            q.push(self.squash.apply(z));
        }
        RowCache { x: x.to_vec(), h, q }
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂q` for one row.
    pub(crate) fn backward_row(&self, cache: &RowCache, dq: &[f64], grad: &mut [f64]) {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let n = self.levels.len();
        let p = &self.params;
        let mut dh = vec![0.0; self.hidden];
        for i in 0..n {
            let dz = dq[i] * self.squash.slope(cache.q[i]);
            if dz == 0.0 {
                continue;
            }
            grad[o_b2 + i] += dz;
            let row = o_w2 + i * self.hidden;
            for j in 0..self.hidden {
                grad[row + j] += dz * cache.h[j];
                dh[j] += dz * p[row + j];
            }
        }
        for j in 0..self.hidden {
            let da = dh[j] * (1.0 - cache.h[j] * cache.h[j]);
            if da == 0.0 {
                continue;
            }
            grad[o_b1 + j] += da;
            let g = &mut grad[j * self.input_dim..(j + 1) * self.input_dim];
            for (gi, xi) in g.iter_mut().zip(&cache.x) {
                *gi += da * xi;
            }
        }
    }

    fn check_dim(&self, features: &FeatureMatrix) -> Result<()> {
        if features.dim() != self.input_dim {
            return Err(Error::DimMismatch {
                expected: self.input_dim,
                found: features.dim(),
            });
        }
        Ok(())
    }

    /// Raw (unsorted) outputs for every row.
    pub fn raw_outputs(&self, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_dim(features)?;
        Ok((0..features.rows())
            .map(|t| self.forward_row(&widen(features.row(t))).q)
            .collect())
    }

    /// Quantile set for a single feature row.
    pub fn predict_row(&self, x: &[f64]) -> Result<QuantileSet> {
        if x.len() != self.input_dim {
            return Err(Error::DimMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let q = self.forward_row(x).q;
        Ok(QuantileSet::new(self.levels.clone(), q, self.range))
    }

    /// Sorted quantile trajectory, one set per token position.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<QuantileSet>> {
        Ok(self
            .raw_outputs(features)?
            .into_iter()
            .map(|q| QuantileSet::new(self.levels.clone(), q, self.range))
            .collect())
    }

    /// Monte-Carlo loss `Σ_t Σ_α ρ_α(y - q_α(x_t))` and its gradient.
    pub fn loss_and_grad(&self, features: &FeatureMatrix, y: f64, k: f64) -> Result<(f64, Vec<f64>)> {
        self.check_dim(features)?;
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate_mc(features, y, k, &mut grad)?;
        Ok((loss, grad))
    }

    pub fn loss(&self, features: &FeatureMatrix, y: f64, k: f64) -> Result<f64> {
        self.check_dim(features)?;
        let lv = self.levels.values();
        let mut total = 0.0;
        for t in 0..features.rows() {
            let c = self.forward_row(&widen(features.row(t)));
            check_finite(&c, t)?;
            total += c.q.iter().zip(lv).map(|(&q, &a)| pinball_huber(y - q, a, k)).sum::<f64>();
        }
        Ok(total)
    }

    pub(crate) fn accumulate_mc(&self, features: &FeatureMatrix, y: f64, k: f64, grad: &mut [f64]) -> Result<f64> {
        let lv = self.levels.values();
        let mut total = 0.0;
        let mut dq = vec![0.0; lv.len()];
        for t in 0..features.rows() {
            let c = self.forward_row(&widen(features.row(t)));
            check_finite(&c, t)?;
            for (i, (&q, &a)) in c.q.iter().zip(lv).enumerate() {
                total += pinball_huber(y - q, a, k);
                dq[i] = -pinball_huber_grad(y - q, a, k);
            }
            self.backward_row(&c, &dq, grad);
        }
        Ok(total)
    }

    /// TD(0) loss: position `t` regresses on every predicted quantile of
    /// position `t + 1` (held constant), averaged over target quantiles; the
    /// final position regresses on the end score.
    pub(crate) fn accumulate_td0(&self, features: &FeatureMatrix, y: f64, k: f64, grad: &mut [f64]) -> Result<f64> {
        let lv = self.levels.values();
        let n = lv.len();
        let caches: Vec<RowCache> = (0..features.rows())
            .map(|t| self.forward_row(&widen(features.row(t))))
            .collect();
        for (t, c) in caches.iter().enumerate() {
            check_finite(c, t)?;
        }
        let mut total = 0.0;
        let mut dq = vec![0.0; n];
        let last = caches.len() - 1;
        for (t, c) in caches.iter().enumerate() {
            dq.iter_mut().for_each(|d| *d = 0.0);
            if t == last {
                for (i, (&q, &a)) in c.q.iter().zip(lv).enumerate() {
                    total += pinball_huber(y - q, a, k);
                    dq[i] = -pinball_huber_grad(y - q, a, k);
                }
            } else {
                let targets = &caches[t + 1].q;
                let scale = 1.0 / n as f64;
                for (i, (&q, &a)) in c.q.iter().zip(lv).enumerate() {
                    for &target in targets {
                        total += scale * pinball_huber(target - q, a, k);
                        dq[i] -= scale * pinball_huber_grad(target - q, a, k);
                    }
                }
            }
            self.backward_row(c, &dq, grad);
        }
        Ok(total)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.input_dim as u32).to_le_bytes())?;
        w.write_all(&(self.hidden as u32).to_le_bytes())?;
        w.write_all(&(self.levels.len() as u32).to_le_bytes())?;
        w.write_all(&(self.channel.len() as u32).to_le_bytes())?;
        w.write_all(self.channel.as_bytes())?;
        w.write_all(&[self.squash.tag(), u8::from(self.range != squash_range(self.squash))])?;
        for l in self.levels.values() {
            w.write_all(&l.to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic; not a QAFFQH1 head checkpoint".into()));
        }
        let input_dim = read_u32(&mut r)? as usize;
        let hidden = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let clen = read_u32(&mut r)? as usize;
        let mut cbytes = vec![0u8; clen];
        r.read_exact(&mut cbytes)?;
        let channel = String::from_utf8(cbytes).map_err(|e| Error::Format(e.to_string()))?;
        let mut tags = [0u8; 2];
        r.read_exact(&mut tags)?;
        let squash = Squash::from_tag(tags[0])?;
        let levels = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let levels = QuantileLevels::from_values(levels).ok_or_else(|| Error::Format("invalid quantile levels".into()))?;
        let count = read_u64(&mut r)? as usize;
        if count != Self::param_count_for(input_dim, hidden, n) {
            return Err(Error::Format(format!("parameter count {count} does not match dims")));
        }
        let params = (0..count).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        let mut range = squash_range(squash);
        if tags[1] == 1 {
            range = range.negated();
        }
        Ok(Self {
            input_dim,
            hidden,
            levels,
            channel,
            squash,
            range,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn squash_range(s: Squash) -> ScoreRange {
    match s {
        Squash::Tanh => ScoreRange::SIGNED,
        Squash::Sigmoid => ScoreRange::UNIT,
    }
}

pub(crate) fn widen(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&v| v as f64).collect()
}

fn check_finite(c: &RowCache, t: usize) -> Result<()> {
    if c.h.iter().chain(&c.q).all(|v| v.is_finite()) {
        Ok(())
    } else {
        let bad_h = c.h.iter().filter(|v| !v.is_finite()).count();
        let bad_q = c.q.iter().filter(|v| !v.is_finite()).count();
        Err(Error::Train(format!(
            "non-finite activations at position {t}: {bad_h} hidden, {bad_q} outputs"
        )))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
