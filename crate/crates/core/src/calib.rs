//! Calibration of predicted quantiles against realized end scores, overall
//! and per token position, and prefix-level comparison with empirical
//! quantiles.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ScoredExample, MAX_TOKENS};
use crate::quantile::{QuantileForecaster, QuantileHead, QuantileLevels, QuantileSet};
use crate::stats::quantile_type7;
use crate::{Error, Result};

/// Below-fractions per (level, token position).
///
/// A score equal to a predicted quantile counts as half below, which keeps
/// the estimate unbiased for scores with atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    levels: QuantileLevels,
    /// `below[p][i]`: weighted count of scores below level `i` at position `p + 1`.
    below: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

/// One cell of a [`CalibrationCurve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub level: f64,
    /// 1-based token position.
    pub position: usize,
    pub fraction: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub channel: String,
    pub max_abs_dev: f64,
    pub mean_abs_dev: f64,
}

impl CalibrationCurve {
    pub fn new(levels: QuantileLevels, max_position: usize) -> Self {
        Self {
            below: vec![vec![0.0; levels.len()]; max_position],
            counts: vec![0; max_position],
            levels,
        }
    }

    pub fn levels(&self) -> &QuantileLevels {
        &self.levels
    }

    pub fn max_position(&self) -> usize {
        self.counts.len()
    }

    /// Records one prediction at a 1-based `position` against score `y`.
    /// Positions past the curve's range are ignored.
    pub fn add(&mut self, position: usize, set: &QuantileSet, y: f64) {
        assert!(position >= 1, "positions are 1-based");
        let Some(row) = self.below.get_mut(position - 1) else {
            return;
        };
        for (b, &q) in row.iter_mut().zip(set.values()) {
            *b += if y < q {
                1.0
            } else if y == q {
                0.5
            } else {
                0.0
            };
        }
        self.counts[position - 1] += 1;
    }

    /// Adds a whole trajectory; position `t` is `t + 1`.
    pub fn add_trajectory(&mut self, sets: &[QuantileSet], y: f64) {
        for (t, set) in sets.iter().enumerate() {
            self.add(t + 1, set, y);
        }
    }

    /// Cell-wise sum of two curves over the same levels.
    pub fn merge(mut self, other: &Self) -> Self {
        assert_eq!(self.levels, other.levels);
        if other.counts.len() > self.counts.len() {
            self.below.resize(other.counts.len(), vec![0.0; self.levels.len()]);
            self.counts.resize(other.counts.len(), 0);
        }
        for (p, row) in other.below.iter().enumerate() {
            for (a, b) in self.below[p].iter_mut().zip(row) {
                *a += b;
            }
            self.counts[p] += other.counts[p];
        }
        self
    }

    pub fn count(&self, position: usize) -> usize {
        self.counts.get(position - 1).copied().unwrap_or(0)
    }

    /// Below-fraction of level index `i` at `position`; `None` for empty cells.
    pub fn fraction(&self, i: usize, position: usize) -> Option<f64> {
        let n = self.count(position);
        (n > 0).then(|| self.below[position - 1][i] / n as f64)
    }

    /// Below-fraction of level index `i` pooled over all positions.
    pub fn overall_fraction(&self, i: usize) -> Option<f64> {
        let n: usize = self.counts.iter().sum();
        (n > 0).then(|| self.below.iter().map(|r| r[i]).sum::<f64>() / n as f64)
    }

    /// Nonempty cells in (position, level) order.
    pub fn cells(&self) -> Vec<CalibrationCell> {
        let mut out = Vec::new();
        for (p, &n) in self.counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            for (i, &level) in self.levels.values().iter().enumerate() {
                out.push(CalibrationCell {
                    level,
                    position: p + 1,
                    fraction: self.below[p][i] / n as f64,
                    count: n,
                });
            }
        }
        out
    }

    /// Largest `|fraction - level|` over nonempty cells.
    pub fn max_abs_deviation(&self) -> f64 {
        self.cells().iter().map(|c| (c.fraction - c.level).abs()).fold(0.0, f64::max)
    }

    /// Mean `|fraction - level|` over nonempty cells.
    pub fn mean_abs_deviation(&self) -> f64 {
        let cells = self.cells();
        if cells.is_empty() {
            return 0.0;
        }
        cells.iter().map(|c| (c.fraction - c.level).abs()).sum::<f64>() / cells.len() as f64
    }

    /// Largest deviation of the position-pooled curve.
    pub fn overall_max_abs_deviation(&self) -> f64 {
        self.levels
            .values()
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| self.overall_fraction(i).map(|f| (f - a).abs()))
            .fold(0.0, f64::max)
    }

    pub fn summary(&self, channel: &str) -> CalibrationSummary {
        CalibrationSummary {
            channel: channel.to_string(),
            max_abs_dev: self.max_abs_deviation(),
            mean_abs_dev: self.mean_abs_deviation(),
        }
    }

    /// Writes the `level,position,fraction,count` CSV.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "level,position,fraction,count")?;
        for c in self.cells() {
            writeln!(w, "{},{},{},{}", c.level, c.position, c.fraction, c.count)?;
        }
        Ok(())
    }
}

/// Calibration of a head on its validation examples' own features.
pub fn global_calibration(head: &QuantileHead, validation: &[ScoredExample], channel: &str) -> Result<CalibrationCurve> {
    if validation.is_empty() {
        return Err(Error::Domain("validation set is empty".into()));
    }
    let parts: Vec<CalibrationCurve> = validation
        .par_chunks(256)
        .map(|chunk| {
            let mut curve = CalibrationCurve::new(head.levels().clone(), MAX_TOKENS);
            for ex in chunk {
                curve.add_trajectory(&head.predict(&ex.features)?, ex.score(channel)?);
            }
            Ok(curve)
        })
        .collect::<Result<_>>()?;
    Ok(fold_curves(parts, head.levels()))
}

/// Calibration of any forecaster on `(tokens, score)` pairs.
pub fn forecaster_calibration<F: QuantileForecaster + ?Sized>(
    forecaster: &F,
    validation: &[(Vec<String>, f64)],
) -> Result<CalibrationCurve> {
    if validation.is_empty() {
        return Err(Error::Domain("validation set is empty".into()));
    }
    let parts: Vec<CalibrationCurve> = validation
        .par_chunks(256)
        .map(|chunk| {
            let mut curve = CalibrationCurve::new(forecaster.levels().clone(), MAX_TOKENS);
            for (tokens, y) in chunk {
                curve.add_trajectory(&forecaster.trajectory(tokens)?, *y);
            }
            Ok(curve)
        })
        .collect::<Result<_>>()?;
    Ok(fold_curves(parts, forecaster.levels()))
}

fn fold_curves(parts: Vec<CalibrationCurve>, levels: &QuantileLevels) -> CalibrationCurve {
    parts
        .into_iter()
        .fold(CalibrationCurve::new(levels.clone(), MAX_TOKENS), |acc, c| acc.merge(&c))
}

/// A frequent validation prefix with empirical and predicted quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixStats {
    pub prefix: Vec<String>,
    pub count: usize,
    /// Type-7 empirical quantiles of the end scores of sentences with this
    /// prefix, at the forecaster's levels.
    pub empirical: Vec<f64>,
    pub predicted: QuantileSet,
    /// `max_i |empirical_i - predicted_i|`.
    pub max_deviation: f64,
}

/// Largest absolute difference between a predicted set and reference values.
pub fn max_deviation(predicted: &QuantileSet, reference: &[f64]) -> f64 {
    predicted
        .values()
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// The `top_n` most frequent prefixes of at least two tokens, most frequent
/// first (ties in lexicographic token order).
pub fn frequent_prefixes(validation: &[(Vec<String>, f64)], top_n: usize) -> Vec<(Vec<String>, Vec<f64>)> {
    let mut groups: HashMap<&[String], Vec<f64>> = HashMap::new();
    for (tokens, y) in validation {
        for len in 2..=tokens.len() {
            groups.entry(&tokens[..len]).or_default().push(*y);
        }
    }
    let mut ranked: Vec<(&[String], Vec<f64>)> = groups.into_iter().collect();
    ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(top_n);
    ranked.into_iter().map(|(p, ys)| (p.to_vec(), ys)).collect()
}

/// Compares predicted and empirical quantiles on the `top_n` most frequent
/// prefixes. Returns the per-prefix stats and their average max deviation.
pub fn prefix_compare<F: QuantileForecaster + ?Sized>(
    forecaster: &F,
    validation: &[(Vec<String>, f64)],
    top_n: usize,
) -> Result<(Vec<PrefixStats>, f64)> {
    if top_n == 0 {
        return Err(Error::Domain("top_n must be at least 1".into()));
    }
    let stats: Vec<PrefixStats> = frequent_prefixes(validation, top_n)
        .into_par_iter()
        .map(|(prefix, mut ys)| {
            ys.sort_by(f64::total_cmp);
            let empirical: Vec<f64> = forecaster
                .levels()
                .values()
                .iter()
                .map(|&a| quantile_type7(&ys, a))
                .collect();
            let predicted = forecaster.trajectory(&prefix)?.pop().expect("prefix has tokens");
            Ok(PrefixStats {
                max_deviation: max_deviation(&predicted, &empirical),
                count: ys.len(),
                prefix,
                empirical,
                predicted,
            })
        })
        .collect::<Result<_>>()?;
    let avg = stats.iter().map(|s| s.max_deviation).sum::<f64>() / stats.len().max(1) as f64;
    Ok((stats, avg))
}

/// Compares `forecaster` with a `reference` forecaster (for instance the
/// exact grammar oracle) on the given prefixes. Returns the per-prefix
/// stats, with the reference values as `empirical` and `count` zero, and
/// their average max deviation.
pub fn reference_compare<F, R>(forecaster: &F, reference: &R, prefixes: &[Vec<String>]) -> Result<(Vec<PrefixStats>, f64)>
where
    F: QuantileForecaster + ?Sized,
    R: QuantileForecaster + ?Sized,
{
    if prefixes.is_empty() {
        return Err(Error::Domain("no prefixes to compare".into()));
    }
    let stats: Vec<PrefixStats> = prefixes
        .par_iter()
        .map(|prefix| {
            let reference = reference.trajectory(prefix)?.pop().expect("prefix has tokens");
            let predicted = forecaster.trajectory(prefix)?.pop().expect("prefix has tokens");
            Ok(PrefixStats {
                max_deviation: max_deviation(&predicted, reference.values()),
                count: 0,
                prefix: prefix.clone(),
                empirical: reference.values().to_vec(),
                predicted,
            })
        })
        .collect::<Result<_>>()?;
    let avg = stats.iter().map(|s| s.max_deviation).sum::<f64>() / stats.len() as f64;
    Ok((stats, avg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ScoreRange;

    fn flat(v: f64) -> QuantileSet {
        QuantileSet::new(QuantileLevels::standard(), vec![v; 10], ScoreRange::SIGNED)
    }

    fn linear() -> QuantileSet {
        let levels = QuantileLevels::standard();
        let values = levels.values().to_vec();
        QuantileSet::new(levels, values, ScoreRange::UNIT)
    }

    #[test]
    fn ties_count_half() {
        let mut c = CalibrationCurve::new(QuantileLevels::standard(), 4);
        c.add(1, &flat(0.0), 0.0);
        c.add(1, &flat(0.0), -1.0);
        for i in 0..10 {
            assert_eq!(c.fraction(i, 1), Some(0.75));
        }
        assert_eq!(c.fraction(0, 2), None);
        assert_eq!(c.cells().len(), 10);
    }

    #[test]
    fn uniform_scores_against_true_uniform_quantiles_are_calibrated() {
        let mut c = CalibrationCurve::new(QuantileLevels::standard(), 1);
        let n = 10_000;
        for k in 0..n {
            c.add(1, &linear(), (k as f64 + 0.5) / n as f64);
        }
        assert!(c.max_abs_deviation() < 1e-3);
        // Fractions are nondecreasing in level.
        let f: Vec<f64> = (0..10).map(|i| c.fraction(i, 1).unwrap()).collect();
        assert!(f.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn pooled_curve_is_the_count_weighted_average_of_positions() {
        let mut c = CalibrationCurve::new(QuantileLevels::standard(), 3);
        let ys = [0.05, 0.32, 0.9, 0.41, 0.77, 0.12, 0.6];
        for (k, &y) in ys.iter().enumerate() {
            c.add(1, &linear(), y);
            if k % 2 == 0 {
                c.add(2, &flat(0.5), y);
            }
            if k % 3 == 0 {
                c.add(3, &flat(0.1), y);
            }
        }
        for i in 0..10 {
            let total: usize = (1..=3).map(|p| c.count(p)).sum();
            let weighted: f64 = (1..=3)
                .map(|p| c.fraction(i, p).unwrap() * c.count(p) as f64)
                .sum::<f64>()
                / total as f64;
            assert!((weighted - c.overall_fraction(i).unwrap()).abs() < 1e-15);
        }
        assert!(c.count(1) >= c.count(2) && c.count(2) >= c.count(3));
    }

    #[test]
    fn single_occurrence_prefix_has_constant_empirical_quantiles() {
        let val = vec![
            (vec!["a".to_string(), "b".to_string(), "c".to_string()], 0.3),
            (vec!["a".to_string(), "b".to_string(), "d".to_string()], -0.1),
        ];
        let prefixes = frequent_prefixes(&val, 10);
        assert_eq!(prefixes[0].0, vec!["a", "b"]);
        assert_eq!(prefixes[0].1.len(), 2);
        let once = prefixes.iter().find(|p| p.0 == ["a", "b", "c"]).unwrap();
        let ys = &once.1;
        for a in QuantileLevels::standard().values() {
            assert_eq!(quantile_type7(ys, *a), 0.3);
        }
    }

    #[test]
    fn csv_has_one_row_per_nonempty_cell() {
        let mut c = CalibrationCurve::new(QuantileLevels::standard(), 32);
        c.add_trajectory(&[flat(0.0), flat(0.0)], 0.5);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 21);
        assert!(text.starts_with("level,position,fraction,count\n0.05,1,0,1"));
    }
}
