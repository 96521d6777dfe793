//! Trajectory analytics: interquartile variance series, variance-peak scans
//! with a per-token share table, and median transitions at a pivot token.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calib::CalibrationCurve;
use crate::quantile::{QuantileForecaster, QuantileSet};
use crate::stats::percentile;
use crate::{Error, Result};

/// Predicted quantile sets along one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tokens: Vec<String>,
    pub sets: Vec<QuantileSet>,
    /// Realized end score, when known.
    pub score: Option<f64>,
}

impl Trajectory {
    pub fn new(tokens: Vec<String>, sets: Vec<QuantileSet>, score: Option<f64>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Domain("trajectory has no tokens".into()));
        }
        if tokens.len() != sets.len() {
            return Err(Error::DimMismatch {
                expected: tokens.len(),
                found: sets.len(),
            });
        }
        Ok(Self { tokens, sets, score })
    }

    pub fn predict<F: QuantileForecaster + ?Sized>(forecaster: &F, tokens: Vec<String>, score: Option<f64>) -> Result<Self> {
        let sets = forecaster.trajectory(&tokens)?;
        Self::new(tokens, sets, score)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn medians(&self) -> Vec<f64> {
        self.sets.iter().map(QuantileSet::median).collect()
    }

    pub fn variance_series(&self) -> Vec<f64> {
        variance_series(&self.sets)
    }
}

/// Interquartile width per position.
pub fn variance_series(sets: &[QuantileSet]) -> Vec<f64> {
    sets.iter().map(QuantileSet::iqr).collect()
}

/// Interior local maxima of `v`. A plateau counts once, at its leftmost
/// index, when both neighbours of the plateau are strictly lower.
pub fn local_peaks(v: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < v.len() {
        if v[i] > v[i - 1] {
            let mut j = i;
            while j + 1 < v.len() && v[j + 1] == v[i] {
                j += 1;
            }
            if j + 1 < v.len() && v[j + 1] < v[i] {
                peaks.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariancePeak {
    pub sentence: usize,
    /// 0-based token position.
    pub position: usize,
    pub token: String,
    pub value: f64,
    /// Up to three tokens before the peak.
    pub preceding: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenShare {
    pub token: String,
    pub peaks: usize,
    pub occurrences: usize,
    /// `peaks / occurrences`.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakScan {
    pub threshold: f64,
    pub peaks: Vec<VariancePeak>,
    /// Tokens with at least one peak, by share, then peak count, then token.
    pub table: Vec<TokenShare>,
}

/// Finds local variance maxima above the `(100 - top_pct)` percentile of
/// per-sentence maximum variance.
pub fn scan_peaks(trajectories: &[Trajectory], top_pct: f64) -> Result<PeakScan> {
    if !(top_pct > 0.0 && top_pct <= 100.0) {
        return Err(Error::Config(format!("top_pct must lie in (0, 100], got {top_pct}")));
    }
    if trajectories.is_empty() {
        return Err(Error::Domain("no trajectories to scan".into()));
    }
    let series: Vec<Vec<f64>> = trajectories.iter().map(Trajectory::variance_series).collect();
    let maxima: Vec<f64> = series.iter().map(|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let threshold = percentile(&maxima, 100.0 - top_pct);

    let mut peaks = Vec::new();
    let mut occurrences: BTreeMap<&str, usize> = BTreeMap::new();
    let mut peak_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (s, (traj, v)) in trajectories.iter().zip(&series).enumerate() {
        for t in &traj.tokens {
            *occurrences.entry(t).or_default() += 1;
        }
        for p in local_peaks(v) {
            if v[p] > threshold {
                *peak_counts.entry(&traj.tokens[p]).or_default() += 1;
                peaks.push(VariancePeak {
                    sentence: s,
                    position: p,
                    token: traj.tokens[p].clone(),
                    value: v[p],
                    preceding: traj.tokens[p.saturating_sub(3)..p].to_vec(),
                });
            }
        }
    }
    let mut table: Vec<TokenShare> = peak_counts
        .into_iter()
        .map(|(token, peaks)| {
            let occurrences = occurrences[token];
            TokenShare {
                token: token.to_string(),
                peaks,
                occurrences,
                share: peaks as f64 / occurrences as f64,
            }
        })
        .collect();
    table.sort_by(|a, b| {
        b.share
            .total_cmp(&a.share)
            .then(b.peaks.cmp(&a.peaks))
            .then(a.token.cmp(&b.token))
    });
    Ok(PeakScan { threshold, peaks, table })
}

/// Predicted medians around one pivot occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub sentence: usize,
    /// 0-based position of the pivot.
    pub position: usize,
    /// Median at the previous position (the marginal median at position 0).
    pub before: f64,
    /// Median at the pivot.
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub count: usize,
    /// Share of transitions whose median moves toward the opposite sign.
    pub flipped: f64,
    pub mean_before: f64,
    pub mean_at: f64,
}

/// Median transitions at every occurrence of `pivot`.
pub fn transitions(trajectories: &[Trajectory], pivot: &str, marginal_median: f64) -> Vec<Transition> {
    let mut out = Vec::new();
    for (s, traj) in trajectories.iter().enumerate() {
        for (p, tok) in traj.tokens.iter().enumerate() {
            if tok == pivot {
                let before = if p == 0 { marginal_median } else { traj.sets[p - 1].median() };
                out.push(Transition {
                    sentence: s,
                    position: p,
                    before,
                    at: traj.sets[p].median(),
                });
            }
        }
    }
    out
}

pub fn summarize_transitions(transitions: &[Transition]) -> TransitionSummary {
    let n = transitions.len();
    let flipped = transitions
        .iter()
        .filter(|t| (t.before > 0.0 && t.at < t.before) || (t.before < 0.0 && t.at > t.before))
        .count();
    let denom = n.max(1) as f64;
    TransitionSummary {
        count: n,
        flipped: flipped as f64 / denom,
        mean_before: transitions.iter().map(|t| t.before).sum::<f64>() / denom,
        mean_at: transitions.iter().map(|t| t.at).sum::<f64>() / denom,
    }
}

/// Calibration restricted to pivot positions and the one after each pivot.
/// Trajectories without a score are skipped.
pub fn pivot_calibration(trajectories: &[Trajectory], pivot: &str) -> Option<CalibrationCurve> {
    let first = trajectories.first()?;
    let mut curve = CalibrationCurve::new(first.sets[0].levels().clone(), 2);
    for traj in trajectories {
        let Some(y) = traj.score else { continue };
        for (p, tok) in traj.tokens.iter().enumerate() {
            if tok == pivot {
                curve.add(1, &traj.sets[p], y);
                if let Some(next) = traj.sets.get(p + 1) {
                    curve.add(2, next, y);
                }
            }
        }
    }
    Some(curve)
}
