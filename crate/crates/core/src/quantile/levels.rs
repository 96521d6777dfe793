use crate::corpus::ScoreRange;

/// Quantile levels of a head, strictly increasing inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileLevels {
    values: Vec<f64>,
}

impl QuantileLevels {
    /// The ten equally spaced levels 0.05, 0.15, …, 0.95.
    pub fn standard() -> Self {
        Self::equally_spaced(10)
    }

    /// Midpoints of `n` equal-width bins of `(0, 1)`.
    pub fn equally_spaced(n: usize) -> Self {
        assert!(n >= 1);
        let values = (0..n).map(|i| (2 * i + 1) as f64 / (2 * n) as f64).collect();
        Self { values }
    }

    pub fn from_values(values: Vec<f64>) -> Option<Self> {
        let ok = !values.is_empty()
            && values.iter().all(|&a| a > 0.0 && a < 1.0)
            && values.windows(2).all(|w| w[0] < w[1]);
        ok.then_some(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Predicted quantile values for one token position.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSet {
    levels: QuantileLevels,
    values: Vec<f64>,
    range: ScoreRange,
}

impl QuantileSet {
    /// Wraps raw values, sorting them nondecreasing (non-crossing repair).
    pub fn new(levels: QuantileLevels, mut values: Vec<f64>, range: ScoreRange) -> Self {
        assert_eq!(levels.len(), values.len(), "one value per level");
        values.sort_by(f64::total_cmp);
        Self { levels, values, range }
    }

    pub fn levels(&self) -> &QuantileLevels {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn range(&self) -> ScoreRange {
        self.range
    }

    /// Piecewise-linear quantile function; constant beyond the end levels.
    pub fn value_at(&self, alpha: f64) -> f64 {
        let lv = self.levels.values();
        let n = lv.len();
        if alpha <= lv[0] {
            return self.values[0];
        }
        if alpha >= lv[n - 1] {
            return self.values[n - 1];
        }
        let i = lv.partition_point(|&l| l <= alpha) - 1;
        if lv[i] == alpha {
            return self.values[i];
        }
        let frac = (alpha - lv[i]) / (lv[i + 1] - lv[i]);
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    /// Inverse of [`value_at`](Self::value_at): the largest level whose
    /// interpolated quantile does not exceed `target`. Returns 0 when every
    /// quantile lies above the target and 1 when every quantile lies below.
    pub fn level_at(&self, target: f64) -> f64 {
        let lv = self.levels.values();
        let v = &self.values;
        let n = v.len();
        if target < v[0] {
            return 0.0;
        }
        if target > v[n - 1] {
            return 1.0;
        }
        let i = v.partition_point(|&x| x <= target) - 1;
        if i == n - 1 {
            return lv[n - 1];
        }
        let frac = (target - v[i]) / (v[i + 1] - v[i]);
        lv[i] + frac * (lv[i + 1] - lv[i])
    }

    pub fn median(&self) -> f64 {
        self.value_at(0.5)
    }

    /// Interquartile width `|q(0.75) - q(0.25)|`.
    pub fn iqr(&self) -> f64 {
        (self.value_at(0.75) - self.value_at(0.25)).abs()
    }

    /// Quantiles of the negated variable: level `a` maps to `-q(1 - a)`.
    /// Requires symmetric levels, which equally spaced grids are.
    pub fn negated(&self) -> Self {
        let values = self.values.iter().rev().map(|v| -v).collect();
        Self {
            levels: self.levels.clone(),
            values,
            range: self.range.negated(),
        }
    }
}
