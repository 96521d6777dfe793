//! Small statistics helpers shared by the evaluation modules.

use statrs::distribution::{ContinuousCDF, Normal};

/// Empirical quantile with linear interpolation of order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending and nonempty.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile (0..=100) of an unsorted sample, type 7.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_type7(&sorted, pct / 100.0)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Pearson correlation; NaN when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for "first sample tends to be smaller".
    pub p_less: f64,
}

/// Mann-Whitney U test with midranks, tie-corrected variance and the normal
/// approximation (with continuity correction).
pub fn mann_whitney_less(a: &[f64], b: &[f64]) -> MannWhitney {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    let n = pooled.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        for item in &pooled[i..=j] {
            if item.1 {
                rank_sum_a += midrank;
            }
        }
        i = j + 1;
    }

    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    let nn = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    let z = if var > 0.0 { (u - mu + 0.5) / var.sqrt() } else { 0.0 };
    let normal = Normal::standard();
    MannWhitney {
        u,
        z,
        p_less: normal.cdf(z),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_matches_hand_values() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_type7(&s, 0.0), 1.0);
        assert_eq!(quantile_type7(&s, 1.0), 4.0);
        assert!((quantile_type7(&s, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_type7(&s, 0.25) - 1.75).abs() < 1e-15);
        assert_eq!(quantile_type7(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn pearson_of_linear_relation_is_one() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        assert!((pearson(&x, &y) - 1.0).abs() < 1e-12);
        let y_neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y_neg) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn mann_whitney_detects_shift() {
        let a: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..50).map(|i| i as f64 * 0.1 + 2.0).collect();
        let r = mann_whitney_less(&a, &b);
        assert!(r.p_less < 1e-6);
        let r = mann_whitney_less(&b, &a);
        assert!(r.p_less > 0.99);
    }

    #[test]
    fn mann_whitney_u_hand_count() {
        // a = {1, 3}, b = {2, 4}: pairs with a > b: (3,2) → U = 1.
        let r = mann_whitney_less(&[1.0, 3.0], &[2.0, 4.0]);
        assert_eq!(r.u, 1.0);
    }
}
