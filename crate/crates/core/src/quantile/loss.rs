//! Huber quantile (smoothed pinball) loss.

/// Huber function: `0.5 u²` inside `[-k, k]`, `(|u| - 0.5k)·k` outside.
pub fn huber(u: f64, k: f64) -> f64 {
    let a = u.abs();
    if a <= k {
        0.5 * u * u
    } else {
        (a - 0.5 * k) * k
    }
}

/// Derivative of [`huber`] with respect to `u`.
pub fn huber_grad(u: f64, k: f64) -> f64 {
    if u.abs() <= k {
        u
    } else {
        k * u.signum()
    }
}

/// `|1{u<0} - α| · huber(u, k)` where `u = y - q`: underestimates (`u > 0`)
/// are weighted by `α`, overestimates by `1 - α`.
pub fn pinball_huber(u: f64, alpha: f64, k: f64) -> f64 {
    asymmetry(u, alpha) * huber(u, k)
}

/// Derivative of [`pinball_huber`] with respect to `u`.
pub fn pinball_huber_grad(u: f64, alpha: f64, k: f64) -> f64 {
    asymmetry(u, alpha) * huber_grad(u, k)
}

fn asymmetry(u: f64, alpha: f64) -> f64 {
    if u < 0.0 {
        1.0 - alpha
    } else {
        alpha
    }
}

/// Minimizes `Σ_y pinball_huber(y - q, α, k)` over a free scalar `q` for
/// every level, by bisection on the (monotone) derivative.
pub fn minimize_free_quantiles(samples: &[f64], levels: &[f64], k: f64) -> Vec<f64> {
    assert!(!samples.is_empty());
    let lo0 = samples.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi0 = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    levels
        .iter()
        .map(|&alpha| {
            // d/dq Σ ρ(y - q) = -Σ ρ'(y - q), nondecreasing in q.
            let slope = |q: f64| -> f64 { -samples.iter().map(|&y| pinball_huber_grad(y - q, alpha, k)).sum::<f64>() };
            let (mut lo, mut hi) = (lo0, hi0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}
