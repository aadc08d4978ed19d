//! Uncertainty scores of a single predictive distribution.

use crate::pool::ProbVector;

/// Shannon entropy in nats, with `0 ln 0 = 0`. Higher is more uncertain.
pub fn entropy_score(p: &ProbVector) -> f64 {
    entropy(p.as_slice())
}

pub(crate) fn entropy(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|v| -v * v.ln()).sum();
    // Rounding can leave a one-hot vector at -0.0 or a few ulps below zero.
    h.max(0.0)
}

/// `1 - max_j p_j`. Higher is more uncertain.
pub fn least_confidence_score(p: &ProbVector) -> f64 {
    1.0 - p.as_slice().iter().copied().fold(0.0, f64::max)
}

/// `Σ_j (1 - p_j)` evaluated literally. For any probability vector this is
/// `c - 1`, so it cannot rank candidates; kept for comparison only.
pub fn least_confidence_literal(p: &ProbVector) -> f64 {
    p.as_slice().iter().map(|v| 1.0 - v).sum()
}

/// Gap between the two largest probabilities. Lower is more uncertain.
pub fn margin_score(p: &ProbVector) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in p.as_slice() {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    if second == f64::NEG_INFINITY {
        // A single class has no runner-up.
        return 1.0;
    }
    first - second
}
