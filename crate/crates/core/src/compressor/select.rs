//! Metric fusion and top-n̂ selection.

/// `clamp(round(n·τ), 1, n)`, rounding halves up; 0 for an empty input.
pub fn retained_count(n: usize, tau: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((n as f64 * tau).round() as usize).clamp(1, n)
}

/// `α·p + (1 − α)·s_norm`.
pub fn fuse_one(p: f64, s_norm: f64, alpha: f64) -> f64 {
    alpha * p + (1.0 - alpha) * s_norm
}

pub fn fuse(p: &[f64], s_norm: &[f64], alpha: f64) -> Vec<f64> {
    assert_eq!(p.len(), s_norm.len(), "one outlier score per probability");
    p.iter()
        .zip(s_norm)
        .map(|(&p, &s)| fuse_one(p, s, alpha))
        .collect()
}

/// Positions of the `k` largest metrics in ascending position order. Equal
/// metrics favor the earlier position.
pub fn select_top(metrics: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(metrics.len());
    if k == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..metrics.len()).collect();
    let rank = |a: &usize, b: &usize| metrics[*b].total_cmp(&metrics[*a]).then(a.cmp(b));
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, rank);
        order.truncate(k);
    }
    order.sort_unstable();
    order
}

/// Keeps `retained_count(metrics.len(), tau)` tokens.
pub fn select(metrics: &[f64], tau: f64) -> Vec<usize> {
    select_top(metrics, retained_count(metrics.len(), tau))
}
