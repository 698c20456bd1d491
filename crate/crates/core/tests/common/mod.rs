//! Brute-force reference implementations shared by the integration tests.
#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokprune::Tensor;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean cosine over every cross pair, by explicit double loop.
pub fn pairwise_similarity(h: &Tensor, p: &[usize], d: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in p {
        for &j in d {
            let (a, b) = (h.row(i), h.row(j));
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            total += dot / (norm(a).max(1e-8) * norm(b).max(1e-8));
        }
    }
    total / (p.len() * d.len()) as f64
}

/// `(s, s_norm)` for one category, aligned with `members`.
pub fn zscore_oracle(h: &Tensor, members: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = members.len() as f64;
    let d = h.cols();
    let mut z = vec![vec![0.0; d]; members.len()];
    for k in 0..d {
        let col: Vec<f64> = members.iter().map(|&i| h.get(i, k)).collect();
        if col.iter().all(|&v| v == col[0]) {
            continue;
        }
        let mu = col.iter().sum::<f64>() / n;
        let sigma = (col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
        for (j, v) in col.iter().enumerate() {
            z[j][k] = (v - mu) / (sigma + 1e-8);
        }
    }
    let s: Vec<f64> = z.iter().map(|zi| norm(zi)).collect();
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s_norm = s
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect();
    (s, s_norm)
}

/// Per-token `s_norm` after splitting at `p ≥ 0.5`.
pub fn partitioned_oracle(h: &Tensor, probs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for keep in [true, false] {
        let members: Vec<usize> = (0..probs.len()).filter(|&i| (probs[i] >= 0.5) == keep).collect();
        if members.is_empty() {
            continue;
        }
        let (_, s_norm) = zscore_oracle(h, &members);
        for (j, &i) in members.iter().enumerate() {
            out[i] = s_norm[j];
        }
    }
    out
}

pub fn retained_oracle(n: usize, tau: f64) -> usize {
    let r = (n as f64 * tau + 0.5).floor() as usize;
    r.max(1).min(n)
}

/// Full stable sort by descending metric, then the first `k` positions in
/// ascending order.
pub fn select_oracle(metrics: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..metrics.len()).collect();
    order.sort_by(|&a, &b| metrics[b].partial_cmp(&metrics[a]).unwrap());
    let mut kept: Vec<usize> = order.into_iter().take(k).collect();
    kept.sort();
    kept
}
