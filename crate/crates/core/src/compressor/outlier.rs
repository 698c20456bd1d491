//! Z-score outlier scores computed separately within each predicted class.

use crate::tensor::Tensor;

/// Added to every per-dimension standard deviation before dividing.
pub const ZSCORE_EPS: f64 = 1e-8;

/// Tokens split by the classifier: `p ≥ 0.5` goes to `preserve`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassPartition {
    pub preserve: Vec<usize>,
    pub discard: Vec<usize>,
}

pub fn partition(probabilities: &[f64]) -> ClassPartition {
    let mut out = ClassPartition::default();
    for (i, &p) in probabilities.iter().enumerate() {
        if p >= 0.5 {
            out.preserve.push(i);
        } else {
            out.discard.push(i);
        }
    }
    out
}

/// Statistics and scores for one category of tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryScores {
    /// Member token positions, ascending.
    pub indices: Vec<usize>,
    /// Per-dimension mean over members.
    pub mean: Vec<f64>,
    /// Per-dimension population standard deviation over members.
    pub std: Vec<f64>,
    /// Standardized vector of each member, aligned with `indices`.
    pub z: Vec<Vec<f64>>,
    /// `‖z‖₂` per member.
    pub scores: Vec<f64>,
    /// Min-max normalized scores in `[0, 1]`.
    pub normalized: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

/// Scores the rows of `h` listed in `indices` against their own mean and
/// standard deviation.
///
/// Dimensions that are exactly constant over the category get `z = 0`. When
/// every score is equal (including singletons) all normalized scores are 0.
pub fn outlier_scores(h: &Tensor, indices: &[usize]) -> CategoryScores {
    let d = h.cols();
    let n = indices.len();
    if n == 0 {
        return CategoryScores {
            indices: Vec::new(),
            mean: vec![0.0; d],
            std: vec![0.0; d],
            z: Vec::new(),
            scores: Vec::new(),
            normalized: Vec::new(),
            min: 0.0,
            max: 0.0,
        };
    }

    let mut mean = vec![0.0; d];
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for &i in indices {
        for (k, &v) in h.row(i).iter().enumerate() {
            mean[k] += v;
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let constant: Vec<bool> = lo.iter().zip(&hi).map(|(a, b)| a == b).collect();
    for k in 0..d {
        mean[k] = if constant[k] { lo[k] } else { mean[k] / n as f64 };
    }
    let mut std = vec![0.0; d];
    for &i in indices {
        for (k, &v) in h.row(i).iter().enumerate() {
            std[k] += (v - mean[k]).powi(2);
        }
    }
    for s in &mut std {
        *s = (*s / n as f64).sqrt();
    }

    let z: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| {
            h.row(i)
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    if constant[k] {
                        0.0
                    } else {
                        (v - mean[k]) / (std[k] + ZSCORE_EPS)
                    }
                })
                .collect()
        })
        .collect();
    let scores: Vec<f64> = z
        .iter()
        .map(|zi| zi.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let normalized = if max > min {
        scores.iter().map(|s| (s - min) / (max - min)).collect()
    } else {
        vec![0.0; n]
    };

    CategoryScores {
        indices: indices.to_vec(),
        mean,
        std,
        z,
        scores,
        normalized,
        min,
        max,
    }
}

/// Outlier scores for a whole sequence, assembled from its categories.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierScores {
    pub categories: Vec<CategoryScores>,
    /// `s` per token in sequence order.
    pub scores: Vec<f64>,
    /// `s_norm` per token in sequence order.
    pub normalized: Vec<f64>,
}

impl OutlierScores {
    fn from_categories(n: usize, categories: Vec<CategoryScores>) -> Self {
        let mut scores = vec![0.0; n];
        let mut normalized = vec![0.0; n];
        for c in &categories {
            for (j, &i) in c.indices.iter().enumerate() {
                scores[i] = c.scores[j];
                normalized[i] = c.normalized[j];
            }
        }
        OutlierScores {
            categories,
            scores,
            normalized,
        }
    }
}

/// Scores each nonempty side of `partition` on its own.
pub fn partitioned_outlier_scores(h: &Tensor, partition: &ClassPartition) -> OutlierScores {
    let categories = [&partition.preserve, &partition.discard]
        .into_iter()
        .filter(|c| !c.is_empty())
        .map(|c| outlier_scores(h, c))
        .collect();
    OutlierScores::from_categories(h.rows(), categories)
}

/// Scores all tokens as a single category, ignoring the classifier split.
pub fn whole_set_outlier_scores(h: &Tensor) -> OutlierScores {
    let all: Vec<usize> = (0..h.rows()).collect();
    let categories = if all.is_empty() {
        Vec::new()
    } else {
        vec![outlier_scores(h, &all)]
    };
    OutlierScores::from_categories(h.rows(), categories)
}
