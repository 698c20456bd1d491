//! Token-level classification metrics, achieved ratios and compression
//! latency over a labeled corpus.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compressor::{rank, CompressionRequest, Compressor};
use crate::corpus::{Label, LabeledSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::model::Model;

/// Confusion counts for the preserve class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[bool], gold: &[bool]) -> Self {
        assert_eq!(predicted.len(), gold.len(), "one prediction per gold label");
        let mut c = Confusion::default();
        for (&p, &g) in predicted.iter().zip(gold) {
            match (p, g) {
                (true, true) => c.true_positive += 1,
                (true, false) => c.false_positive += 1,
                (false, true) => c.false_negative += 1,
                (false, false) => c.true_negative += 1,
            }
        }
        c
    }

    pub fn merge(self, other: Confusion) -> Confusion {
        Confusion {
            true_positive: self.true_positive + other.true_positive,
            false_positive: self.false_positive + other.false_positive,
            false_negative: self.false_negative + other.false_negative,
            true_negative: self.true_negative + other.true_negative,
        }
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    pub fn metrics(&self) -> TokenMetrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.true_positive, self.true_positive + self.false_positive);
        let recall = ratio(self.true_positive, self.true_positive + self.false_negative);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        TokenMetrics {
            accuracy: ratio(self.true_positive + self.true_negative, self.total()),
            precision,
            recall,
            f1,
        }
    }
}

/// Precision, recall and F1 refer to the preserve class. An empty
/// denominator yields 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

/// Nearest-rank percentile of sorted `values`, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyStats {
    /// `None` for an empty sample.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(LatencyStats {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50: percentile(&sorted, 0.5),
            p95: percentile(&sorted, 0.95),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Kept-set quality against gold labels for one value of α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    pub tokens: usize,
    /// Classifier decisions (preserve iff p ≥ 0.5) against gold labels.
    pub classification: TokenMetrics,
    /// Kept tokens against gold labels.
    pub kept: TokenMetrics,
    pub tau: f64,
    pub alpha: f64,
    /// Mean over documents of input tokens over kept tokens.
    pub mean_ratio: f64,
    /// Compression wall time per document, in seconds, in input order.
    pub latency_seconds: Vec<f64>,
    pub latency: Option<LatencyStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_sweep: Option<Vec<AlphaPoint>>,
}

fn gold_mask(seq: &LabeledSequence) -> Vec<bool> {
    seq.labels().iter().map(|&l| l == Label::Preserve).collect()
}

fn kept_mask(n: usize, kept: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &i in kept {
        mask[i] = true;
    }
    mask
}

/// Compresses every document, timing each call, and scores the classifier
/// and the kept sets. Documents run in parallel; results keep input order.
pub fn evaluate(
    model: &Model,
    vocab: &Vocabulary,
    dataset: &[LabeledSequence],
    request: &CompressionRequest,
) -> Result<EvalReport> {
    request.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    let compressor = Compressor::new(model, vocab);
    let per_doc = dataset
        .par_iter()
        .map(|seq| {
            let start = Instant::now();
            let out = compressor.compress_tokens(seq.tokens(), request)?;
            let seconds = start.elapsed().as_secs_f64();
            let gold = gold_mask(seq);
            let predicted: Vec<bool> = out.records.iter().map(|r| r.p >= 0.5).collect();
            let kept: Vec<bool> = out.records.iter().map(|r| r.kept).collect();
            Ok((
                Confusion::from_predictions(&predicted, &gold),
                Confusion::from_predictions(&kept, &gold),
                out.ratio,
                seconds,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let classification = per_doc.iter().fold(Confusion::default(), |a, d| a.merge(d.0));
    let kept = per_doc.iter().fold(Confusion::default(), |a, d| a.merge(d.1));
    let latency_seconds: Vec<f64> = per_doc.iter().map(|d| d.3).collect();
    Ok(EvalReport {
        documents: dataset.len(),
        tokens: classification.total(),
        classification: classification.metrics(),
        kept: kept.metrics(),
        tau: request.tau,
        alpha: request.alpha,
        mean_ratio: per_doc.iter().map(|d| d.2).sum::<f64>() / dataset.len() as f64,
        latency: LatencyStats::from_samples(&latency_seconds),
        latency_seconds,
        alpha_sweep: None,
    })
}

/// The α grid `0, 0.1, …, 1`.
pub fn alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Kept-set precision, recall and F1 against gold labels for each α, reusing
/// one forward pass per document.
pub fn alpha_sweep(
    model: &Model,
    vocab: &Vocabulary,
    dataset: &[LabeledSequence],
    request: &CompressionRequest,
    alphas: &[f64],
) -> Result<Vec<AlphaPoint>> {
    let per_doc = dataset
        .par_iter()
        .map(|seq| {
            let gold = gold_mask(seq);
            let (acts, probs) = model.predict(&vocab.encode(seq.tokens()))?;
            alphas
                .iter()
                .map(|&alpha| {
                    let req = CompressionRequest { alpha, ..*request };
                    req.validate()?;
                    let ranking = rank(acts.last(), &probs, &req)?;
                    Ok(Confusion::from_predictions(&kept_mask(seq.len(), &ranking.kept), &gold))
                })
                .collect::<Result<Vec<Confusion>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(j, &alpha)| {
            let c = per_doc.iter().fold(Confusion::default(), |a, d| a.merge(d[j]));
            let m = c.metrics();
            AlphaPoint {
                alpha,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
            }
        })
        .collect())
}

/// Least-squares slope of `ln t` against `ln n`.
pub fn scaling_exponent(sizes: &[f64], times: &[f64]) -> f64 {
    assert_eq!(sizes.len(), times.len());
    let xs: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = times.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}
