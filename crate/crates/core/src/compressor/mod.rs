//! Compression: partition tokens by predicted class, score how much each
//! token stands out inside its class, fuse that with the preserve probability
//! and keep the highest-scoring tokens.

mod outlier;
mod select;

pub use outlier::{
    outlier_scores, partition, partitioned_outlier_scores, whole_set_outlier_scores,
    CategoryScores, ClassPartition, OutlierScores, ZSCORE_EPS,
};
pub use select::{fuse, fuse_one, retained_count, select, select_top};

use serde::{Deserialize, Serialize};

use crate::corpus::{detokenize, tokenize, Vocabulary};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// How outlier scores are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierScoring {
    /// Separately within the predicted preserve and discard classes.
    #[default]
    PerClass,
    /// Over all tokens at once.
    WholeSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionRequest {
    /// Fraction of tokens to keep, in `(0, 1]`.
    pub tau: f64,
    /// Weight of the preserve probability against the outlier score.
    pub alpha: f64,
    #[serde(default)]
    pub scoring: OutlierScoring,
}

impl CompressionRequest {
    pub fn new(tau: f64, alpha: f64) -> Result<Self> {
        let req = CompressionRequest {
            tau,
            alpha,
            scoring: OutlierScoring::PerClass,
        };
        req.validate()?;
        Ok(req)
    }

    /// A ratio `r ≥ 1` keeps a fraction `1/r` of the tokens.
    pub fn from_ratio(ratio: f64, alpha: f64) -> Result<Self> {
        if !(ratio >= 1.0 && ratio.is_finite()) {
            return Err(Error::Config(format!("compression ratio must be >= 1, got {ratio}")));
        }
        Self::new(1.0 / ratio, alpha)
    }

    pub fn with_scoring(self, scoring: OutlierScoring) -> Self {
        CompressionRequest { scoring, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn n_hat(&self, n: usize) -> usize {
        retained_count(n, self.tau)
    }
}

/// Per-token scores of one compression run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMetricRecord {
    pub index: usize,
    pub surface: String,
    pub p: f64,
    pub s_norm: f64,
    pub m: f64,
    pub kept: bool,
}

/// Scores and kept positions for a sequence, before surfaces are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub s_norm: Vec<f64>,
    pub metrics: Vec<f64>,
    /// Ascending positions.
    pub kept: Vec<usize>,
}

/// Scores tokens from their last-layer rows and preserve probabilities.
pub fn rank(last: &Tensor, probabilities: &[f64], request: &CompressionRequest) -> Result<Ranking> {
    if last.rows() != probabilities.len() {
        return Err(Error::dim(
            "rank",
            format!("{} rows vs {} probabilities", last.rows(), probabilities.len()),
        ));
    }
    let scores = match request.scoring {
        OutlierScoring::PerClass => partitioned_outlier_scores(last, &partition(probabilities)),
        OutlierScoring::WholeSet => whole_set_outlier_scores(last),
    };
    let metrics = fuse(probabilities, &scores.normalized, request.alpha);
    let kept = select(&metrics, request.tau);
    Ok(Ranking {
        s_norm: scores.normalized,
        metrics,
        kept,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compression {
    /// Kept tokens joined by single spaces.
    pub text: String,
    pub records: Vec<TokenMetricRecord>,
    /// Input tokens over kept tokens; 1 for empty input.
    pub ratio: f64,
}

impl Compression {
    pub fn kept_tokens(&self) -> impl Iterator<Item = &str> {
        self.records
            .iter()
            .filter(|r| r.kept)
            .map(|r| r.surface.as_str())
    }

    pub fn kept_count(&self) -> usize {
        self.records.iter().filter(|r| r.kept).count()
    }
}

/// A trained model paired with the vocabulary it was trained on.
#[derive(Debug, Clone, Copy)]
pub struct Compressor<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocabulary,
}

impl<'a> Compressor<'a> {
    pub fn new(model: &'a Model, vocab: &'a Vocabulary) -> Self {
        Compressor { model, vocab }
    }

    pub fn compress(&self, text: &str, request: &CompressionRequest) -> Result<Compression> {
        self.compress_tokens(&tokenize(text), request)
    }

    pub fn compress_tokens(
        &self,
        tokens: &[String],
        request: &CompressionRequest,
    ) -> Result<Compression> {
        request.validate()?;
        if tokens.is_empty() {
            return Ok(Compression {
                text: String::new(),
                records: Vec::new(),
                ratio: 1.0,
            });
        }
        let ids = self.vocab.encode(tokens);
        let (acts, probs) = self.model.predict(&ids)?;
        let ranking = rank(acts.last(), &probs, request)?;

        let mut keep = vec![false; tokens.len()];
        for &i in &ranking.kept {
            keep[i] = true;
        }
        let records: Vec<TokenMetricRecord> = tokens
            .iter()
            .enumerate()
            .map(|(i, surface)| TokenMetricRecord {
                index: i,
                surface: surface.clone(),
                p: probs[i],
                s_norm: ranking.s_norm[i],
                m: ranking.metrics[i],
                kept: keep[i],
            })
            .collect();
        let kept: Vec<&str> = ranking.kept.iter().map(|&i| tokens[i].as_str()).collect();
        Ok(Compression {
            text: detokenize(&kept),
            ratio: tokens.len() as f64 / ranking.kept.len() as f64,
            records,
        })
    }
}
