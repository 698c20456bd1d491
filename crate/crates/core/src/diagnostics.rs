//! Per-layer inter-class cosine similarity, the over-smoothing measure.

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::EncodedSequence;
use crate::error::{Error, Result};
use crate::model::{LayerActivations, Model};
use crate::ops::{l2_norm, COSINE_EPS};
use crate::tensor::Tensor;

fn unit_mean(h: &Tensor, rows: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; h.cols()];
    for &i in rows {
        let row = h.row(i);
        let denom = l2_norm(row).max(COSINE_EPS);
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v / denom;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Mean cosine similarity over every (preserve, discard) row pair of `h`.
/// `None` when either set is empty.
///
/// Computed as the dot product of the two class means of unit-normalized
/// rows, which equals the pairwise mean.
pub fn inter_class_similarity(h: &Tensor, preserve: &[usize], discard: &[usize]) -> Option<f64> {
    if preserve.is_empty() || discard.is_empty() {
        return None;
    }
    let p = unit_mean(h, preserve);
    let d = unit_mean(h, discard);
    let s: f64 = p.iter().zip(&d).map(|(a, b)| a * b).sum();
    Some(s.clamp(-1.0, 1.0))
}

/// `S^l` for layer `l` of one sequence, or `None` if a class is empty.
pub fn layer_similarity(
    activations: &LayerActivations,
    preserve: &[usize],
    discard: &[usize],
    layer: usize,
) -> Option<f64> {
    inter_class_similarity(activations.layer(layer), preserve, discard)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerStat {
    pub layer: usize,
    pub mean: f64,
    /// Population standard deviation across sequences.
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OversmoothingReport {
    pub layers: Vec<LayerStat>,
    /// Sequences lacking one of the classes.
    pub excluded: usize,
}

impl OversmoothingReport {
    pub fn included(&self) -> usize {
        self.layers.first().map_or(0, |l| l.count)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,mean,std,count\n");
        for l in &self.layers {
            out.push_str(&format!("{},{},{},{}\n", l.layer, l.mean, l.std, l.count));
        }
        out
    }
}

/// Mean and population std of `values`, summed in sorted order so the result
/// does not depend on input order.
fn mean_std(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    (mean, (sq.iter().sum::<f64>() / n).sqrt())
}

/// Aggregates `S^l` for `l = 0..=L` over every sequence holding both classes.
pub fn corpus_report(model: &Model, dataset: &[EncodedSequence]) -> Result<OversmoothingReport> {
    let per_seq = dataset
        .par_iter()
        .map(|seq| {
            if !seq.has_both_classes() {
                return Ok(None);
            }
            let acts = model.forward(&seq.ids)?;
            Ok(Some(
                (0..acts.len())
                    .map(|l| layer_similarity(&acts, &seq.preserve, &seq.discard, l))
                    .collect::<Option<Vec<f64>>>()
                    .expect("both classes present"),
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let included: Vec<&Vec<f64>> = per_seq.iter().flatten().collect();
    if included.is_empty() {
        return Err(Error::NoEligibleSequences);
    }
    let layers = (0..=model.config.layers)
        .map(|l| {
            let mut values: Vec<f64> = included.iter().map(|s| s[l]).collect();
            let (mean, std) = mean_std(&mut values);
            LayerStat {
                layer: l,
                mean,
                std,
                count: values.len(),
            }
        })
        .collect();
    Ok(OversmoothingReport {
        layers,
        excluded: dataset.len() - included.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_classes() {
        let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(inter_class_similarity(&h, &[0, 1], &[2]), Some(0.0));
    }

    #[test]
    fn collapsed_layer() {
        let h = Tensor::from_rows(&vec![vec![0.3, -1.2, 2.0]; 4]).unwrap();
        let s = inter_class_similarity(&h, &[0, 2], &[1, 3]).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_class_is_skipped() {
        let h = Tensor::zeros(&[2, 2]);
        assert_eq!(inter_class_similarity(&h, &[0, 1], &[]), None);
        assert_eq!(inter_class_similarity(&h, &[], &[0]), None);
    }

    #[test]
    fn zero_rows_do_not_produce_nan() {
        let h = Tensor::zeros(&[2, 3]);
        assert_eq!(inter_class_similarity(&h, &[0], &[1]), Some(0.0));
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&mut [1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        let (_, s) = mean_std(&mut [0.4]);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn csv_shape() {
        let report = OversmoothingReport {
            layers: vec![
                LayerStat { layer: 0, mean: 0.1, std: 0.0, count: 1 },
                LayerStat { layer: 1, mean: 0.5, std: 0.25, count: 1 },
            ],
            excluded: 2,
        };
        assert_eq!(report.to_csv(), "layer,mean,std,count\n0,0.1,0,1\n1,0.5,0.25,1\n");
        assert_eq!(report.included(), 1);
    }
}
