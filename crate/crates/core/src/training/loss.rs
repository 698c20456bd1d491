//! Token cross-entropy, the inter-class cosine similarity penalty, and their
//! β-weighted sum.

use crate::corpus::EncodedSequence;
use crate::diagnostics::inter_class_similarity;
use crate::error::{Error, Result};
use crate::model::{encode_on_tape, Dropout, LayerActivations, ModelConfig, ModelParams, Weights};
use crate::tape::{Tape, Var};

/// Mean per-token cross-entropy of the head applied to `last` (`[n, d]`).
pub fn cross_entropy_on_tape(
    tape: &mut Tape,
    head: Var,
    head_bias: Var,
    last: Var,
    targets: &[usize],
) -> Result<Var> {
    let logits = tape.matmul(last, head)?;
    let logits = tape.add_row(logits, head_bias)?;
    tape.softmax_cross_entropy(logits, targets)
}

/// Mean cosine similarity over all (preserve, discard) pairs of rows of
/// `last`. `None` when either index set is empty.
///
/// The pair mean factorizes: it equals the dot product of the two class means
/// of the unit-normalized rows, so the cost is linear in the token count.
pub fn cs_loss_on_tape(
    tape: &mut Tape,
    last: Var,
    preserve: &[usize],
    discard: &[usize],
) -> Result<Option<Var>> {
    if preserve.is_empty() || discard.is_empty() {
        return Ok(None);
    }
    let unit = tape.normalize_rows(last);
    let p = tape.gather_rows(unit, preserve)?;
    let d = tape.gather_rows(unit, discard)?;
    let p_mean = tape.mean_rows(p)?;
    let d_mean = tape.mean_rows(d)?;
    Ok(Some(tape.dot(p_mean, d_mean)?))
}

/// Loss of a batch as recorded on a tape, with its components for reporting.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub total: Var,
    /// Mean cross-entropy over sequences.
    pub ce: f64,
    /// Mean inter-class similarity over sequences (0 for single-class ones).
    pub cs: f64,
}

/// Mean over sequences of `CE + β·CS`. The similarity term uses the gold
/// label index sets and only reaches encoder parameters; with `β = 0` it is
/// left off the tape entirely.
pub fn combined_loss_on_tape(
    tape: &mut Tape,
    w: &Weights<Var>,
    config: &ModelConfig,
    batch: &[EncodedSequence],
    beta: f64,
    mut dropout: Option<&mut Dropout>,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::dim("combined_loss", "empty batch"));
    }
    let mut per_seq = Vec::with_capacity(batch.len());
    let (mut ce_sum, mut cs_sum) = (0.0, 0.0);
    for seq in batch {
        let layers = encode_on_tape(tape, w, config, &seq.ids, dropout.as_deref_mut())?;
        let last = *layers.last().expect("encoder returns at least one layer");
        let ce = cross_entropy_on_tape(tape, w.head, w.head_bias, last, &seq.targets)?;
        ce_sum += tape.value(ce).item();
        let total = if beta != 0.0 {
            match cs_loss_on_tape(tape, last, &seq.preserve, &seq.discard)? {
                Some(cs) => {
                    cs_sum += tape.value(cs).item();
                    let weighted = tape.scale(cs, beta);
                    tape.add(ce, weighted)?
                }
                None => ce,
            }
        } else {
            cs_sum += inter_class_similarity(tape.value(last), &seq.preserve, &seq.discard)
                .unwrap_or(0.0);
            ce
        };
        per_seq.push(total);
    }
    let total = if per_seq.len() == 1 {
        per_seq[0]
    } else {
        let stacked = tape.concat_cols(&per_seq)?;
        tape.mean(stacked)
    };
    let n = batch.len() as f64;
    Ok(BatchLoss {
        total,
        ce: ce_sum / n,
        cs: cs_sum / n,
    })
}

/// Cross-entropy of one sequence given its forward activations.
pub fn cross_entropy_loss(
    params: &ModelParams,
    activations: &LayerActivations,
    targets: &[usize],
) -> Result<f64> {
    let mut tape = Tape::new();
    let head = tape.leaf(params.head.clone());
    let head_bias = tape.leaf(params.head_bias.clone());
    let last = tape.leaf(activations.last().clone());
    let loss = cross_entropy_on_tape(&mut tape, head, head_bias, last, targets)?;
    Ok(tape.value(loss).item())
}

/// Inter-class cosine similarity of the last layer; 0 when a class is empty.
pub fn cs_loss(activations: &LayerActivations, preserve: &[usize], discard: &[usize]) -> f64 {
    inter_class_similarity(activations.last(), preserve, discard).unwrap_or(0.0)
}

/// Dropout-free value of the combined loss on a batch.
pub fn combined_loss(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &[EncodedSequence],
    beta: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let w = params.register(&mut tape);
    let loss = combined_loss_on_tape(&mut tape, &w, config, batch, beta, None)?;
    Ok(tape.value(loss.total).item())
}
