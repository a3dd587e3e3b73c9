use crate::error::{Error, Result};
use crate::models::{Embedding, UNIT_NORM_TOLERANCE};

use super::queue::NegativeQueue;

/// Where a negative for one anchor comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Negative {
    Query(usize),
    Key(usize),
    Queued(usize),
}

/// Negative layout for anchor `anchor` in a batch of `batch` pairs: every other
/// query and key, then the whole queue once `step > queue_start_step`.
pub(crate) fn negative_layout(
    step: usize,
    batch: usize,
    queue_len: usize,
    anchor: usize,
    queue_start_step: usize,
) -> Result<Vec<Negative>> {
    if anchor >= batch {
        return Err(Error::ShapeMismatch(format!(
            "anchor {anchor} outside batch of {batch}"
        )));
    }
    let mut out = Vec::with_capacity(2 * batch + queue_len);
    for j in (0..batch).filter(|&j| j != anchor) {
        out.push(Negative::Query(j));
        out.push(Negative::Key(j));
    }
    if step > queue_start_step {
        out.extend((0..queue_len).map(Negative::Queued));
    }
    if out.is_empty() {
        return Err(Error::NoNegatives);
    }
    Ok(out)
}

/// Negatives for anchor `self_index`: all of `bq` and `bk` except the anchor's
/// own query and positive key, plus the queue contents after `queue_start_step`.
pub fn gather_negatives(
    step: usize,
    bq: &[Embedding],
    bk: &[Embedding],
    queue: &NegativeQueue,
    self_index: usize,
    queue_start_step: usize,
) -> Result<Vec<Embedding>> {
    if bq.len() != bk.len() {
        return Err(Error::LengthMismatch(bq.len(), bk.len()));
    }
    let queued: Vec<&Embedding> = queue.iter().collect();
    let layout = negative_layout(step, bq.len(), queued.len(), self_index, queue_start_step)?;
    Ok(layout
        .into_iter()
        .map(|n| match n {
            Negative::Query(j) => bq[j].clone(),
            Negative::Key(j) => bk[j].clone(),
            Negative::Queued(j) => queued[j].clone(),
        })
        .collect())
}

/// Loss value and the gradient coefficients of one InfoNCE term.
#[derive(Clone, Debug, PartialEq)]
pub struct NceGrad {
    pub loss: f64,
    /// d loss / d q
    pub d_q: Vec<f64>,
    /// d loss / d k_neg[n] = neg_weights[n] * q
    pub neg_weights: Vec<f64>,
}

fn check_unit(e: &Embedding) -> Result<()> {
    let n = e.dot(e).sqrt();
    if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::NotNormalized(n));
    }
    Ok(())
}

/// `-log(exp(s+) / (exp(s+) + sum exp(s-)))` with `s = q.k / tau`.
pub fn info_nce(
    q: &Embedding,
    k_plus: &Embedding,
    negatives: &[Embedding],
    tau: f64,
) -> Result<f64> {
    let negs: Vec<&Embedding> = negatives.iter().collect();
    Ok(info_nce_with_grad(q, k_plus, &negs, tau)?.loss)
}

pub fn info_nce_with_grad(
    q: &Embedding,
    k_plus: &Embedding,
    negatives: &[&Embedding],
    tau: f64,
) -> Result<NceGrad> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!("tau {tau} must be positive")));
    }
    if negatives.is_empty() {
        return Err(Error::NoNegatives);
    }
    let d = q.dim();
    for e in std::iter::once(k_plus).chain(negatives.iter().copied()) {
        if e.dim() != d {
            return Err(Error::LengthMismatch(e.dim(), d));
        }
        check_unit(e)?;
    }
    check_unit(q)?;
    let pos = q.dot(k_plus) / tau;
    let logits: Vec<f64> = negatives.iter().map(|k| q.dot(k) / tau).collect();
    let m = logits.iter().copied().fold(pos, f64::max);
    let e_pos = (pos - m).exp();
    let e_neg: Vec<f64> = logits.iter().map(|s| (s - m).exp()).collect();
    let z = e_pos + e_neg.iter().sum::<f64>();
    let loss = -(pos - m) + z.ln();
    // softmax probabilities; d loss / d s+ = p+ - 1, d loss / d s- = p-
    let p_pos = e_pos / z;
    let neg_weights: Vec<f64> = e_neg.iter().map(|e| e / z / tau).collect();
    let pos_weight = (p_pos - 1.0) / tau;
    let mut d_q: Vec<f64> = k_plus.as_slice().iter().map(|v| pos_weight * v).collect();
    for (w, k) in neg_weights.iter().zip(negatives) {
        for (g, v) in d_q.iter_mut().zip(k.as_slice()) {
            *g += w * v;
        }
    }
    Ok(NceGrad {
        loss,
        d_q,
        neg_weights,
    })
}
