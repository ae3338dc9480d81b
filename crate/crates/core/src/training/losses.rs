use rand::Rng;

use crate::data::{Label, TokenizedDocument, MASK, NUM_RESERVED};
use crate::numerics::{Scalar, Tensor};

fn log_softmax_at<T: Scalar>(row: &[T], target: usize) -> f64 {
    let xs: Vec<f64> = row.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
    xs[target] - lse
}

/// Summed negative log-likelihood over rows that carry a target, and the
/// number of such rows.
pub fn nll_sum<T: Scalar>(logits: &Tensor<T>, targets: &[Option<usize>]) -> (f64, usize) {
    let mut total = 0.0;
    let mut n = 0;
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = *t {
            total -= log_softmax_at(logits.row(r), t);
            n += 1;
        }
    }
    (total, n)
}

/// Mean softmax cross-entropy over rows with a target.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[Option<usize>]) -> f64 {
    let (s, n) = nll_sum(logits, targets);
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean sigmoid binary cross-entropy over all labels of one document.
pub fn bce_multilabel<T: Scalar>(logits: &[T], targets: &[bool]) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(z, &y)| {
            let z = z.to_f64().unwrap_or(f64::NAN);
            // max(z,0) - z*y + log(1 + exp(-|z|))
            z.max(0.0) - if y { z } else { 0.0 } + (-z.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / n
}

/// Per-row targets of a document for the sequence tasks.
pub fn row_targets(doc: &TokenizedDocument) -> Vec<Option<usize>> {
    let n = doc.ids.len();
    match &doc.label {
        Label::Tags(t) | Label::Next(t) => (0..n)
            .map(|i| if i < doc.true_length { t.get(i).copied() } else { None })
            .collect(),
        Label::Masked(m) => (0..n).map(|i| m.get(i).copied().flatten()).collect(),
        _ => vec![None; n],
    }
}

/// Choose each non-reserved real token with probability `prob`; chosen
/// tokens become the mask id 80% of the time, a random token 10% and stay
/// unchanged 10%. Targets are the original ids at chosen positions.
pub fn mlm_mask<R: Rng>(doc: &TokenizedDocument, vocab_size: usize, prob: f64, rng: &mut R) -> TokenizedDocument {
    let mut ids = doc.ids.clone();
    let mut targets = vec![None; ids.len()];
    for i in 0..doc.true_length {
        let orig = ids[i];
        if orig < NUM_RESERVED || !rng.random_bool(prob) {
            continue;
        }
        targets[i] = Some(orig);
        let u: f64 = rng.random();
        ids[i] = if u < 0.8 {
            MASK
        } else if u < 0.9 {
            rng.random_range(NUM_RESERVED..vocab_size)
        } else {
            orig
        };
    }
    TokenizedDocument {
        ids,
        true_length: doc.true_length,
        label: Label::Masked(targets),
    }
}
