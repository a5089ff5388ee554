//! Scalar losses with their gradients.

use super::network::softmax;
use crate::error::{Error, Result};

/// Smallest probability fed to a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Cross-entropy of a probability vector against a target index.
///
/// Returns `-ln p[target]` and the gradient with respect to the logits that
/// produced `probs`, i.e. `probs - one_hot(target)`.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= probs.len() {
        return Err(Error::config(format!(
            "target index {target} out of range for {} classes",
            probs.len()
        )));
    }
    let loss = -probs[target].max(PROB_FLOOR).ln();
    let mut grad = probs.to_vec();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Mean cross-entropy over a batch of logit rows; gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f64], classes: usize, targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != classes * targets.len() {
        return Err(Error::config("logit buffer does not match batch of targets"));
    }
    let n = targets.len() as f64;
    let mut grad = Vec::with_capacity(logits.len());
    let mut total = 0.0;
    for (row, &t) in logits.chunks(classes).zip(targets) {
        let (l, g) = cross_entropy(&softmax(row), t)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v / n));
    }
    Ok((total / n, grad))
}

/// Mean squared error over all elements.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::config("mse operands differ in length or are empty"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_prediction_has_zero_loss() {
        let (l, _) = cross_entropy(&[0.0, 1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn uniform_prediction_costs_ln4() {
        let (l, g) = cross_entropy(&[0.25; 4], 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
        assert_eq!(g, vec![0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let (l, _) = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!((l - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn arbitrary_probs_match_direct_formula() {
        let p = [0.1, 0.2, 0.3, 0.4];
        for t in 0..4 {
            let (l, _) = cross_entropy(&p, t).unwrap();
            assert_eq!(l, -p[t].ln());
        }
    }

    #[test]
    fn out_of_range_target_is_rejected() {
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }
}
