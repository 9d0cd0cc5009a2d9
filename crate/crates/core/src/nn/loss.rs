//! Batch losses. Each returns the value together with its gradient w.r.t. the
//! prediction.
//!
//! Reduction: squared L2 norm over features per sample, averaged over the batch.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Mean over rows of `‖a_r − b_r‖²`.
pub fn mse_loss(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse_loss", a.shape(), b.shape()));
    }
    let batch = a.rows().max(1) as f64;
    let total: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(total / batch)
}

/// `2 (a − b) / batch`.
pub fn mse_grad(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let batch = a.rows().max(1) as f64;
    a.zip_map("mse_grad", b, |x, y| 2.0 * (x - y) / batch)
}

pub fn mse(a: &Matrix, b: &Matrix) -> Result<(f64, Matrix)> {
    Ok((mse_loss(a, b)?, mse_grad(a, b)?))
}

/// Smallest probability fed to `ln` so a saturated softmax stays finite.
const PROB_FLOOR: f64 = 1e-300;

/// Cross-entropy of softmax probabilities against one-hot targets, mean over the
/// batch. The gradient is w.r.t. the softmax *logits*: `(p − y) / batch`.
pub fn softmax_cross_entropy(probs: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if probs.shape() != targets.shape() {
        return Err(Error::shape(
            "softmax_cross_entropy",
            probs.shape(),
            targets.shape(),
        ));
    }
    let batch = probs.rows().max(1) as f64;
    let loss = -probs
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| t * p.max(PROB_FLOOR).ln())
        .sum::<f64>()
        / batch;
    let grad = probs.zip_map("softmax_cross_entropy", targets, |p, t| (p - t) / batch)?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_loss(&a, &Matrix::zeros(1, 2)).unwrap(), 5.0);
        // per-row losses 5 and 1, mean 3
        let b = Matrix::from_rows(&[[1.0, 2.0], [1.0, 0.0]]).unwrap();
        assert_eq!(mse_loss(&b, &Matrix::zeros(2, 2)).unwrap(), 3.0);
        assert!(mse_loss(&a, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn mse_gradient_matches_formula() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, -1.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 2.0], [1.0, 1.0]]).unwrap();
        let g = mse_grad(&a, &b).unwrap();
        assert_eq!(g, Matrix::from_rows(&[[1.0, 0.0], [-1.0, -2.0]]).unwrap());
    }

    #[test]
    fn cross_entropy_of_uniform_prediction() {
        let p = Matrix::filled(1, 4, 0.25);
        let y = Matrix::from_rows(&[[0.0, 0.0, 1.0, 0.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&p, &y).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert_eq!(
            grad,
            Matrix::from_rows(&[[0.25, 0.25, -0.75, 0.25]]).unwrap()
        );
    }

    #[test]
    fn cross_entropy_stays_finite_on_zero_probability() {
        let p = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(softmax_cross_entropy(&p, &y).unwrap().0.is_finite());
    }

    proptest! {
        #[test]
        fn mse_is_nonnegative_and_zero_only_on_equality(
            xs in prop::collection::vec(-10.0f64..10.0, 6),
            ys in prop::collection::vec(-10.0f64..10.0, 6),
        ) {
            let a = Matrix::new(2, 3, xs).unwrap();
            let b = Matrix::new(2, 3, ys).unwrap();
            let l = mse_loss(&a, &b).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert!(mse_loss(&a, &a).unwrap() <= 1e-12);
            if a.sub(&b).unwrap().max_abs() > 1e-6 {
                prop_assert!(l > 0.0);
            }
        }
    }
}
