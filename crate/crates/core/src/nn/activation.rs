use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// ELU with α = 1.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn sigmoid_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Sigmoid,
    Identity,
    /// Row-wise softmax. Only used as a classification head.
    Softmax,
}

impl Activation {
    pub fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Elu => z.map(elu),
            Activation::Sigmoid => z.map(sigmoid),
            Activation::Identity => z.clone(),
            Activation::Softmax => softmax_rows(z),
        }
    }

    /// Gradient with respect to the pre-activation `z`, given the upstream
    /// gradient with respect to the output `y = apply(z)`.
    pub fn backward(self, z: &Matrix, y: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        if upstream.shape() != z.shape() {
            return Err(Error::shape(
                "activation backward",
                z.shape(),
                upstream.shape(),
            ));
        }
        match self {
            Activation::Elu => z.zip_map("elu backward", upstream, |z, g| elu_grad(z) * g),
            Activation::Sigmoid => {
                y.zip_map("sigmoid backward", upstream, |s, g| s * (1.0 - s) * g)
            }
            Activation::Identity => Ok(upstream.clone()),
            Activation::Softmax => {
                // J·g for the softmax Jacobian diag(y) - y yᵀ, row by row
                let mut out = Matrix::zeros(z.rows(), z.cols());
                for r in 0..z.rows() {
                    let yr = y.row(r);
                    let gr = upstream.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..z.cols() {
                        out.set(r, c, yr[c] * (gr[c] - dot));
                    }
                }
                Ok(out)
            }
        }
    }
}

fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    let cols = z.cols();
    for r in 0..z.rows() {
        let row = &mut out.as_mut_slice()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn elu_values() {
        assert_eq!(elu(1.0), 1.0);
        assert_eq!(elu(0.0), 0.0);
        // 1/e - 1
        assert!((elu(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-5);
        assert_eq!(elu_grad(2.0), 1.0);
        assert!((elu_grad(-1.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(500.0), 1.0);
        assert!(sigmoid(-500.0) >= 0.0 && sigmoid(-500.0) < 1e-200);
        assert!(sigmoid(-800.0).is_finite());
        assert!((sigmoid_grad(0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_survive_large_logits() {
        let z = Matrix::from_rows(&[[1000.0, 1000.0, -1000.0], [0.0, 1.0, 2.0]]).unwrap();
        let y = Activation::Softmax.apply(&z);
        assert!(y.is_finite());
        for row in y.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((y.get(0, 0) - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sigmoid_is_symmetric(x in -50.0f64..50.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn elu_is_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(elu(lo) <= elu(hi));
        }

        #[test]
        fn elu_is_continuous_at_zero(h in 1e-12f64..1e-6) {
            prop_assert!((elu(h) - elu(-h)).abs() <= 2.0 * h + 1e-15);
        }
    }
}
