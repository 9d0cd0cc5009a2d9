//! Central finite differences against analytic gradients.
//!
//! The error reported for a tensor is the largest absolute deviation between the
//! two gradients divided by the tensor's largest gradient magnitude (floored at
//! [`SCALE_FLOOR`]). Scaling by the tensor rather than by each entry keeps
//! near-zero entries from turning round-off into spurious failures.

use crate::error::Result;
use crate::linalg::Matrix;

use super::layer::MlpBlock;
use super::loss::{mse, mse_loss};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const SCALE_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many entries per tensor, spread evenly. `None` checks all.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            max_entries: None,
        }
    }
}

impl GradCheckOptions {
    /// Indices of the entries to check in a tensor of `len` values.
    pub fn entries(&self, len: usize) -> Vec<usize> {
        match self.max_entries {
            Some(k) if k < len && k > 0 => (0..k).map(|i| i * len / k).collect(),
            _ => (0..len).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorStats {
    pub rel: f64,
    pub abs: f64,
    pub scale: f64,
}

impl ErrorStats {
    pub fn merge(self, other: ErrorStats) -> ErrorStats {
        ErrorStats {
            rel: self.rel.max(other.rel),
            abs: self.abs.max(other.abs),
            scale: self.scale.max(other.scale),
        }
    }
}

/// Compares matched analytic/numeric gradient entries.
pub fn compare(analytic: &[f64], numeric: &[f64]) -> ErrorStats {
    assert_eq!(analytic.len(), numeric.len());
    let abs = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    ErrorStats {
        rel: abs / scale.max(SCALE_FLOOR),
        abs,
        scale,
    }
}

/// Central-difference derivative of `loss` w.r.t. the listed entries of the
/// tensor picked by `param`. The tensor is restored bit-exactly afterwards.
pub fn numeric_gradient<T>(
    model: &mut T,
    param: impl Fn(&mut T) -> &mut Matrix,
    mut loss: impl FnMut(&T) -> Result<f64>,
    entries: &[usize],
    eps: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(entries.len());
    for &k in entries {
        let original = param(model).as_slice()[k];
        param(model).as_mut_slice()[k] = original + eps;
        let plus = loss(model);
        param(model).as_mut_slice()[k] = original - eps;
        let minus = loss(model);
        param(model).as_mut_slice()[k] = original;
        out.push((plus? - minus?) / (2.0 * eps));
    }
    Ok(out)
}

pub fn pick(values: &Matrix, entries: &[usize]) -> Vec<f64> {
    entries.iter().map(|&k| values.as_slice()[k]).collect()
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub stats: ErrorStats,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.stats.rel))
    }

    pub fn max_abs_error(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.stats.abs))
    }
}

/// Checks a block under the loss `mse(block(x), target)`, including the gradient
/// w.r.t. the block input. `corrupt` is added to the first analytic weight
/// gradient entry, for exercising the checker itself.
pub fn check_block_with(
    block: &MlpBlock,
    x: &Matrix,
    target: &Matrix,
    opts: GradCheckOptions,
    corrupt: Option<f64>,
) -> Result<GradCheckReport> {
    let mut work = block.clone();
    let out = work.forward(x, true)?;
    let (_, upstream) = mse(&out, target)?;
    let mut grads = work.backward(&upstream)?;
    if let Some(delta) = corrupt {
        grads.layers[0].weights.as_mut_slice()[0] += delta;
    }

    let mut report = GradCheckReport::default();
    let mut probe = block.clone();
    let analytic = grads.tensors();
    for (i, g) in analytic.iter().enumerate() {
        let entries = opts.entries(g.len());
        let numeric = numeric_gradient(
            &mut probe,
            |b: &mut MlpBlock| b.param_mut(i),
            |b: &MlpBlock| mse_loss(&b.predict(x)?, target),
            &entries,
            opts.eps,
        )?;
        let kind = if i % 2 == 0 { "W" } else { "b" };
        report.tensors.push(TensorCheck {
            name: format!("layer{}.{kind}", i / 2),
            stats: compare(&pick(g, &entries), &numeric),
        });
    }

    let mut input = x.clone();
    let entries = opts.entries(input.len());
    let numeric = numeric_gradient(
        &mut input,
        |m: &mut Matrix| m,
        |m: &Matrix| mse_loss(&block.predict(m)?, target),
        &entries,
        opts.eps,
    )?;
    let input_grad = grads
        .input
        .as_ref()
        .expect("backward returns the input gradient");
    report.tensors.push(TensorCheck {
        name: "input".into(),
        stats: compare(&pick(input_grad, &entries), &numeric),
    });
    Ok(report)
}

pub fn check_block(block: &MlpBlock, x: &Matrix, target: &Matrix) -> Result<GradCheckReport> {
    check_block_with(block, x, target, GradCheckOptions::default(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;
    use crate::nn::{Activation, DenseLayer};

    fn random_input(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.standard_normal()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn finite_difference_of_a_quadratic() {
        let mut m = Matrix::from_rows(&[[3.0, -1.0]]).unwrap();
        let g = numeric_gradient(
            &mut m,
            |m: &mut Matrix| m,
            |m: &Matrix| Ok(m.as_slice().iter().map(|v| v * v).sum()),
            &[0, 1],
            1e-5,
        )
        .unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
        assert!((g[1] + 2.0).abs() < 1e-8);
        assert_eq!(m, Matrix::from_rows(&[[3.0, -1.0]]).unwrap());
    }

    #[test]
    fn every_activation_passes() {
        let mut rng = Rng::new(17);
        for hidden in [Activation::Elu, Activation::Sigmoid, Activation::Identity] {
            for output in [
                Activation::Elu,
                Activation::Sigmoid,
                Activation::Identity,
                Activation::Softmax,
            ] {
                let block = MlpBlock::he(&[5, 6, 4, 3], hidden, output, &mut rng).unwrap();
                let x = random_input(4, 5, &mut rng);
                let t = random_input(4, 3, &mut rng);
                let err = check_block(&block, &x, &t).unwrap().max_rel_error();
                assert!(err < 1e-4, "{hidden:?}/{output:?}: {err}");
            }
        }
    }

    #[test]
    fn linear_block_is_exact_to_roundoff() {
        let mut rng = Rng::new(4);
        let block = MlpBlock::he(
            &[4, 4, 2],
            Activation::Identity,
            Activation::Identity,
            &mut rng,
        )
        .unwrap();
        let x = random_input(3, 4, &mut rng);
        let t = random_input(3, 2, &mut rng);
        let err = check_block(&block, &x, &t).unwrap().max_rel_error();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn planted_fault_is_detected() {
        let mut rng = Rng::new(5);
        let block =
            MlpBlock::he(&[3, 4, 2], Activation::Elu, Activation::Sigmoid, &mut rng).unwrap();
        let x = random_input(3, 3, &mut rng);
        let t = random_input(3, 2, &mut rng);
        let report =
            check_block_with(&block, &x, &t, GradCheckOptions::default(), Some(0.1)).unwrap();
        assert!(report.max_rel_error() > 1e-2, "{}", report.max_rel_error());
    }

    #[test]
    fn sampled_entries_are_spread_and_distinct() {
        let opts = GradCheckOptions {
            max_entries: Some(4),
            ..Default::default()
        };
        assert_eq!(opts.entries(10), vec![0, 2, 5, 7]);
        assert_eq!(opts.entries(3), vec![0, 1, 2]);
    }

    #[test]
    fn single_layer_identity_block() {
        let block =
            MlpBlock::from_layers(vec![DenseLayer::identity(3, Activation::Identity)]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let t = Matrix::zeros(1, 3);
        assert!(check_block(&block, &x, &t).unwrap().max_rel_error() < 1e-7);
    }
}
