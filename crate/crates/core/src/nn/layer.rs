use crate::error::{Error, Result};
use crate::linalg::{he_normal, Matrix, Rng};

use super::activation::Activation;

#[derive(Clone, Debug)]
struct LayerCache {
    input: Matrix,
    pre: Matrix,
    output: Matrix,
}

/// Affine map followed by an activation: `y = act(x W + bias)`.
///
/// `W` is `fan_in × fan_out`, so a batch of row vectors multiplies from the left.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Matrix,
    activation: Activation,
    cache: Option<LayerCache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Matrix,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Matrix, activation: Activation) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weights.cols() {
            return Err(Error::shape(
                "DenseLayer bias",
                weights.shape(),
                bias.shape(),
            ));
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::InvalidConfig(
                "dense layer with an empty dimension".into(),
            ));
        }
        Ok(Self {
            weights,
            bias,
            activation,
            cache: None,
        })
    }

    /// He-normal weights, zero bias.
    pub fn he(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::new(
            he_normal(fan_in, fan_out, rng)?,
            Matrix::zeros(1, fan_out),
            activation,
        )
    }

    /// `W = I`, zero bias.
    pub fn identity(dim: usize, activation: Activation) -> Self {
        Self::new(Matrix::identity(dim), Matrix::zeros(1, dim), activation)
            .expect("identity layer shapes are consistent")
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &Matrix {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Matrix {
        &mut self.bias
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.fan_in() {
            return Err(Error::shape(
                "dense forward",
                x.shape(),
                self.weights.shape(),
            ));
        }
        x.matmul(&self.weights)?.add_row(&self.bias)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.activation.apply(&self.pre_activation(x)?))
    }

    /// Forward pass. Training mode keeps what `backward` needs; evaluation mode
    /// drops any cache from an earlier training pass.
    pub fn forward(&mut self, x: &Matrix, train: bool) -> Result<Matrix> {
        let pre = self.pre_activation(x)?;
        let output = self.activation.apply(&pre);
        self.cache = train.then(|| LayerCache {
            input: x.clone(),
            pre,
            output: output.clone(),
        });
        Ok(output)
    }

    /// Consumes the cache. `delta` is the gradient w.r.t. the pre-activation when
    /// `pre_activation_delta` is set, otherwise w.r.t. the layer output.
    fn backward_inner(
        &mut self,
        upstream: &Matrix,
        pre_activation_delta: bool,
        need_input_grad: bool,
    ) -> Result<(LayerGrads, Option<Matrix>)> {
        let cache = self.cache.take().ok_or(Error::MissingCache("DenseLayer"))?;
        if upstream.shape() != cache.output.shape() {
            return Err(Error::shape(
                "dense backward",
                cache.output.shape(),
                upstream.shape(),
            ));
        }
        let delta = if pre_activation_delta {
            upstream.clone()
        } else {
            self.activation
                .backward(&cache.pre, &cache.output, upstream)?
        };
        let grads = LayerGrads {
            weights: cache.input.t_matmul(&delta)?,
            bias: delta.sum_rows(),
        };
        let input_grad = if need_input_grad {
            Some(delta.matmul_t(&self.weights)?)
        } else {
            None
        };
        Ok((grads, input_grad))
    }

    pub fn backward(&mut self, upstream: &Matrix) -> Result<(LayerGrads, Matrix)> {
        let (grads, input) = self.backward_inner(upstream, false, true)?;
        Ok((grads, input.expect("input gradient requested")))
    }
}

/// Gradients for every layer of a block, plus the gradient w.r.t. the block input
/// when it was requested.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGrads {
    pub layers: Vec<LayerGrads>,
    pub input: Option<Matrix>,
}

impl BlockGrads {
    /// Gradient tensors in parameter order `[W0, b0, W1, b1, ...]`.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|g| [&g.weights, &g.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|g| [&mut g.weights, &mut g.bias])
            .collect()
    }
}

/// A chain of dense layers.
#[derive(Clone, Debug)]
pub struct MlpBlock {
    layers: Vec<DenseLayer>,
}

impl MlpBlock {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig(
                "a block needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::shape(
                    "MlpBlock chaining",
                    pair[0].weights.shape(),
                    pair[1].weights.shape(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// He-initialized block through the widths `dims[0] -> dims[1] -> ...`,
    /// with `hidden` between layers and `output` on the last one.
    pub fn he(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "block needs an input and at least one layer width, got {dims:?}"
            )));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::he(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Input width followed by every layer's output width.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(DenseLayer::fan_out))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn has_cache(&self) -> bool {
        self.layers.iter().all(DenseLayer::has_cache)
    }

    /// Parameter tensors in order `[W0, b0, W1, b1, ...]`.
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn param_mut(&mut self, index: usize) -> &mut Matrix {
        let layer = &mut self.layers[index / 2];
        if index.is_multiple_of(2) {
            &mut layer.weights
        } else {
            &mut layer.bias
        }
    }

    pub fn num_tensors(&self) -> usize {
        self.layers.len() * 2
    }

    /// Evaluation-mode forward; leaves caches untouched.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = self.layers[0].predict(x)?;
        for layer in &self.layers[1..] {
            h = layer.predict(&h)?;
        }
        Ok(h)
    }

    pub fn forward(&mut self, x: &Matrix, train: bool) -> Result<Matrix> {
        let (first, rest) = self.layers.split_first_mut().expect("non-empty block");
        let mut h = first.forward(x, train)?;
        for layer in rest {
            h = layer.forward(&h, train)?;
        }
        Ok(h)
    }

    fn backward_inner(
        &mut self,
        upstream: &Matrix,
        pre_activation_delta: bool,
        need_input_grad: bool,
    ) -> Result<BlockGrads> {
        if !self.has_cache() {
            return Err(Error::MissingCache("MlpBlock"));
        }
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut carry = upstream.clone();
        let mut input = None;
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let is_top = i + 1 == n;
            let need = i > 0 || need_input_grad;
            let (g, next) = layer.backward_inner(&carry, is_top && pre_activation_delta, need)?;
            grads.push(g);
            match next {
                Some(next) if i > 0 => carry = next,
                other => input = other,
            }
        }
        grads.reverse();
        Ok(BlockGrads {
            layers: grads,
            input,
        })
    }

    /// Reverse-mode pass from the gradient w.r.t. the block output. Includes the
    /// gradient w.r.t. the block input.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<BlockGrads> {
        self.backward_inner(upstream, false, true)
    }

    /// Like [`MlpBlock::backward`] but skips the input gradient.
    pub fn backward_params(&mut self, upstream: &Matrix) -> Result<BlockGrads> {
        self.backward_inner(upstream, false, false)
    }

    /// Starts from the gradient w.r.t. the top layer's pre-activation, as fused
    /// softmax/cross-entropy heads produce.
    pub fn backward_from_logits(
        &mut self,
        delta: &Matrix,
        need_input_grad: bool,
    ) -> Result<BlockGrads> {
        self.backward_inner(delta, true, need_input_grad)
    }
}
