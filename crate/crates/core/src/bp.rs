//! End-to-end backpropagation baseline.
//!
//! The stack copies the layer widths of an associated-learning network's
//! inference path (every `f`, the top bridge, every `h` in reverse), so both
//! networks train the same number of parameters.

use serde::{Deserialize, Serialize};

use crate::al::NetworkPlan;
use crate::data::one_hot;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::nn::{
    adam_for, adam_step, mse, softmax_cross_entropy, Activation, AdamConfig, AdamState, MlpBlock,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BpLoss {
    /// Softmax head with cross-entropy.
    #[default]
    CrossEntropy,
    /// Sigmoid head with squared error against the one-hot label.
    Mse,
}

impl BpLoss {
    pub fn head(self) -> Activation {
        match self {
            BpLoss::CrossEntropy => Activation::Softmax,
            BpLoss::Mse => Activation::Sigmoid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpPlan {
    /// `[input, hidden..., classes]`.
    pub widths: Vec<usize>,
    /// Number of dense layers up to and including the last `f` layer. The
    /// activations after that layer are the baseline's metafeatures.
    pub feature_layers: usize,
    #[serde(default)]
    pub loss: BpLoss,
}

impl BpPlan {
    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// The baseline matching `plan`'s inference path layer for layer.
pub fn match_effective_params(plan: &NetworkPlan) -> BpPlan {
    let c = plan.num_components();
    let mut widths = vec![plan.input_dim];
    for i in 0..c {
        widths.extend_from_slice(&plan.block_widths(i)[0][1..]);
    }
    let feature_layers = widths.len() - 1;
    widths.extend_from_slice(&plan.block_widths(c - 1)[2][1..]);
    for i in (0..c).rev() {
        widths.extend_from_slice(&plan.block_widths(i)[3][1..]);
    }
    BpPlan {
        widths,
        feature_layers,
        loss: BpLoss::CrossEntropy,
    }
}

#[derive(Clone, Debug)]
pub struct BpNetwork {
    plan: BpPlan,
    block: MlpBlock,
    opt: AdamState,
}

impl BpNetwork {
    pub fn build(plan: &BpPlan, rng: &mut Rng, adam: AdamConfig) -> Result<Self> {
        if plan.widths.len() < 2
            || plan.feature_layers == 0
            || plan.feature_layers >= plan.widths.len()
        {
            return Err(Error::InvalidConfig(format!(
                "bad baseline plan: widths {:?}, feature layer {}",
                plan.widths, plan.feature_layers
            )));
        }
        let block = MlpBlock::he(&plan.widths, Activation::Elu, plan.loss.head(), rng)?;
        Self::from_block(plan.clone(), block, adam)
    }

    pub fn from_block(plan: BpPlan, block: MlpBlock, adam: AdamConfig) -> Result<Self> {
        if block.widths() != plan.widths {
            return Err(Error::InvalidConfig(format!(
                "block widths {:?} differ from plan {:?}",
                block.widths(),
                plan.widths
            )));
        }
        Ok(Self {
            opt: adam_for(&block, adam),
            plan,
            block,
        })
    }

    pub fn plan(&self) -> &BpPlan {
        &self.plan
    }

    pub fn block(&self) -> &MlpBlock {
        &self.block
    }

    pub fn block_mut(&mut self) -> &mut MlpBlock {
        &mut self.block
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.opt
    }

    pub fn n_classes(&self) -> usize {
        self.block.out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.block.num_params()
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt.set_lr(lr);
    }

    /// Class scores: probabilities for the softmax head, sigmoid outputs otherwise.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.block.predict(x)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.infer(x)?.row_argmax())
    }

    /// Activations after the last layer corresponding to an `f` block.
    pub fn metafeatures(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for layer in &self.block.layers()[..self.plan.feature_layers] {
            h = layer.predict(&h)?;
        }
        Ok(h)
    }

    fn loss_of(&self, out: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
        match self.plan.loss {
            BpLoss::CrossEntropy => softmax_cross_entropy(out, targets),
            BpLoss::Mse => mse(out, targets),
        }
    }

    /// Mean batch loss in evaluation mode.
    pub fn loss(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let targets = one_hot(labels, self.n_classes())?;
        Ok(self.loss_of(&self.infer(x)?, &targets)?.0)
    }

    /// Loss and parameter gradients for one batch, without updating.
    pub fn gradients(
        &mut self,
        x: &Matrix,
        targets: &Matrix,
    ) -> Result<(f64, crate::nn::BlockGrads)> {
        let out = self.block.forward(x, true)?;
        let (loss, grad) = self.loss_of(&out, targets)?;
        let grads = match self.plan.loss {
            BpLoss::CrossEntropy => self.block.backward_from_logits(&grad, false)?,
            BpLoss::Mse => self.block.backward_params(&grad)?,
        };
        Ok((loss, grads))
    }

    /// One Adam step; returns the pre-update batch loss.
    pub fn train_batch(&mut self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let targets = one_hot(labels, self.n_classes())?;
        let (loss, grads) = self.gradients(x, &targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                component: 0,
                context: format!("baseline loss is {loss}"),
            });
        }
        adam_step(&mut self.block, &grads, &mut self.opt)?;
        Ok(loss)
    }
}
