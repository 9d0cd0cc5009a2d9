//! Layers, activations, losses, the Adam optimizer, and a finite-difference
//! gradient checker. Shared by the associated-learning and backprop networks.

mod activation;
mod adam;
pub mod gradcheck;
mod layer;
mod loss;

pub use activation::{elu, elu_grad, sigmoid, sigmoid_grad, Activation};
pub use adam::{AdamConfig, AdamState};
pub use layer::{BlockGrads, DenseLayer, LayerGrads, MlpBlock};
pub use loss::{mse, mse_grad, mse_loss, softmax_cross_entropy};

use crate::error::Result;

/// Fresh Adam state sized for `block`.
pub fn adam_for(block: &MlpBlock, config: AdamConfig) -> AdamState {
    AdamState::new(&block.params(), config)
}

/// Applies one Adam step of `grads` to `block`.
pub fn adam_step(block: &mut MlpBlock, grads: &BlockGrads, state: &mut AdamState) -> Result<()> {
    state.update(&mut block.params_mut(), &grads.tensors())
}
