//! One associated-learning component.
//!
//! Four sub-networks: the associated function `f` (s side), the encoder `g` and
//! decoder `h` (t side), and the bridge `b` mapping `s_i` into t space. Two
//! local losses drive two disjoint gradient flows:
//!
//! - associated loss `‖b(s_i) − t_i‖²` updates `b` then `f`, with `t_i` held
//!   constant;
//! - autoencoder loss `‖h(t_i) − t_{i−1}‖²` updates `h` then `g`.
//!
//! Neither flow reaches the component inputs, so no gradient crosses a
//! component boundary.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::nn::{
    adam_for, adam_step, mse, mse_loss, Activation, AdamConfig, AdamState, BlockGrads, MlpBlock,
};

use super::plan::{ComponentDims, ComponentPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubBlock {
    F,
    G,
    B,
    H,
}

impl SubBlock {
    pub const ALL: [SubBlock; 4] = [SubBlock::F, SubBlock::G, SubBlock::B, SubBlock::H];

    pub fn name(self) -> &'static str {
        match self {
            SubBlock::F => "f",
            SubBlock::G => "g",
            SubBlock::B => "b",
            SubBlock::H => "h",
        }
    }

    /// The flow (1 = associated, 2 = autoencoder) that updates this sub-block.
    pub fn flow(self) -> Flow {
        match self {
            SubBlock::F | SubBlock::B => Flow::Associated,
            SubBlock::G | SubBlock::H => Flow::Autoencoder,
        }
    }
}

impl fmt::Display for SubBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flow {
    /// Gradient of the associated loss, into `b` and `f`.
    Associated,
    /// Gradient of the autoencoder loss, into `h` and `g`.
    Autoencoder,
}

impl Flow {
    pub fn number(self) -> u8 {
        match self {
            Flow::Associated => 1,
            Flow::Autoencoder => 2,
        }
    }
}

/// Which flows an update applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flows {
    Both,
    Only(Flow),
}

impl Flows {
    fn includes(self, flow: Flow) -> bool {
        match self {
            Flows::Both => true,
            Flows::Only(f) => f == flow,
        }
    }
}

/// Local losses of one component on one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// 1-based component index.
    pub component: usize,
    /// Associated loss `‖b(s_i) − t_i‖²`.
    pub mse1: f64,
    /// Autoencoder loss `‖h(g(t_{i−1})) − t_{i−1}‖²`.
    pub mse2: f64,
}

impl LossRecord {
    pub fn local_objective(&self) -> f64 {
        self.mse1 + self.mse2
    }
}

/// Outputs handed to the next component plus this component's losses. `s` and
/// `t` are plain values; nothing links them back to this component's parameters.
#[derive(Clone, Debug)]
pub struct ComponentOutput {
    pub s: Matrix,
    pub t: Matrix,
    pub losses: LossRecord,
}

/// Per-sub-block gradients of one component's local objective.
#[derive(Clone, Debug)]
pub struct ComponentGrads {
    pub f: Option<BlockGrads>,
    pub g: Option<BlockGrads>,
    pub b: Option<BlockGrads>,
    pub h: Option<BlockGrads>,
}

impl ComponentGrads {
    pub fn get(&self, which: SubBlock) -> Option<&BlockGrads> {
        match which {
            SubBlock::F => self.f.as_ref(),
            SubBlock::G => self.g.as_ref(),
            SubBlock::B => self.b.as_ref(),
            SubBlock::H => self.h.as_ref(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Component {
    index: usize,
    f: MlpBlock,
    g: MlpBlock,
    b: MlpBlock,
    h: MlpBlock,
    f_opt: AdamState,
    g_opt: AdamState,
    b_opt: AdamState,
    h_opt: AdamState,
}

impl Component {
    /// Assembles a component from its four blocks, checking that they fit:
    /// `b: s_out → t_out`, `g: t_in → t_out`, `h: t_out → t_in`.
    pub fn new(
        index: usize,
        f: MlpBlock,
        g: MlpBlock,
        b: MlpBlock,
        h: MlpBlock,
        adam: AdamConfig,
    ) -> Result<Self> {
        if index == 0 {
            return Err(Error::InvalidConfig("component indices are 1-based".into()));
        }
        let check = |what: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "component {index}: {what} (f {:?}, g {:?}, b {:?}, h {:?})",
                    f.widths(),
                    g.widths(),
                    b.widths(),
                    h.widths()
                )))
            }
        };
        check(
            "bridge input must equal f output",
            b.in_dim() == f.out_dim(),
        )?;
        check(
            "bridge output must equal g output",
            b.out_dim() == g.out_dim(),
        )?;
        check(
            "decoder input must equal g output",
            h.in_dim() == g.out_dim(),
        )?;
        check(
            "decoder output must equal g input",
            h.out_dim() == g.in_dim(),
        )?;
        Ok(Self {
            index,
            f_opt: adam_for(&f, adam),
            g_opt: adam_for(&g, adam),
            b_opt: adam_for(&b, adam),
            h_opt: adam_for(&h, adam),
            f,
            g,
            b,
            h,
        })
    }

    /// He-initialized component: ELU `f`, sigmoid `g`, `b`, `h`.
    pub fn from_plan(
        index: usize,
        dims: &ComponentDims,
        plan: &ComponentPlan,
        rng: &mut Rng,
        adam: AdamConfig,
    ) -> Result<Self> {
        let chain = |input: usize, hidden: &[usize], output: usize| {
            std::iter::once(input)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(output))
                .collect::<Vec<_>>()
        };
        let f = MlpBlock::he(
            &chain(dims.s_in, &plan.f_hidden, dims.s_out),
            Activation::Elu,
            Activation::Elu,
            rng,
        )?;
        let g = MlpBlock::he(
            &chain(dims.t_in, &plan.g_hidden, dims.t_out),
            Activation::Sigmoid,
            Activation::Sigmoid,
            rng,
        )?;
        let b = MlpBlock::he(
            &chain(dims.s_out, &plan.b_hidden, dims.t_out),
            Activation::Sigmoid,
            Activation::Sigmoid,
            rng,
        )?;
        let h = MlpBlock::he(
            &chain(dims.t_out, &plan.h_hidden, dims.t_in),
            Activation::Sigmoid,
            Activation::Sigmoid,
            rng,
        )?;
        Self::new(index, f, g, b, h, adam)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dims(&self) -> ComponentDims {
        ComponentDims {
            s_in: self.f.in_dim(),
            s_out: self.f.out_dim(),
            t_in: self.g.in_dim(),
            t_out: self.g.out_dim(),
        }
    }

    pub fn block(&self, which: SubBlock) -> &MlpBlock {
        match which {
            SubBlock::F => &self.f,
            SubBlock::G => &self.g,
            SubBlock::B => &self.b,
            SubBlock::H => &self.h,
        }
    }

    pub fn block_mut(&mut self, which: SubBlock) -> &mut MlpBlock {
        match which {
            SubBlock::F => &mut self.f,
            SubBlock::G => &mut self.g,
            SubBlock::B => &mut self.b,
            SubBlock::H => &mut self.h,
        }
    }

    pub fn optimizer(&self, which: SubBlock) -> &AdamState {
        match which {
            SubBlock::F => &self.f_opt,
            SubBlock::G => &self.g_opt,
            SubBlock::B => &self.b_opt,
            SubBlock::H => &self.h_opt,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        for opt in [
            &mut self.f_opt,
            &mut self.g_opt,
            &mut self.b_opt,
            &mut self.h_opt,
        ] {
            opt.set_lr(lr);
        }
    }

    pub fn num_params(&self) -> usize {
        SubBlock::ALL
            .iter()
            .map(|&s| self.block(s).num_params())
            .sum()
    }

    fn check_inputs(&self, s_prev: &Matrix, t_prev: &Matrix) -> Result<()> {
        if s_prev.cols() != self.f.in_dim() {
            return Err(Error::shape(
                "component s input",
                s_prev.shape(),
                (s_prev.rows(), self.f.in_dim()),
            ));
        }
        if t_prev.cols() != self.g.in_dim() {
            return Err(Error::shape(
                "component t input",
                t_prev.shape(),
                (t_prev.rows(), self.g.in_dim()),
            ));
        }
        if s_prev.rows() != t_prev.rows() {
            return Err(Error::shape(
                "component batch",
                s_prev.shape(),
                t_prev.shape(),
            ));
        }
        Ok(())
    }

    fn ensure_finite(&self, what: &str, m: &Matrix) -> Result<()> {
        if m.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                component: self.index,
                context: format!("{what} contains NaN or infinity"),
            })
        }
    }

    /// `s_i = f(s_prev)`, `t_i = g(t_prev)` and both local losses. Training mode
    /// leaves the caches the update needs.
    pub fn forward(
        &mut self,
        s_prev: &Matrix,
        t_prev: &Matrix,
        train: bool,
    ) -> Result<ComponentOutput> {
        self.check_inputs(s_prev, t_prev)?;
        let s = self.f.forward(s_prev, train)?;
        let t = self.g.forward(t_prev, train)?;
        let s_bridged = self.b.forward(&s, train)?;
        let t_decoded = self.h.forward(&t, train)?;
        self.finish(s, t, &s_bridged, &t_decoded, t_prev)
    }

    /// Evaluation-mode forward without touching any cache.
    pub fn evaluate(&self, s_prev: &Matrix, t_prev: &Matrix) -> Result<ComponentOutput> {
        self.check_inputs(s_prev, t_prev)?;
        let s = self.f.predict(s_prev)?;
        let t = self.g.predict(t_prev)?;
        let s_bridged = self.b.predict(&s)?;
        let t_decoded = self.h.predict(&t)?;
        self.finish(s, t, &s_bridged, &t_decoded, t_prev)
    }

    fn finish(
        &self,
        s: Matrix,
        t: Matrix,
        s_bridged: &Matrix,
        t_decoded: &Matrix,
        t_prev: &Matrix,
    ) -> Result<ComponentOutput> {
        self.ensure_finite("s", &s)?;
        self.ensure_finite("t", &t)?;
        self.ensure_finite("bridge output", s_bridged)?;
        self.ensure_finite("decoder output", t_decoded)?;
        let losses = LossRecord {
            component: self.index,
            mse1: mse_loss(s_bridged, &t)?,
            mse2: mse_loss(t_decoded, t_prev)?,
        };
        Ok(ComponentOutput { s, t, losses })
    }

    /// Local objective `mse1 + mse2` on a batch, evaluation mode.
    pub fn local_objective(&self, s_prev: &Matrix, t_prev: &Matrix) -> Result<LossRecord> {
        Ok(self.evaluate(s_prev, t_prev)?.losses)
    }

    /// Gradients of the selected flows without applying them.
    pub fn gradients(
        &mut self,
        s_prev: &Matrix,
        t_prev: &Matrix,
        flows: Flows,
    ) -> Result<(ComponentOutput, ComponentGrads)> {
        self.check_inputs(s_prev, t_prev)?;
        let s = self.f.forward(s_prev, true)?;
        let t = self.g.forward(t_prev, true)?;
        let s_bridged = self.b.forward(&s, true)?;
        let t_decoded = self.h.forward(&t, true)?;

        let mut grads = ComponentGrads {
            f: None,
            g: None,
            b: None,
            h: None,
        };
        if flows.includes(Flow::Associated) {
            // t is a constant target here: the encoder gets nothing from this loss
            let (_, d_bridged) = mse(&s_bridged, &t)?;
            let b_grads = self.b.backward(&d_bridged)?;
            let d_s = b_grads.input.as_ref().expect("bridge input gradient");
            grads.f = Some(self.f.backward_params(d_s)?);
            grads.b = Some(b_grads);
        }
        if flows.includes(Flow::Autoencoder) {
            let (_, d_decoded) = mse(&t_decoded, t_prev)?;
            let h_grads = self.h.backward(&d_decoded)?;
            let d_t = h_grads.input.as_ref().expect("decoder input gradient");
            grads.g = Some(self.g.backward_params(d_t)?);
            grads.h = Some(h_grads);
        }
        let out = self.finish(s, t, &s_bridged, &t_decoded, t_prev)?;
        Ok((out, grads))
    }

    /// Applies gradients with each sub-block's own Adam state.
    pub fn apply(&mut self, grads: &ComponentGrads) -> Result<()> {
        if let Some(g) = &grads.f {
            adam_step(&mut self.f, g, &mut self.f_opt)?;
        }
        if let Some(g) = &grads.b {
            adam_step(&mut self.b, g, &mut self.b_opt)?;
        }
        if let Some(g) = &grads.g {
            adam_step(&mut self.g, g, &mut self.g_opt)?;
        }
        if let Some(g) = &grads.h {
            adam_step(&mut self.h, g, &mut self.h_opt)?;
        }
        Ok(())
    }

    /// One training step on a batch with both flows. Returns the outputs of the
    /// pre-update forward pass, which is what the next component consumes.
    pub fn update(&mut self, s_prev: &Matrix, t_prev: &Matrix) -> Result<ComponentOutput> {
        self.update_flows(s_prev, t_prev, Flows::Both)
    }

    pub fn update_flows(
        &mut self,
        s_prev: &Matrix,
        t_prev: &Matrix,
        flows: Flows,
    ) -> Result<ComponentOutput> {
        let (out, grads) = self.gradients(s_prev, t_prev, flows)?;
        self.apply(&grads)?;
        Ok(out)
    }
}
