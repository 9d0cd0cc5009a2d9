use crate::data::one_hot;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::nn::AdamConfig;

use super::component::{Component, ComponentOutput, LossRecord, SubBlock};
use super::plan::NetworkPlan;

/// A stack of components. Training runs each component on its own local
/// objective; inference runs the s path up through the top bridge and then the
/// decoders back down to label space.
#[derive(Clone, Debug)]
pub struct AlNetwork {
    plan: NetworkPlan,
    components: Vec<Component>,
}

impl AlNetwork {
    pub fn build(plan: &NetworkPlan, rng: &mut Rng, adam: AdamConfig) -> Result<Self> {
        plan.validate()?;
        let components = plan
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| Component::from_plan(i + 1, &plan.dims(i), c, rng, adam))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            plan: plan.clone(),
            components,
        })
    }

    /// Wraps hand-built components, checking that each one's inputs match the
    /// previous one's outputs.
    pub fn from_components(
        input_dim: usize,
        n_classes: usize,
        components: Vec<Component>,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidConfig(
                "a network needs at least one component".into(),
            ));
        }
        let (mut s, mut t) = (input_dim, n_classes);
        let mut plans = Vec::with_capacity(components.len());
        for (i, c) in components.iter().enumerate() {
            let d = c.dims();
            if c.index() != i + 1 {
                return Err(Error::InvalidConfig(format!(
                    "component at position {} carries index {}",
                    i + 1,
                    c.index()
                )));
            }
            if d.s_in != s || d.t_in != t {
                return Err(Error::InvalidConfig(format!(
                    "component {} expects inputs ({}, {}) but receives ({s}, {t})",
                    i + 1,
                    d.s_in,
                    d.t_in
                )));
            }
            let hidden = |b: SubBlock| {
                let w = c.block(b).widths();
                w[1..w.len() - 1].to_vec()
            };
            plans.push(super::ComponentPlan {
                s_out: d.s_out,
                t_out: d.t_out,
                f_hidden: hidden(SubBlock::F),
                g_hidden: hidden(SubBlock::G),
                b_hidden: hidden(SubBlock::B),
                h_hidden: hidden(SubBlock::H),
            });
            (s, t) = (d.s_out, d.t_out);
        }
        Ok(Self {
            plan: NetworkPlan {
                input_dim,
                n_classes,
                components: plans,
            },
            components,
        })
    }

    pub fn plan(&self) -> &NetworkPlan {
        &self.plan
    }

    pub fn n_classes(&self) -> usize {
        self.plan.n_classes
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [Component] {
        &mut self.components
    }

    /// Component by 1-based index.
    pub fn component(&self, index: usize) -> &Component {
        &self.components[index - 1]
    }

    pub fn component_mut(&mut self, index: usize) -> &mut Component {
        &mut self.components[index - 1]
    }

    pub fn into_components(self) -> Vec<Component> {
        self.components
    }

    /// Moves the components out, leaving the network empty until
    /// [`AlNetwork::restore_components`] puts them back.
    pub fn take_components(&mut self) -> Vec<Component> {
        std::mem::take(&mut self.components)
    }

    pub fn restore_components(&mut self, components: Vec<Component>) -> Result<()> {
        if components.len() != self.plan.num_components() {
            return Err(Error::Worker {
                component: components.len() + 1,
                message: "component lost during training".into(),
            });
        }
        self.components = components;
        Ok(())
    }

    pub fn set_lr(&mut self, lr: f64) {
        for c in &mut self.components {
            c.set_lr(lr);
        }
    }

    /// Whether a sub-block takes part in inference.
    pub fn is_effective(&self, index: usize, which: SubBlock) -> bool {
        match which {
            SubBlock::F | SubBlock::H => true,
            SubBlock::B => index == self.components.len(),
            SubBlock::G => false,
        }
    }

    pub fn effective_param_count(&self) -> usize {
        self.components
            .iter()
            .flat_map(|c| SubBlock::ALL.map(|s| (c, s)))
            .filter(|(c, s)| self.is_effective(c.index(), *s))
            .map(|(c, s)| c.block(s).num_params())
            .sum()
    }

    pub fn total_param_count(&self) -> usize {
        self.components.iter().map(Component::num_params).sum()
    }

    fn check_labels(&self, x: &Matrix, labels: &[usize]) -> Result<Matrix> {
        if labels.len() != x.rows() {
            return Err(Error::shape("labels", (labels.len(), 1), (x.rows(), 1)));
        }
        one_hot(labels, self.n_classes())
    }

    /// `s_C`, the top of the s path.
    pub fn metafeatures(&self, x: &Matrix) -> Result<Matrix> {
        let mut s = x.clone();
        for c in &self.components {
            s = c.block(SubBlock::F).predict(&s)?;
        }
        Ok(s)
    }

    /// Label-space scores `h_1(…h_C(b_C(s_C)))`.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let top = self.components.last().expect("non-empty network");
        let mut t = top.block(SubBlock::B).predict(&self.metafeatures(x)?)?;
        for c in self.components.iter().rev() {
            t = c.block(SubBlock::H).predict(&t)?;
        }
        if !t.is_finite() {
            return Err(Error::NonFinite {
                component: 1,
                context: "inference output contains NaN or infinity".into(),
            });
        }
        Ok(t)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.infer(x)?.row_argmax())
    }

    /// Evaluation-mode pass through every component with labels, returning
    /// each component's local losses.
    pub fn local_losses(&self, x: &Matrix, labels: &[usize]) -> Result<Vec<LossRecord>> {
        let mut t = self.check_labels(x, labels)?;
        let mut s = x.clone();
        let mut out = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let o = c.evaluate(&s, &t)?;
            out.push(o.losses);
            (s, t) = (o.s, o.t);
        }
        Ok(out)
    }

    /// One sequential training step: component 1 updates, hands its pre-update
    /// outputs to component 2, and so on.
    pub fn train_batch(&mut self, x: &Matrix, labels: &[usize]) -> Result<Vec<LossRecord>> {
        let t0 = self.check_labels(x, labels)?;
        self.train_batch_onehot(x, &t0)
    }

    pub fn train_batch_onehot(&mut self, x: &Matrix, t0: &Matrix) -> Result<Vec<LossRecord>> {
        let mut out = Vec::with_capacity(self.components.len());
        let mut carry: Option<ComponentOutput> = None;
        for c in &mut self.components {
            let o = match &carry {
                None => c.update(x, t0)?,
                Some(prev) => c.update(&prev.s, &prev.t)?,
            };
            out.push(o.losses);
            carry = Some(o);
        }
        Ok(out)
    }
}
