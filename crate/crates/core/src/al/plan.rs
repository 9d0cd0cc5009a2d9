use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widths of one component. Hidden lists hold the widths between a block's input
/// and output; an empty list means a single dense layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentPlan {
    pub s_out: usize,
    pub t_out: usize,
    #[serde(default)]
    pub f_hidden: Vec<usize>,
    #[serde(default)]
    pub g_hidden: Vec<usize>,
    pub b_hidden: Vec<usize>,
    #[serde(default)]
    pub h_hidden: Vec<usize>,
}

impl ComponentPlan {
    /// One-layer f, g, h and a two-layer bridge whose hidden width is `bridge_hidden`.
    pub fn standard(s_out: usize, t_out: usize, bridge_hidden: usize) -> Self {
        Self {
            s_out,
            t_out,
            f_hidden: Vec::new(),
            g_hidden: Vec::new(),
            b_hidden: vec![bridge_hidden],
            h_hidden: Vec::new(),
        }
    }
}

/// Dimension plan for a whole network: input width, class count and one entry
/// per component, bottom to top.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkPlan {
    pub input_dim: usize,
    pub n_classes: usize,
    pub components: Vec<ComponentPlan>,
}

/// Resolved dimensions of component `i` within a plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentDims {
    pub s_in: usize,
    pub s_out: usize,
    pub t_in: usize,
    pub t_out: usize,
}

pub const PLAN_NAMES: &[&str] = &[
    "wide-mlp",
    "desk-mlp",
    "desk-mlp-3",
    "small-mlp",
    "toy",
    "xor",
];

impl NetworkPlan {
    /// `count` components whose s and t are all `width` wide. Bridges are two
    /// layers; lower bridges have hidden width `width`, the top one `top_bridge_hidden`.
    pub fn uniform(
        input_dim: usize,
        n_classes: usize,
        count: usize,
        width: usize,
        top_bridge_hidden: usize,
    ) -> Self {
        let components = (0..count)
            .map(|i| {
                let hidden = if i + 1 == count {
                    top_bridge_hidden
                } else {
                    width
                };
                ComponentPlan::standard(width, width, hidden)
            })
            .collect();
        Self {
            input_dim,
            n_classes,
            components,
        }
    }

    /// Built-in plans:
    ///
    /// | name         | input | classes | components | s/t width | top bridge hidden |
    /// |--------------|-------|---------|------------|-----------|-------------------|
    /// | `wide-mlp`   | 784   | 10      | 2          | 1024      | 5120              |
    /// | `desk-mlp`   | 784   | 10      | 2          | 256       | 512               |
    /// | `desk-mlp-3` | 784   | 10      | 3          | 256       | 512               |
    /// | `small-mlp`  | 784   | 10      | 3          | 64        | 128               |
    /// | `toy`        | 6     | 3       | 3          | 5         | 7                 |
    /// | `xor`        | 2     | 2       | 1          | 16        | 16                |
    pub fn named(name: &str) -> Result<Self> {
        Ok(match name {
            "wide-mlp" => Self::uniform(784, 10, 2, 1024, 5120),
            "desk-mlp" => Self::uniform(784, 10, 2, 256, 512),
            "desk-mlp-3" => Self::uniform(784, 10, 3, 256, 512),
            "small-mlp" => Self::uniform(784, 10, 3, 64, 128),
            "toy" => Self::uniform(6, 3, 3, 5, 7),
            "xor" => Self::uniform(2, 2, 1, 16, 16),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown plan {other:?}; known plans: {}",
                    PLAN_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidConfig(
                "a network needs at least one component".into(),
            ));
        }
        if self.input_dim == 0 || self.n_classes == 0 {
            return Err(Error::InvalidConfig(
                "input_dim and n_classes must be positive".into(),
            ));
        }
        for (i, c) in self.components.iter().enumerate() {
            let widths = [c.s_out, c.t_out]
                .into_iter()
                .chain(c.f_hidden.iter().copied())
                .chain(c.g_hidden.iter().copied())
                .chain(c.b_hidden.iter().copied())
                .chain(c.h_hidden.iter().copied());
            for w in widths {
                if w == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "component {} has a zero width",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Dimensions of component `i` (0-based). Component 1's s input is the
    /// feature vector and its t input the one-hot label.
    pub fn dims(&self, i: usize) -> ComponentDims {
        let (s_in, t_in) = if i == 0 {
            (self.input_dim, self.n_classes)
        } else {
            let prev = &self.components[i - 1];
            (prev.s_out, prev.t_out)
        };
        let c = &self.components[i];
        ComponentDims {
            s_in,
            s_out: c.s_out,
            t_in,
            t_out: c.t_out,
        }
    }

    /// Block widths `[in, hidden..., out]` for f, g, b, h of component `i`.
    pub fn block_widths(&self, i: usize) -> [Vec<usize>; 4] {
        let d = self.dims(i);
        let c = &self.components[i];
        let chain = |input: usize, hidden: &[usize], output: usize| {
            std::iter::once(input)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(output))
                .collect::<Vec<_>>()
        };
        [
            chain(d.s_in, &c.f_hidden, d.s_out),
            chain(d.t_in, &c.g_hidden, d.t_out),
            chain(d.s_out, &c.b_hidden, d.t_out),
            chain(d.t_out, &c.h_hidden, d.t_in),
        ]
    }
}

fn dense_params(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl NetworkPlan {
    /// Parameters used at inference: every f and h, plus the top bridge.
    pub fn effective_param_count(&self) -> usize {
        let top = self.components.len() - 1;
        (0..self.components.len())
            .map(|i| {
                let [f, _, b, h] = self.block_widths(i);
                dense_params(&f) + dense_params(&h) + if i == top { dense_params(&b) } else { 0 }
            })
            .sum()
    }

    pub fn total_param_count(&self) -> usize {
        (0..self.components.len())
            .map(|i| {
                self.block_widths(i)
                    .iter()
                    .map(|w| dense_params(w))
                    .sum::<usize>()
            })
            .sum()
    }
}
