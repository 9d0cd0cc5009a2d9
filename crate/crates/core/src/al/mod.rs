//! Associated learning: networks of components trained on local objectives.

mod component;
mod network;
mod plan;

pub use component::{
    Component, ComponentGrads, ComponentOutput, Flow, Flows, LossRecord, SubBlock,
};
pub use network::AlNetwork;
pub use plan::{ComponentDims, ComponentPlan, NetworkPlan, PLAN_NAMES};
