//! Finite-difference suites over whole networks: plain blocks, every
//! component's two gradient flows, cross-component isolation, and the
//! backprop stack.

use std::fmt;

use serde::Serialize;

use crate::al::{AlNetwork, Component, Flow, Flows, NetworkPlan, SubBlock};
use crate::bp::{match_effective_params, BpLoss, BpNetwork};
use crate::data::one_hot;
use crate::error::Result;
use crate::linalg::{Matrix, Rng};
use crate::nn::gradcheck::{
    check_block_with, compare, numeric_gradient, pick, ErrorStats, GradCheckOptions,
};
use crate::nn::{softmax_cross_entropy, Activation, AdamConfig, MlpBlock};

/// Largest relative error a gradient may show.
pub const REL_TOLERANCE: f64 = 1e-4;
/// Largest absolute finite-difference derivative allowed across components.
pub const ISOLATION_TOLERANCE: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Relative(f64),
    Absolute(f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteRow {
    pub suite: &'static str,
    pub label: String,
    pub component: Option<usize>,
    pub sub_block: Option<SubBlock>,
    pub flow: Option<u8>,
    pub max_rel: f64,
    pub max_abs: f64,
    pub bound: Bound,
}

impl SuiteRow {
    pub fn error(&self) -> f64 {
        match self.bound {
            Bound::Relative(_) => self.max_rel,
            Bound::Absolute(_) => self.max_abs,
        }
    }

    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::Relative(t) | Bound::Absolute(t) => self.error() < t,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(SuiteRow::passed)
    }

    pub fn suite(&self, name: &str) -> impl Iterator<Item = &SuiteRow> {
        let name = name.to_string();
        self.rows.iter().filter(move |r| r.suite == name)
    }

    /// Worst relative error over rows with a relative bound.
    pub fn max_rel_error(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| matches!(r.bound, Bound::Relative(_)))
            .fold(0.0, |m, r| m.max(r.max_rel))
    }

    /// Worst absolute value over rows with an absolute bound.
    pub fn max_isolation_error(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| matches!(r.bound, Bound::Absolute(_)))
            .fold(0.0, |m, r| m.max(r.max_abs))
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:<22} {:>4} {:>5} {:>4} {:>11} {:>11} {:>14}  status",
            "suite", "check", "comp", "block", "flow", "max rel", "max abs", "bound"
        )?;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        for r in &self.rows {
            let bound = match r.bound {
                Bound::Relative(t) => format!("rel < {t:.0e}"),
                Bound::Absolute(t) => format!("abs < {t:.0e}"),
            };
            writeln!(
                f,
                "{:<10} {:<22} {:>4} {:>5} {:>4} {:>11.3e} {:>11.3e} {:>14}  {}",
                r.suite,
                r.label,
                opt(r.component.map(|c| c.to_string())),
                opt(r.sub_block.map(|s| s.to_string())),
                opt(r.flow.map(|v| v.to_string())),
                r.max_rel,
                r.max_abs,
                bound,
                if r.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub check: GradCheckOptions,
    pub batch: usize,
    /// Added to the first analytic gradient entry of every suite, so a run
    /// can demonstrate that the checker catches a wrong gradient.
    pub fault: Option<f64>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            check: GradCheckOptions {
                max_entries: Some(24),
                ..Default::default()
            },
            batch: 6,
            fault: None,
        }
    }
}

fn gaussian(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.standard_normal()).collect(),
    )
    .expect("sized buffer")
}

fn uniform(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.uniform()).collect(),
    )
    .expect("sized buffer")
}

fn row(suite: &'static str, label: String, stats: ErrorStats, bound: Bound) -> SuiteRow {
    SuiteRow {
        suite,
        label,
        component: None,
        sub_block: None,
        flow: None,
        max_rel: stats.rel,
        max_abs: stats.abs,
        bound,
    }
}

/// Small blocks over every hidden/output activation pairing, plus the fused
/// softmax cross-entropy head.
pub fn nn_suite(rng: &mut Rng, opts: &SuiteOptions) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    for hidden in [Activation::Elu, Activation::Sigmoid, Activation::Identity] {
        for output in [
            Activation::Elu,
            Activation::Sigmoid,
            Activation::Identity,
            Activation::Softmax,
        ] {
            let block = MlpBlock::he(&[5, 6, 4, 3], hidden, output, rng)?;
            let x = gaussian(rng, opts.batch, 5);
            let t = uniform(rng, opts.batch, 3);
            let fault = opts.fault.filter(|_| rows.is_empty());
            let report = check_block_with(&block, &x, &t, opts.check, fault)?;
            let stats = report
                .tensors
                .iter()
                .fold(ErrorStats::default(), |a, t| a.merge(t.stats));
            rows.push(row(
                "nn",
                format!("{}/{}", name(hidden), name(output)),
                stats,
                Bound::Relative(REL_TOLERANCE),
            ));
        }
    }

    let block = MlpBlock::he(&[5, 7, 4], Activation::Elu, Activation::Softmax, rng)?;
    let x = gaussian(rng, opts.batch, 5);
    let labels: Vec<usize> = (0..opts.batch).map(|i| i % 4).collect();
    let targets = one_hot(&labels, 4)?;
    let mut work = block.clone();
    let probs = work.forward(&x, true)?;
    let (_, delta) = softmax_cross_entropy(&probs, &targets)?;
    let grads = work.backward_from_logits(&delta, false)?;
    let mut probe = block;
    let mut stats = ErrorStats::default();
    for (k, g) in grads.tensors().into_iter().enumerate() {
        let entries = opts.check.entries(g.len());
        let numeric = numeric_gradient(
            &mut probe,
            |b: &mut MlpBlock| b.param_mut(k),
            |b: &MlpBlock| Ok(softmax_cross_entropy(&b.predict(&x)?, &targets)?.0),
            &entries,
            opts.check.eps,
        )?;
        stats = stats.merge(compare(&pick(g, &entries), &numeric));
    }
    rows.push(row(
        "nn",
        "softmax-ce head".into(),
        stats,
        Bound::Relative(REL_TOLERANCE),
    ));
    Ok(rows)
}

fn name(a: Activation) -> &'static str {
    match a {
        Activation::Elu => "elu",
        Activation::Sigmoid => "sigmoid",
        Activation::Identity => "identity",
        Activation::Softmax => "softmax",
    }
}

/// Evaluation-mode inputs `(s_{i−1}, t_{i−1})` of every component, as the
/// upstream components would send them.
fn component_inputs(net: &AlNetwork, x: &Matrix, t0: &Matrix) -> Result<Vec<(Matrix, Matrix)>> {
    let mut inputs = Vec::with_capacity(net.num_components());
    let (mut s, mut t) = (x.clone(), t0.clone());
    for c in net.components() {
        inputs.push((s.clone(), t.clone()));
        let out = c.evaluate(&s, &t)?;
        (s, t) = (out.s, out.t);
    }
    Ok(inputs)
}

fn flow_loss(flow: Flow) -> fn(&Component, &Matrix, &Matrix) -> Result<f64> {
    match flow {
        Flow::Associated => |c, s, t| Ok(c.local_objective(s, t)?.mse1),
        Flow::Autoencoder => |c, s, t| Ok(c.local_objective(s, t)?.mse2),
    }
}

/// One row per (component, sub-block, flow): the analytic gradient a flow
/// applies to a sub-block against finite differences of that flow's loss.
pub fn al_flow_suite(
    net: &AlNetwork,
    x: &Matrix,
    labels: &[usize],
    opts: &SuiteOptions,
) -> Result<Vec<SuiteRow>> {
    let t0 = one_hot(labels, net.n_classes())?;
    let inputs = component_inputs(net, x, &t0)?;
    let mut rows = Vec::new();
    for (component, (s_prev, t_prev)) in net.components().iter().zip(&inputs) {
        let mut work = component.clone();
        let (_, mut grads) = work.gradients(s_prev, t_prev, Flows::Both)?;
        if let (Some(delta), 1) = (opts.fault, component.index()) {
            if let Some(f) = grads.f.as_mut() {
                f.layers[0].weights.as_mut_slice()[0] += delta;
            }
        }
        for sub in SubBlock::ALL {
            let flow = sub.flow();
            let loss = flow_loss(flow);
            let analytic = grads.get(sub).expect("both flows computed");
            let mut probe = component.clone();
            let mut stats = ErrorStats::default();
            for (k, g) in analytic.tensors().into_iter().enumerate() {
                let entries = opts.check.entries(g.len());
                let numeric = numeric_gradient(
                    &mut probe,
                    |c: &mut Component| c.block_mut(sub).param_mut(k),
                    |c: &Component| loss(c, s_prev, t_prev),
                    &entries,
                    opts.check.eps,
                )?;
                stats = stats.merge(compare(&pick(g, &entries), &numeric));
            }
            rows.push(SuiteRow {
                component: Some(component.index()),
                sub_block: Some(sub),
                flow: Some(flow.number()),
                ..row(
                    "al-flow",
                    format!("c{}.{} via mse{}", component.index(), sub, flow.number()),
                    stats,
                    Bound::Relative(REL_TOLERANCE),
                )
            })
        }
    }
    Ok(rows)
}

/// Derivatives of component `i`'s local objective with respect to the
/// parameters of every other component `j`. For `j > i` the objective is
/// evaluated through the whole network from the raw batch; for `j < i` it is
/// evaluated on the inputs component `i` receives, which are plain values once
/// sent. Every entry must vanish.
pub fn al_isolation_suite(
    net: &AlNetwork,
    x: &Matrix,
    labels: &[usize],
    opts: &SuiteOptions,
) -> Result<Vec<SuiteRow>> {
    let t0 = one_hot(labels, net.n_classes())?;
    let received = component_inputs(net, x, &t0)?;
    let c = net.num_components();
    let mut rows = Vec::new();
    for i in 1..=c {
        let mut stats = ErrorStats::default();
        for j in (1..=c).filter(|&j| j != i) {
            let mut probe = net.clone();
            for sub in SubBlock::ALL {
                for k in 0..net.component(j).block(sub).num_tensors() {
                    let len = net.component(j).block(sub).params()[k].len();
                    let entries = opts.check.entries(len);
                    let numeric = numeric_gradient(
                        &mut probe,
                        |n: &mut AlNetwork| n.component_mut(j).block_mut(sub).param_mut(k),
                        |n: &AlNetwork| {
                            let (s, t) = if j > i {
                                component_inputs(n, x, &t0)?.swap_remove(i - 1)
                            } else {
                                received[i - 1].clone()
                            };
                            Ok(n.component(i).local_objective(&s, &t)?.local_objective())
                        },
                        &entries,
                        opts.check.eps,
                    )?;
                    stats = stats.merge(compare(&vec![0.0; numeric.len()], &numeric));
                }
            }
        }
        rows.push(SuiteRow {
            component: Some(i),
            ..row(
                "al-isolate",
                format!("objective c{i} vs others"),
                stats,
                Bound::Absolute(ISOLATION_TOLERANCE),
            )
        });
    }
    Ok(rows)
}

/// Every tensor of the backprop stack against finite differences of its loss.
pub fn bp_suite(
    net: &BpNetwork,
    x: &Matrix,
    labels: &[usize],
    opts: &SuiteOptions,
) -> Result<Vec<SuiteRow>> {
    let targets = one_hot(labels, net.n_classes())?;
    let mut work = net.clone();
    let (_, mut grads) = work.gradients(x, &targets)?;
    if let Some(delta) = opts.fault {
        grads.layers[0].weights.as_mut_slice()[0] += delta;
    }
    let mut probe = net.clone();
    let mut rows = Vec::new();
    let head = match net.plan().loss {
        BpLoss::CrossEntropy => "ce",
        BpLoss::Mse => "mse",
    };
    for (k, g) in grads.tensors().into_iter().enumerate() {
        let entries = opts.check.entries(g.len());
        let numeric = numeric_gradient(
            &mut probe,
            |n: &mut BpNetwork| n.block_mut().param_mut(k),
            |n: &BpNetwork| n.loss(x, labels),
            &entries,
            opts.check.eps,
        )?;
        let kind = if k % 2 == 0 { "W" } else { "b" };
        rows.push(row(
            "bp",
            format!("{head} layer{}.{kind}", k / 2),
            compare(&pick(g, &entries), &numeric),
            Bound::Relative(REL_TOLERANCE),
        ));
    }
    Ok(rows)
}

/// All suites on freshly initialized networks built from `plan` and `seed`.
pub fn run_all(plan: &NetworkPlan, seed: u64, opts: &SuiteOptions) -> Result<SuiteReport> {
    let mut rng = Rng::new(seed);
    let mut rows = nn_suite(&mut rng, opts)?;

    let net = AlNetwork::build(plan, &mut rng, AdamConfig::default())?;
    let x = uniform(&mut rng, opts.batch, plan.input_dim);
    let labels: Vec<usize> = (0..opts.batch).map(|i| i % plan.n_classes).collect();
    rows.extend(al_flow_suite(&net, &x, &labels, opts)?);
    rows.extend(al_isolation_suite(&net, &x, &labels, opts)?);

    for loss in [BpLoss::CrossEntropy, BpLoss::Mse] {
        let bp_plan = crate::bp::BpPlan {
            loss,
            ..match_effective_params(plan)
        };
        let bp = BpNetwork::build(&bp_plan, &mut rng, AdamConfig::default())?;
        rows.extend(bp_suite(&bp, &x, &labels, opts)?);
    }
    Ok(SuiteReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_plan_passes_every_suite() {
        let report = run_all(
            &NetworkPlan::named("toy").unwrap(),
            1,
            &SuiteOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.suite("al-flow").count(), 3 * 4);
        assert_eq!(report.suite("al-isolate").count(), 3);
    }

    #[test]
    fn planted_fault_fails_every_gradient_suite() {
        let opts = SuiteOptions {
            fault: Some(0.5),
            ..Default::default()
        };
        let report = run_all(&NetworkPlan::named("toy").unwrap(), 1, &opts).unwrap();
        assert!(!report.passed());
        for suite in ["nn", "al-flow", "bp"] {
            assert!(
                report.suite(suite).any(|r| !r.passed()),
                "{suite} missed the fault"
            );
        }
    }
}
