//! Sequential and pipelined training of associated-learning networks, the
//! backprop baseline's epoch loop, learning-rate steps, and `fit`.

mod pipeline;
mod schedule;

pub use pipeline::{bench_sleep, run_pipeline, run_sequential, PipelineOptions, PipelineRun};
pub use schedule::{logical_units, makespan, Schedule, TaskSpan, ThroughputReport};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::al::{AlNetwork, Component, LossRecord};
use crate::bp::BpNetwork;
use crate::checkpoint;
use crate::data::{BatchIterator, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::metrics::{accuracy, chunks, local_loss_profile, MetricsRecord};

/// Activations and targets travelling from one component to the next.
#[derive(Clone, Debug)]
pub struct BatchMessage {
    pub epoch: usize,
    pub batch_id: usize,
    pub s: Matrix,
    pub t: Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "al-seq")]
    AlSequential,
    #[serde(rename = "al-pipe")]
    AlPipelined,
    #[serde(rename = "bp")]
    Bp,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::AlSequential => "al-seq",
            TrainMode::AlPipelined => "al-pipe",
            TrainMode::Bp => "bp",
        }
    }

    pub fn is_al(self) -> bool {
        !matches!(self, TrainMode::Bp)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "al-seq" => Ok(TrainMode::AlSequential),
            "al-pipe" => Ok(TrainMode::AlPipelined),
            "bp" => Ok(TrainMode::Bp),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode {other:?}; expected al-seq, al-pipe or bp"
            ))),
        }
    }
}

/// Step schedule: the rate is multiplied by `factor` after each epoch listed in
/// `drops`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub drops: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            drops: Vec::new(),
            factor: 1.0,
        }
    }

    pub fn standard(lr: f64) -> Self {
        Self {
            initial: lr,
            drops: vec![80, 120, 160, 180],
            factor: 0.5,
        }
    }

    /// Rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.drops.iter().filter(|&&d| epoch > d).count();
        self.initial * self.factor.powi(passed as i32)
    }
}

/// A network under training.
#[derive(Clone, Debug)]
pub enum Model {
    Al(AlNetwork),
    Bp(BpNetwork),
}

impl Model {
    pub fn n_classes(&self) -> usize {
        match self {
            Model::Al(n) => n.n_classes(),
            Model::Bp(n) => n.n_classes(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Model::Al(n) => n.set_lr(lr),
            Model::Bp(n) => n.set_lr(lr),
        }
    }

    pub fn effective_param_count(&self) -> usize {
        match self {
            Model::Al(n) => n.effective_param_count(),
            Model::Bp(n) => n.num_params(),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        match self {
            Model::Al(n) => n.predict(x),
            Model::Bp(n) => n.predict(x),
        }
    }

    pub fn metafeatures(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Model::Al(n) => n.metafeatures(x),
            Model::Bp(n) => n.metafeatures(x),
        }
    }

    /// Predicted classes for a whole dataset, evaluated in chunks.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(data.len());
        for idx in chunks(data.len()) {
            out.extend(self.predict(&data.x().select_rows(&idx))?);
        }
        Ok(out)
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        Ok(accuracy(&self.predict_dataset(data)?, data.labels()))
    }

    pub fn metafeatures_dataset(&self, data: &Dataset) -> Result<Matrix> {
        let mut rows = Vec::new();
        let mut cols = 0;
        for idx in chunks(data.len()) {
            let m = self.metafeatures(&data.x().select_rows(&idx))?;
            cols = m.cols();
            rows.extend(m.into_vec());
        }
        Matrix::new(data.len(), cols, rows)
    }

    /// Evaluation-mode training loss: the summed local objectives for AL, the
    /// head loss for the baseline. Per-component losses are returned for AL.
    pub fn evaluate_loss(&self, data: &Dataset) -> Result<(f64, Vec<LossRecord>)> {
        match self {
            Model::Al(n) => {
                let profile = local_loss_profile(n, data)?;
                Ok((
                    profile.iter().map(LossRecord::local_objective).sum(),
                    profile,
                ))
            }
            Model::Bp(n) => {
                let mut total = 0.0;
                for idx in chunks(data.len()) {
                    let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
                    total += n.loss(&data.x().select_rows(&idx), &labels)? * idx.len() as f64;
                }
                Ok((total / data.len().max(1) as f64, Vec::new()))
            }
        }
    }
}

/// Result of one training epoch.
#[derive(Clone, Debug)]
pub struct EpochOutcome {
    /// Mean training loss over samples, measured before each batch's update.
    pub train_loss: f64,
    /// Per-component means of the local losses (AL only).
    pub components: Vec<LossRecord>,
    pub trace: Vec<TaskSpan>,
    pub throughput: Option<ThroughputReport>,
}

fn diverged(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { component, context } => Error::Divergence {
            epoch,
            batch,
            context: if component == 0 {
                context
            } else {
                format!("component {component}: {context}")
            },
        },
        other => other,
    }
}

type StageResult = (LossRecord, usize);

fn component_step(
    epoch: usize,
) -> impl Fn(&mut Component, usize, usize, BatchMessage) -> Result<(BatchMessage, StageResult)> + Sync
{
    move |component, _c, batch, msg| {
        let out = component
            .update(&msg.s, &msg.t)
            .map_err(|e| diverged(epoch, batch, e))?;
        let rows = msg.s.rows();
        Ok((
            BatchMessage {
                epoch,
                batch_id: batch,
                s: out.s,
                t: out.t,
            },
            (out.losses, rows),
        ))
    }
}

fn batch_messages<'a>(
    data: &'a Dataset,
    batches: BatchIterator,
    epoch: usize,
) -> impl Iterator<Item = BatchMessage> + 'a {
    batches.enumerate().map(move |(m, idx)| {
        let (s, t) = data.batch(&idx);
        BatchMessage {
            epoch,
            batch_id: m + 1,
            s,
            t,
        }
    })
}

fn summarize(results: &[Vec<StageResult>]) -> (f64, Vec<LossRecord>) {
    let components: Vec<LossRecord> = results
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            let n: usize = rows.iter().map(|r| r.1).sum();
            let n = n.max(1) as f64;
            LossRecord {
                component: i + 1,
                mse1: rows.iter().map(|(l, k)| l.mse1 * *k as f64).sum::<f64>() / n,
                mse2: rows.iter().map(|(l, k)| l.mse2 * *k as f64).sum::<f64>() / n,
            }
        })
        .collect();
    (
        components.iter().map(LossRecord::local_objective).sum(),
        components,
    )
}

fn check_dims(net: &AlNetwork, data: &Dataset) -> Result<()> {
    let plan = net.plan();
    if data.dim() != plan.input_dim || data.n_classes() != plan.n_classes {
        return Err(Error::InvalidConfig(format!(
            "data has {} features and {} classes, network expects {} and {}",
            data.dim(),
            data.n_classes(),
            plan.input_dim,
            plan.n_classes
        )));
    }
    Ok(())
}

/// One epoch, component 1 to C for each batch in turn, on the calling thread.
pub fn train_epoch_sequential(
    net: &mut AlNetwork,
    data: &Dataset,
    batches: BatchIterator,
    epoch: usize,
) -> Result<EpochOutcome> {
    check_dims(net, data)?;
    let stages = net.take_components();
    let run = run_sequential(
        stages,
        batch_messages(data, batches, epoch),
        component_step(epoch),
    )?;
    finish_al(net, run)
}

/// One epoch with a worker thread per component. With `opts.lockstep` a batch
/// enters only after the previous one has cleared the top component.
pub fn train_epoch_pipelined(
    net: &mut AlNetwork,
    data: &Dataset,
    batches: BatchIterator,
    epoch: usize,
    opts: PipelineOptions,
) -> Result<EpochOutcome> {
    check_dims(net, data)?;
    let stages = net.take_components();
    let run = run_pipeline(
        stages,
        batch_messages(data, batches, epoch),
        opts,
        component_step(epoch),
    )?;
    finish_al(net, run)
}

fn finish_al(
    net: &mut AlNetwork,
    mut run: PipelineRun<Component, StageResult>,
) -> Result<EpochOutcome> {
    let c = run.stages.len();
    net.restore_components(std::mem::take(&mut run.stages))?;
    let run = run.into_result()?;
    let (train_loss, components) = summarize(&run.results);
    let throughput = ThroughputReport::from_trace(&run.trace, c, run.wall_clock, None);
    Ok(EpochOutcome {
        train_loss,
        components,
        trace: run.trace,
        throughput: Some(throughput),
    })
}

/// One backprop epoch.
pub fn train_epoch_bp(
    net: &mut BpNetwork,
    data: &Dataset,
    batches: BatchIterator,
    epoch: usize,
) -> Result<EpochOutcome> {
    if data.dim() != net.block().in_dim() || data.n_classes() != net.n_classes() {
        return Err(Error::InvalidConfig(format!(
            "data has {} features and {} classes, network expects {} and {}",
            data.dim(),
            data.n_classes(),
            net.block().in_dim(),
            net.n_classes()
        )));
    }
    let mut total = 0.0;
    let mut seen = 0usize;
    for (m, idx) in batches.enumerate() {
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
        let loss = net
            .train_batch(&data.x().select_rows(&idx), &labels)
            .map_err(|e| diverged(epoch, m + 1, e))?;
        total += loss * idx.len() as f64;
        seen += idx.len();
    }
    Ok(EpochOutcome {
        train_loss: total / seen.max(1) as f64,
        components: Vec::new(),
        trace: Vec::new(),
        throughput: None,
    })
}

/// Stream id for the batch order of `epoch`; distinct from initialization
/// and subsampling streams.
fn shuffle_stream(epoch: usize) -> u64 {
    0x5_0000 + epoch as u64
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub mode: TrainMode,
    pub pipeline: PipelineOptions,
    /// Where to keep the best-so-far checkpoint, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

impl FitConfig {
    pub fn new(mode: TrainMode, epochs: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 128,
            schedule: LrSchedule::standard(lr),
            seed,
            mode,
            pipeline: PipelineOptions::default(),
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: Model,
    /// Epoch 0 (before training) through the last epoch.
    pub history: Vec<MetricsRecord>,
    /// Epoch with the highest test accuracy, 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    pub throughput: Vec<ThroughputReport>,
}

impl FitOutcome {
    pub fn last(&self) -> &MetricsRecord {
        self.history.last().expect("history holds at least epoch 0")
    }
}

/// Trains for `cfg.epochs` epochs, evaluating after each and passing every
/// record to `observer` as it is produced. The checkpoint, if configured, is
/// rewritten whenever test accuracy improves.
pub fn fit(
    mut model: Model,
    train: &Dataset,
    test: &Dataset,
    cfg: &FitConfig,
    observer: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
) -> Result<FitOutcome> {
    match (&model, cfg.mode.is_al()) {
        (Model::Al(_), true) | (Model::Bp(_), false) => {}
        _ => {
            return Err(Error::InvalidConfig(format!(
                "mode {} does not match the supplied network",
                cfg.mode
            )))
        }
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }

    let started = Instant::now();
    let (train_loss, components) = model.evaluate_loss(train)?;
    let initial = MetricsRecord {
        epoch: 0,
        mode: cfg.mode.to_string(),
        lr: cfg.schedule.lr_at(1),
        train_loss,
        train_accuracy: model.accuracy(train)?,
        test_accuracy: model.accuracy(test)?,
        components,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    observer(&initial)?;
    let mut best_epoch = 0;
    let mut best_test_accuracy = initial.test_accuracy;
    let mut history = vec![initial];
    let mut throughput = Vec::new();

    for epoch in 1..=cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        model.set_lr(lr);
        let batches = BatchIterator::new(
            train.len(),
            cfg.batch_size,
            &mut Rng::with_stream(cfg.seed, shuffle_stream(epoch)),
        );
        let out = match (&mut model, cfg.mode) {
            (Model::Al(net), TrainMode::AlSequential) => {
                train_epoch_sequential(net, train, batches, epoch)?
            }
            (Model::Al(net), _) => train_epoch_pipelined(net, train, batches, epoch, cfg.pipeline)?,
            (Model::Bp(net), _) => train_epoch_bp(net, train, batches, epoch)?,
        };
        if let Some(t) = out
            .throughput
            .filter(|_| cfg.mode == TrainMode::AlPipelined)
        {
            throughput.push(t);
        }
        let record = MetricsRecord {
            epoch,
            mode: cfg.mode.to_string(),
            lr,
            train_loss: out.train_loss,
            train_accuracy: model.accuracy(train)?,
            test_accuracy: model.accuracy(test)?,
            components: out.components,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        if !record.train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                context: format!("epoch loss is {}", record.train_loss),
            });
        }
        if epoch == 1 || record.test_accuracy > best_test_accuracy {
            best_epoch = epoch;
            best_test_accuracy = record.test_accuracy;
            if let Some(path) = &cfg.checkpoint {
                checkpoint::save(path, &model, cfg.seed, epoch)?;
            }
        }
        observer(&record)?;
        history.push(record);
    }
    Ok(FitOutcome {
        model,
        history,
        best_epoch,
        best_test_accuracy,
        throughput,
    })
}
