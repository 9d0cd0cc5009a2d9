use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use assoc_learn::al::AlNetwork;
use assoc_learn::bp::{match_effective_params, BpNetwork, BpPlan};
use assoc_learn::checkpoint;
use assoc_learn::data::{load_mnist_dir, mnist_subset, synth_blobs, synth_xor, Dataset};
use assoc_learn::linalg::Rng;
use assoc_learn::metrics::{
    associated_loss_profile, class_geometry, ClassGeometry, CsvLog, MetricsRecord,
};
use assoc_learn::nn::AdamConfig;
use assoc_learn::train::{fit, FitConfig, LrSchedule, Model, PipelineOptions, ThroughputReport};
use assoc_learn::Error;
use serde::Serialize;

use crate::config::{DatasetKind, RunConfig};
use crate::Failure;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

const BLOB_TRAIN: usize = 600;
const BLOB_TEST: usize = 300;
const BLOB_SEPARATION: f64 = 4.0;

#[derive(Debug, Serialize)]
pub struct Geometry {
    pub metafeatures: Option<ClassGeometry>,
    pub raw_input: Option<ClassGeometry>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub dataset: String,
    pub plan: Option<String>,
    pub mode: String,
    pub seed: u64,
    pub epochs: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub effective_params: usize,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: f64,
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    pub final_metrics: MetricsRecord,
    /// Associated loss per component on the test set (AL only).
    pub associated_loss_profile: Option<Vec<f64>>,
    /// Class geometry on the test set.
    pub geometry: Geometry,
    /// Last pipelined epoch's timing (al-pipe only).
    pub throughput: Option<ThroughputReport>,
    pub wall_clock_secs: f64,
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(1, format!("{}: {e}", path.display()))
}

fn training_failure(e: Error) -> Failure {
    let code = if e.is_numeric() {
        3
    } else if matches!(e, Error::InvalidConfig(_)) {
        2
    } else {
        1
    };
    Failure::new(code, e.to_string())
}

pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset), Failure> {
    let loaded = match cfg.dataset {
        DatasetKind::Mnist => load_mnist_dir(cfg.data_dir.as_ref().expect("resolved")),
        DatasetKind::MnistSubset => {
            mnist_subset(cfg.data_dir.as_ref().expect("resolved"), cfg.seed)
        }
        DatasetKind::Blobs => {
            let mut rng = Rng::with_stream(cfg.seed, 0xb10b);
            let (d, k) = (cfg.plan.input_dim, cfg.plan.n_classes);
            synth_blobs(BLOB_TRAIN, d, k, BLOB_SEPARATION, &mut rng).and_then(|train| {
                Ok((
                    train,
                    synth_blobs(BLOB_TEST, d, k, BLOB_SEPARATION, &mut rng)?,
                ))
            })
        }
        DatasetKind::Xor => Ok((synth_xor(), synth_xor())),
    };
    let (train, test) =
        loaded.map_err(|e| Failure::config(format!("loading {}: {e}", cfg.dataset)))?;
    for (name, d) in [("train", &train), ("test", &test)] {
        if d.dim() != cfg.plan.input_dim || d.n_classes() != cfg.plan.n_classes {
            return Err(Failure::config(format!(
                "{name} data has {} features and {} classes but the plan expects {} and {}",
                d.dim(),
                d.n_classes(),
                cfg.plan.input_dim,
                cfg.plan.n_classes
            )));
        }
    }
    Ok((train, test))
}

pub fn build_model(cfg: &RunConfig) -> Result<Model, Failure> {
    let mut rng = Rng::new(cfg.seed);
    let adam = AdamConfig::with_lr(cfg.lr);
    let model = if cfg.mode.is_al() {
        AlNetwork::build(&cfg.plan, &mut rng, adam).map(Model::Al)
    } else {
        let plan = BpPlan {
            loss: cfg.bp_loss,
            ..match_effective_params(&cfg.plan)
        };
        BpNetwork::build(&plan, &mut rng, adam).map(Model::Bp)
    };
    model.map_err(|e| Failure::config(e.to_string()))
}

pub fn train(cfg: &RunConfig, progress: bool) -> Result<Summary, Failure> {
    let started = Instant::now();
    let (train, test) = load_data(cfg)?;
    let model = build_model(cfg)?;

    let out = &cfg.out;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let config_path = out.join(CONFIG_FILE);
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    fs::write(&config_path, json + "\n").map_err(|e| io_failure(&config_path, e))?;

    let csv_path = out.join(METRICS_FILE);
    let file = fs::File::create(&csv_path).map_err(|e| io_failure(&csv_path, e))?;
    let mut log = CsvLog::new(BufWriter::new(file)).map_err(|e| io_failure(&csv_path, e))?;
    let checkpoint_path = out.join(CHECKPOINT_FILE);

    let fit_cfg = FitConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        schedule: LrSchedule {
            initial: cfg.lr,
            drops: cfg.lr_drops.clone(),
            factor: cfg.lr_factor,
        },
        seed: cfg.seed,
        mode: cfg.mode,
        pipeline: PipelineOptions::default(),
        checkpoint: Some(checkpoint_path.clone()),
    };
    let mut observer = |r: &MetricsRecord| -> assoc_learn::Result<()> {
        log.append(r)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", csv_path.display())))?;
        if progress {
            eprintln!(
                "epoch {:>3}  lr {:.2e}  loss {:.5}  train {:.4}  test {:.4}  ({:.1}s)",
                r.epoch, r.lr, r.train_loss, r.train_accuracy, r.test_accuracy, r.wall_clock_secs
            );
        }
        Ok(())
    };
    let outcome = fit(model, &train, &test, &fit_cfg, &mut observer).map_err(training_failure)?;
    if cfg.epochs == 0 {
        checkpoint::save(&checkpoint_path, &outcome.model, cfg.seed, 0)
            .map_err(|e| io_failure(&checkpoint_path, e))?;
    }

    let features = outcome
        .model
        .metafeatures_dataset(&test)
        .map_err(training_failure)?;
    let geometry = Geometry {
        metafeatures: class_geometry(&features, test.labels()).ok(),
        raw_input: class_geometry(test.x(), test.labels()).ok(),
    };
    let profile = match &outcome.model {
        Model::Al(net) => Some(associated_loss_profile(net, &test).map_err(training_failure)?),
        Model::Bp(_) => None,
    };
    let last = outcome.last().clone();
    let summary = Summary {
        dataset: cfg.dataset.to_string(),
        plan: cfg.plan_name.clone(),
        mode: cfg.mode.to_string(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        train_size: train.len(),
        test_size: test.len(),
        effective_params: outcome.model.effective_param_count(),
        final_train_accuracy: last.train_accuracy,
        final_test_accuracy: last.test_accuracy,
        best_epoch: outcome.best_epoch,
        best_test_accuracy: outcome.best_test_accuracy,
        final_metrics: last,
        associated_loss_profile: profile,
        geometry,
        throughput: outcome.throughput.last().cloned(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let summary_path = out.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, json + "\n").map_err(|e| io_failure(&summary_path, e))?;
    Ok(summary)
}
