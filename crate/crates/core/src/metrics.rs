//! Accuracy, per-component loss profiles, class-geometry ratios, and the
//! per-epoch CSV format.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::al::{AlNetwork, LossRecord};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Rows per evaluation chunk; bounds peak memory on large datasets.
pub const EVAL_CHUNK: usize = 1000;

/// Fraction of positions where `predicted` equals `labels`. Empty input gives 0.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(
        predicted.len(),
        labels.len(),
        "accuracy needs equal lengths"
    );
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Index ranges of consecutive evaluation chunks over `n` rows.
pub fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n)
        .step_by(EVAL_CHUNK)
        .map(move |start| (start..(start + EVAL_CHUNK).min(n)).collect())
}

/// Evaluation-mode local losses per component, averaged over every sample.
pub fn local_loss_profile(net: &AlNetwork, data: &Dataset) -> Result<Vec<LossRecord>> {
    let mut totals: Vec<LossRecord> = (1..=net.num_components())
        .map(|component| LossRecord {
            component,
            ..Default::default()
        })
        .collect();
    for idx in chunks(data.len()) {
        let x = data.x().select_rows(&idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
        let w = idx.len() as f64;
        for (total, l) in totals.iter_mut().zip(net.local_losses(&x, &labels)?) {
            total.mse1 += l.mse1 * w;
            total.mse2 += l.mse2 * w;
        }
    }
    let n = data.len().max(1) as f64;
    for t in &mut totals {
        t.mse1 /= n;
        t.mse2 /= n;
    }
    Ok(totals)
}

/// Associated loss of each component, bottom to top.
pub fn associated_loss_profile(net: &AlNetwork, data: &Dataset) -> Result<Vec<f64>> {
    Ok(local_loss_profile(net, data)?
        .iter()
        .map(|l| l.mse1)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGeometry {
    /// Mean distance between class centroids over unordered class pairs.
    pub inter: f64,
    /// Mean over classes (with at least two points) of the mean within-class
    /// pairwise distance.
    pub intra: f64,
    pub ratio: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean inter/intra-class distances of `features` grouped by `labels`.
pub fn class_geometry(features: &Matrix, labels: &[usize]) -> Result<ClassGeometry> {
    if labels.len() != features.rows() {
        return Err(Error::shape(
            "class_geometry",
            features.shape(),
            (labels.len(), 1),
        ));
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members.retain(|m| !m.is_empty());
    if members.len() < 2 {
        return Err(Error::SingleClass(members.len()));
    }

    let d = features.cols();
    let centroids: Vec<Vec<f64>> = members
        .iter()
        .map(|idx| {
            let mut c = vec![0.0; d];
            for &i in idx {
                for (acc, v) in c.iter_mut().zip(features.row(i)) {
                    *acc += v;
                }
            }
            c.iter_mut().for_each(|v| *v /= idx.len() as f64);
            c
        })
        .collect();
    let mut inter_sum = 0.0;
    let mut inter_pairs = 0usize;
    for a in 0..centroids.len() {
        for b in a + 1..centroids.len() {
            inter_sum += distance(&centroids[a], &centroids[b]);
            inter_pairs += 1;
        }
    }
    let inter = inter_sum / inter_pairs as f64;

    let mut intra_sum = 0.0;
    let mut intra_classes = 0usize;
    for idx in members.iter().filter(|m| m.len() >= 2) {
        let mut sum = 0.0;
        for (k, &i) in idx.iter().enumerate() {
            for &j in &idx[k + 1..] {
                sum += distance(features.row(i), features.row(j));
            }
        }
        let pairs = idx.len() * (idx.len() - 1) / 2;
        intra_sum += sum / pairs as f64;
        intra_classes += 1;
    }
    if intra_classes == 0 || intra_sum == 0.0 {
        return Err(Error::UndefinedRatio { inter });
    }
    let intra = intra_sum / intra_classes as f64;
    Ok(ClassGeometry {
        inter,
        intra,
        ratio: inter / intra,
    })
}

/// One row of the per-epoch log. Epoch 0 holds the metrics before training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub mode: String,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Per-component local losses; empty for the backprop baseline.
    pub components: Vec<LossRecord>,
    pub wall_clock_secs: f64,
}

pub const CSV_HEADER: &str = "epoch,mode,lr,train_loss,train_accuracy,test_accuracy,mse1,mse2";

impl MetricsRecord {
    /// CSV row matching [`CSV_HEADER`]. Per-component losses are joined with
    /// `;` from component 1 upward; the baseline leaves them empty. Wall-clock
    /// time is left out so reruns produce identical files.
    pub fn csv_row(&self) -> String {
        let join = |f: fn(&LossRecord) -> f64| {
            self.components
                .iter()
                .map(|l| f(l).to_string())
                .collect::<Vec<_>>()
                .join(";")
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.mode,
            self.lr,
            self.train_loss,
            self.train_accuracy,
            self.test_accuracy,
            join(|l| l.mse1),
            join(|l| l.mse2),
        )
    }
}

/// Appends rows to a CSV stream, writing the header first.
pub struct CsvLog<W: Write> {
    out: W,
}

impl<W: Write> CsvLog<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        Ok(Self { out })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> std::io::Result<()> {
        writeln!(self.out, "{}", record.csv_row())?;
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
