//! Datasets, IDX ingestion, synthetic sets and mini-batching.

mod batch;
mod idx;
mod synth;

pub use batch::BatchIterator;
pub use idx::{load_idx, load_mnist_dir, mnist_subset, IMAGE_MAGIC, LABEL_MAGIC};
pub use synth::{synth_blobs, synth_xor};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

/// Features (one row per sample) with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: x.rows(),
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        if !x.is_finite() {
            return Err(Error::InvalidConfig(
                "dataset features must be finite".into(),
            ));
        }
        Ok(Self {
            x,
            labels,
            n_classes,
        })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows `indices` as features plus one-hot targets.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Matrix) {
        let x = self.x.select_rows(indices);
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let y = one_hot(&labels, self.n_classes).expect("labels validated at construction");
        (x, y)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// `n` samples whose class proportions follow the full set (largest-remainder
    /// rounding), drawn without replacement and returned in shuffled order.
    pub fn stratified_subset(&self, n: usize, rng: &mut Rng) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::InvalidConfig(format!(
                "cannot draw {n} samples from a set of {}",
                self.len()
            )));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.n_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let total = self.len();
        let mut quotas: Vec<usize> = by_class.iter().map(|c| c.len() * n / total).collect();
        let mut order: Vec<usize> = (0..self.n_classes).collect();
        // largest remainders first, ties to the lower class index
        order.sort_by_key(|&k| std::cmp::Reverse((by_class[k].len() * n) % total));
        let mut missing = n - quotas.iter().sum::<usize>();
        for &k in order.iter().cycle().take(self.n_classes * 2) {
            if missing == 0 {
                break;
            }
            if quotas[k] < by_class[k].len() {
                quotas[k] += 1;
                missing -= 1;
            }
        }
        let mut chosen = Vec::with_capacity(n);
        for (members, &quota) in by_class.iter_mut().zip(&quotas) {
            rng.shuffle(members);
            chosen.extend_from_slice(&members[..quota]);
        }
        rng.shuffle(&mut chosen);
        Ok(self.subset(&chosen))
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// `n × n_classes` matrix with a single 1 per row.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), n_classes);
    for (r, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                n_classes,
            });
        }
        m.set(r, l, 1.0);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_places_a_single_one() {
        let m = one_hot(&[3], 10).unwrap();
        assert_eq!(
            m.row(0),
            &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        let labels = vec![0, 2, 1, 2, 0];
        let m = one_hot(&labels, 3).unwrap();
        for row in m.iter_rows() {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
        assert_eq!(m.row_argmax(), labels);
        assert!(matches!(
            one_hot(&[4], 3),
            Err(Error::LabelOutOfRange {
                label: 4,
                n_classes: 3
            })
        ));
    }

    #[test]
    fn dataset_validates_labels_and_counts() {
        assert!(Dataset::new(Matrix::zeros(2, 3), vec![0], 2).is_err());
        assert!(Dataset::new(Matrix::zeros(1, 3), vec![5], 2).is_err());
        assert!(Dataset::new(Matrix::zeros(1, 3), vec![1], 2).is_ok());
    }

    #[test]
    fn stratified_subset_keeps_proportions() {
        let labels: Vec<usize> = (0..1000).map(|i| if i % 10 < 7 { 0 } else { 1 }).collect();
        let x = Matrix::new(1000, 1, (0..1000).map(f64::from).collect()).unwrap();
        let ds = Dataset::new(x, labels, 2).unwrap();
        let sub = ds.stratified_subset(101, &mut Rng::new(1)).unwrap();
        assert_eq!(sub.len(), 101);
        assert_eq!(sub.class_counts(), vec![71, 30]);
        let mut rows: Vec<u64> = sub.x().as_slice().iter().map(|v| *v as u64).collect();
        rows.sort_unstable();
        rows.dedup();
        assert_eq!(rows.len(), 101, "drawn without replacement");
    }
}
