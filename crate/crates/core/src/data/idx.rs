//! IDX reader (the MNIST distribution format).
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for 3-D `u8` image tensors,
//! `0x00000801` for 1-D `u8` label vectors), one big-endian `u32` per dimension,
//! then the raw bytes. Gzip-compressed files are detected by their header and
//! inflated transparently.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

pub const MNIST_CLASSES: usize = 10;
/// Size of the desk-scale split drawn by [`mnist_subset`].
pub const SUBSET_TRAIN: usize = 6000;
pub const SUBSET_TEST: usize = 1000;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct IdxFile {
    path: PathBuf,
    bytes: Vec<u8>,
}

impl IdxFile {
    fn open(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            bytes: read_bytes(path)?,
        })
    }

    fn need(&self, len: usize) -> Result<()> {
        if self.bytes.len() < len {
            return Err(Error::Truncated {
                path: self.path.clone(),
                expected: len,
                actual: self.bytes.len(),
            });
        }
        Ok(())
    }

    fn u32_at(&self, offset: usize) -> Result<u32> {
        self.need(offset + 4)?;
        let b = &self.bytes[offset..offset + 4];
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn expect_magic(&self, expected: u32) -> Result<()> {
        let found = self.u32_at(0)?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.clone(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

fn read_images(path: &Path) -> Result<Matrix> {
    let file = IdxFile::open(path)?;
    file.expect_magic(IMAGE_MAGIC)?;
    let n = file.u32_at(4)? as usize;
    let d = file.u32_at(8)? as usize * file.u32_at(12)? as usize;
    let header = 16;
    file.need(header + n * d)?;
    let data = file.bytes[header..header + n * d]
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    Matrix::new(n, d, data)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let file = IdxFile::open(path)?;
    file.expect_magic(LABEL_MAGIC)?;
    let n = file.u32_at(4)? as usize;
    let header = 8;
    file.need(header + n)?;
    Ok(file.bytes[header..header + n]
        .iter()
        .map(|&l| usize::from(l))
        .collect())
}

/// Reads an image/label IDX pair. Pixels are scaled to `[0, 1]`; the class count
/// is one past the largest label, at least 10.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let x = read_images(images.as_ref())?;
    let y = read_labels(labels.as_ref())?;
    if x.rows() != y.len() {
        return Err(Error::CountMismatch {
            images: x.rows(),
            labels: y.len(),
        });
    }
    let n_classes = y.iter().max().map_or(0, |m| m + 1).max(MNIST_CLASSES);
    Dataset::new(x, y, n_classes)
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [
        stem.to_string(),
        format!("{stem}.gz"),
        stem.replacen("-idx", ".idx", 1),
    ] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
    ))
}

/// Loads the standard four MNIST files from `dir`, returning `(train, test)`.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_idx(
        find(dir, "train-images-idx3-ubyte")?,
        find(dir, "train-labels-idx1-ubyte")?,
    )?;
    let test = load_idx(
        find(dir, "t10k-images-idx3-ubyte")?,
        find(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}

/// Seeded stratified 6000/1000 sample of MNIST train/test.
pub fn mnist_subset(dir: impl AsRef<Path>, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = load_mnist_dir(dir)?;
    let mut rng = Rng::with_stream(seed, 0x5b5e7);
    Ok((
        train.stratified_subset(SUBSET_TRAIN, &mut rng)?,
        test.stratified_subset(SUBSET_TEST, &mut rng)?,
    ))
}
