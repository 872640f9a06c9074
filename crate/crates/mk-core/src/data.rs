//! Dataset ingestion, normalization, splits, and batching.
//!
//! CIFAR-10 arrives in its standard binary form: six files (five train, one
//! test), each a sequence of records of 1 label byte followed by 3072 pixel
//! bytes. Pixels are scaled to `[0, 1]`, the train split is shuffled with a
//! fixed seed-0 permutation, the last 5000 shuffled examples become the
//! validation split, and every split is standardized per dimension using
//! statistics from the train split only.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MkError, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;

pub const CIFAR_PIXELS: usize = 3072;
const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;
const CIFAR_CLASSES: usize = 10;

const TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// An in-memory split: one feature row per example, labels in
/// `[0, num_classes)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, name: &str, split: SplitTag) -> Dataset {
        assert_eq!(features.rows(), labels.len(), "Dataset: {} rows vs {} labels", features.rows(), labels.len());
        assert!(labels.iter().all(|&l| l < num_classes), "Dataset: label out of range");
        Dataset { features, labels, num_classes, name: name.to_string(), split }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Materializes the given rows as a batch.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let mut m = Matrix::zeros(indices.len(), self.dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &idx) in indices.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.features.row(idx));
            labels.push(self.labels[idx]);
        }
        (m, labels)
    }
}

/// Per-dimension standardization statistics, fit on the train split and
/// persisted with checkpoints so inference is self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Population mean/std per column. Constant columns get std 1 so they
    /// standardize to exactly zero instead of NaN.
    pub fn fit(features: &Matrix) -> Normalization {
        let (n, d) = (features.rows(), features.cols());
        assert!(n > 0, "Normalization::fit: empty feature matrix");
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, &x) in mean.iter_mut().zip(features.row(r)) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((v, &x), &m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                let dev = x - m;
                *v += dev * dev;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s < 1e-12 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Normalization { mean, std }
    }

    pub fn apply_in_place(&self, features: &mut Matrix) {
        assert_eq!(features.cols(), self.mean.len(), "Normalization: dimension mismatch");
        for r in 0..features.rows() {
            for ((x, &m), &s) in features.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
    }
}

/// One raw CIFAR-10 record exactly as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub pixels: Vec<u8>,
}

/// Parses one binary batch file. Errors name the file: missing or
/// truncated input is an ingestion error, a label byte above 9 is corrupt
/// data.
pub fn read_cifar_batch_file(path: &Path) -> Result<Vec<CifarRecord>> {
    let bytes = fs::read(path).map_err(|e| MkError::Ingestion {
        path: path.to_path_buf(),
        reason: format!("cannot read file: {e}"),
    })?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(MkError::Ingestion {
            path: path.to_path_buf(),
            reason: format!(
                "file length {} is not a positive multiple of the {CIFAR_RECORD_BYTES}-byte record size",
                bytes.len()
            ),
        });
    }
    let mut records = Vec::with_capacity(bytes.len() / CIFAR_RECORD_BYTES);
    for (idx, chunk) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = chunk[0];
        if label as usize >= CIFAR_CLASSES {
            return Err(MkError::CorruptData {
                path: path.to_path_buf(),
                reason: format!("record {idx}: label byte {label} outside 0..{CIFAR_CLASSES}"),
            });
        }
        records.push(CifarRecord { label, pixels: chunk[1..].to_vec() });
    }
    Ok(records)
}

/// Serializes records in the exact on-disk layout; the inverse of
/// [`read_cifar_batch_file`] byte for byte.
pub fn write_cifar_batch_file(path: &Path, records: &[CifarRecord]) -> Result<()> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
    for rec in records {
        assert_eq!(rec.pixels.len(), CIFAR_PIXELS, "CifarRecord: expected {CIFAR_PIXELS} pixels");
        out.push(rec.label);
        out.extend_from_slice(&rec.pixels);
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

fn records_to_features(records: &[CifarRecord]) -> (Matrix, Vec<usize>) {
    let mut features = Matrix::zeros(records.len(), CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(records.len());
    for (r, rec) in records.iter().enumerate() {
        for (slot, &byte) in features.row_mut(r).iter_mut().zip(&rec.pixels) {
            *slot = byte as f64 / 255.0;
        }
        labels.push(rec.label as usize);
    }
    (features, labels)
}

/// Loads the six standard batch files from `path`, requiring the standard
/// record counts (10000 per file). Returns `(train 45000, val 5000,
/// test 10000)`; see the module docs for the split and normalization
/// pipeline.
pub fn load_cifar10(path: &Path) -> Result<(Dataset, Dataset, Dataset)> {
    load_cifar10_with(path, Some(10_000), 5_000)
}

/// Like [`load_cifar10`] but without the standard-count requirement, for
/// reduced fixtures in the identical format. `val_count` examples are split
/// off the shuffled train set.
pub fn load_cifar10_with(path: &Path, required_per_file: Option<usize>, val_count: usize) -> Result<(Dataset, Dataset, Dataset)> {
    let mut train_records = Vec::new();
    for name in TRAIN_FILES {
        let file = path.join(name);
        let records = read_cifar_batch_file(&file)?;
        if let Some(required) = required_per_file {
            if records.len() != required {
                return Err(MkError::Ingestion {
                    path: file,
                    reason: format!("expected {required} records, found {}", records.len()),
                });
            }
        }
        train_records.extend(records);
    }
    let test_file = path.join(TEST_FILE);
    let test_records = read_cifar_batch_file(&test_file)?;
    if let Some(required) = required_per_file {
        if test_records.len() != required {
            return Err(MkError::Ingestion {
                path: test_file,
                reason: format!("expected {required} records, found {}", test_records.len()),
            });
        }
    }
    if val_count >= train_records.len() {
        return Err(MkError::Ingestion {
            path: path.to_path_buf(),
            reason: format!("validation count {val_count} leaves no training data (train has {})", train_records.len()),
        });
    }

    let (features, labels) = records_to_features(&train_records);
    let (test_features, test_labels) = records_to_features(&test_records);

    // Fixed seed-0 shuffle; the last val_count shuffled examples become the
    // validation split.
    let perm = RngStream::new(0).derive("cifar10-split").permutation(train_records.len());
    let split_at = train_records.len() - val_count;
    let (train_idx, val_idx) = perm.split_at(split_at);

    let gather = |idx: &[usize]| {
        let mut m = Matrix::zeros(idx.len(), CIFAR_PIXELS);
        let mut l = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            m.row_mut(r).copy_from_slice(features.row(i));
            l.push(labels[i]);
        }
        (m, l)
    };
    let (mut train_f, train_l) = gather(train_idx);
    let (mut val_f, val_l) = gather(val_idx);
    let mut test_f = test_features;

    let norm = Normalization::fit(&train_f);
    norm.apply_in_place(&mut train_f);
    norm.apply_in_place(&mut val_f);
    norm.apply_in_place(&mut test_f);

    Ok((
        Dataset::new(train_f, train_l, CIFAR_CLASSES, "cifar10", SplitTag::Train),
        Dataset::new(val_f, val_l, CIFAR_CLASSES, "cifar10", SplitTag::Val),
        Dataset::new(test_f, test_labels, CIFAR_CLASSES, "cifar10", SplitTag::Test),
    ))
}

/// The normalization a model trained on this directory's data would use;
/// checkpoints persist it so inference needs no dataset.
pub fn cifar10_normalization(path: &Path) -> Result<Normalization> {
    let (train, _, _) = load_cifar10_with(path, None, 1)?;
    Ok(Normalization::fit(&train.features))
}

/// Writes a synthetic directory in the exact CIFAR-10 binary layout:
/// five train files of `per_train_file` records and one test file of
/// `test_records`, uniformly random labels and pixels. For offline smoke
/// runs and fixtures; the accuracy numbers from it are meaningless.
pub fn generate_synthetic_cifar10(dir: &Path, per_train_file: usize, test_records: usize, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut rng = RngStream::new(seed).derive("synthetic-cifar10");
    let mut written = Vec::new();
    let emit = |name: &str, count: usize, rng: &mut RngStream| -> Result<PathBuf> {
        let records: Vec<CifarRecord> = (0..count)
            .map(|_| {
                let label = rng.next_below(CIFAR_CLASSES as u64) as u8;
                let pixels = (0..CIFAR_PIXELS).map(|_| (rng.next_u64() & 0xff) as u8).collect();
                CifarRecord { label, pixels }
            })
            .collect();
        let path = dir.join(name);
        write_cifar_batch_file(&path, &records)?;
        Ok(path)
    };
    for name in TRAIN_FILES {
        written.push(emit(name, per_train_file, &mut rng)?);
    }
    written.push(emit(TEST_FILE, test_records, &mut rng)?);
    Ok(written)
}

/// Gaussian class clusters at separated axis-aligned centers (unit
/// within-class standard deviation); linearly separable once `separation`
/// clears a few sigma.
pub fn make_blobs(rng: &mut RngStream, classes: usize, per_class: usize, dim: usize, separation: f64) -> Result<Dataset> {
    if classes < 2 {
        return Err(MkError::InvalidConfig(format!("make_blobs: classes must be >= 2 (got {classes})")));
    }
    if !(separation > 0.0) {
        return Err(MkError::InvalidConfig(format!("make_blobs: separation must be > 0 (got {separation})")));
    }
    if per_class == 0 {
        return Err(MkError::InvalidConfig("make_blobs: per_class must be >= 1 (empty dataset)".into()));
    }
    if dim == 0 {
        return Err(MkError::InvalidConfig("make_blobs: dim must be >= 1".into()));
    }
    let n = classes * per_class;
    let mut features = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let axis = c % dim;
        let level = (c / dim + 1) as f64;
        for s in 0..per_class {
            let r = c * per_class + s;
            let row = features.row_mut(r);
            for v in row.iter_mut() {
                *v = rng.standard_normal();
            }
            row[axis] += separation * level;
            labels.push(c);
        }
    }
    Ok(Dataset::new(features, labels, classes, "blobs", SplitTag::Train))
}

/// Seeded epoch batching: each epoch draws a fresh permutation from the
/// iterator's stream; every example appears exactly once per epoch and the
/// final batch of an epoch may be short.
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    rng: RngStream,
    order: Vec<usize>,
    cursor: usize,
    epochs_started: u64,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, rng: RngStream) -> BatchIterator<'a> {
        assert!(batch_size >= 1, "BatchIterator: batch_size must be >= 1");
        assert!(!dataset.is_empty(), "BatchIterator: empty dataset");
        BatchIterator { dataset, batch_size, rng, order: Vec::new(), cursor: 0, epochs_started: 0 }
    }

    /// Epochs begun so far (1 after the first batch of the first epoch).
    pub fn epochs_started(&self) -> u64 {
        self.epochs_started
    }

    /// The next batch's dataset indices.
    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order = self.rng.permutation(self.dataset.len());
            self.cursor = 0;
            self.epochs_started += 1;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }

    /// The next materialized batch (features, labels).
    pub fn next_batch(&mut self) -> (Matrix, Vec<usize>) {
        let indices = self.next_indices();
        self.dataset.gather(&indices)
    }
}

/// Batches per epoch at a given batch size (last batch may be short).
pub fn steps_per_epoch(examples: usize, batch_size: usize) -> usize {
    assert!(batch_size >= 1);
    examples.div_ceil(batch_size)
}
