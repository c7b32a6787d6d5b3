//! Datasets: CIFAR-10 binary batches, synthetic prototype data, and the
//! flip / cutout / channel-normalisation augmentations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::netcore::Tensor;
use crate::rng;

pub const CIFAR_RECORD_LEN: usize = 3073;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_SHAPE: [usize; 3] = [3, 32, 32];
pub const CIFAR_TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed record at byte offset {offset} (file length {len} is not a multiple of 3073)")]
    MalformedRecord { path: PathBuf, offset: usize, len: usize },
    #[error("{path}: label {label} out of range at byte offset {offset}")]
    LabelOutOfRange { path: PathBuf, offset: usize, label: u8 },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid dataset request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Per-channel statistics of the training split, applied to every split.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Mean and population standard deviation per channel of `[n, C, ...]`.
    pub fn of(images: &Tensor) -> ChannelStats {
        let (n, c) = (images.shape()[0], images.shape()[1]);
        let plane: usize = images.shape()[2..].iter().product();
        let count = (n * plane) as f64;
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for (i, v) in images.data().iter().enumerate() {
            mean[(i / plane) % c] += v;
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for (i, v) in images.data().iter().enumerate() {
            let ch = (i / plane) % c;
            sq[ch] += (v - mean[ch]).powi(2);
        }
        let std = sq.iter().map(|s| (s / count).sqrt()).collect();
        ChannelStats { mean, std }
    }

    fn apply(&self, images: &mut Tensor) {
        let c = images.shape()[1];
        let plane: usize = images.shape()[2..].iter().product();
        for (i, v) in images.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            let s = if self.std[ch] > 0.0 { self.std[ch] } else { 1.0 };
            *v = (*v - self.mean[ch]) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
    stats: ChannelStats,
}

impl LabeledDataset {
    /// Wraps already-normalised images. `images` is `[n, C, H, W]`.
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
        stats: ChannelStats,
    ) -> Result<Self, DataError> {
        if labels.is_empty() {
            return Err(DataError::Empty);
        }
        if images.shape().len() < 2 || images.shape()[0] != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Invalid(format!("label {l} outside {classes} classes")));
        }
        if stats.mean.len() != images.shape()[1] || stats.std.len() != images.shape()[1] {
            return Err(DataError::Invalid("channel statistics do not match channel count".into()));
        }
        Ok(LabeledDataset { images, labels, classes, split, stats })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
    pub fn classes(&self) -> usize {
        self.classes
    }
    pub fn split(&self) -> Split {
        self.split
    }
    pub fn stats(&self) -> &ChannelStats {
        &self.stats
    }
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    /// Per-sample shape, e.g. `[3, 32, 32]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Images and labels of the given rows.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (self.images.gather_rows(indices), indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Result<LabeledDataset, DataError> {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// The given rows, keeping split tag and statistics.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset, DataError> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(DataError::Invalid(format!("row {i} out of {} samples", self.len())));
        }
        let (images, labels) = self.batch(indices);
        LabeledDataset::new(images, labels, self.classes, self.split, self.stats.clone())
    }

    /// Writes `label,p0,p1,...` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(w);
        let row_len: usize = self.sample_shape().iter().product();
        let mut header = vec!["label".to_string()];
        header.extend((0..row_len).map(|i| format!("p{i}")));
        out.write_record(&header)?;
        for (i, l) in self.labels.iter().enumerate() {
            let mut rec = vec![l.to_string()];
            rec.extend(self.images.data()[i * row_len..(i + 1) * row_len].iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| DataError::Csv(e.into()))?;
        Ok(())
    }
}

/// One decoded CIFAR-10 record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    /// 3072 bytes, channel-planar R, G, B, each 32×32 row-major.
    pub pixels: Vec<u8>,
}

impl CifarRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(CIFAR_RECORD_LEN);
        v.push(self.label);
        v.extend_from_slice(&self.pixels);
        v
    }
}

/// Splits a batch file into records, validating length and labels.
pub fn parse_cifar_records(bytes: &[u8], path: &Path) -> Result<Vec<CifarRecord>, DataError> {
    if bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(DataError::MalformedRecord {
            path: path.to_path_buf(),
            offset: bytes.len() - bytes.len() % CIFAR_RECORD_LEN,
            len: bytes.len(),
        });
    }
    bytes
        .chunks_exact(CIFAR_RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] as usize >= CIFAR_CLASSES {
                return Err(DataError::LabelOutOfRange {
                    path: path.to_path_buf(),
                    offset: i * CIFAR_RECORD_LEN,
                    label: rec[0],
                });
            }
            Ok(CifarRecord { label: rec[0], pixels: rec[1..].to_vec() })
        })
        .collect()
}

fn read_records(path: &Path) -> Result<Vec<CifarRecord>, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    parse_cifar_records(&bytes, path)
}

fn records_to_tensor(records: &[CifarRecord]) -> Result<(Tensor, Vec<usize>), DataError> {
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    let data = records.iter().flat_map(|r| r.pixels.iter().map(|&p| p as f64 / 255.0)).collect();
    let mut shape = vec![records.len()];
    shape.extend_from_slice(&CIFAR_SHAPE);
    let t = Tensor::new(shape, data).map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok((t, records.iter().map(|r| r.label as usize).collect()))
}

/// Loads the five training batches and the test batch from `dir`. Pixels are
/// scaled to `[0, 1]` and normalised with training-split channel statistics.
/// `limit` caps the number of records kept from each split.
pub fn load_cifar10(dir: &Path, limit: Option<(usize, usize)>) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let mut train = Vec::new();
    for f in CIFAR_TRAIN_FILES {
        train.extend(read_records(&dir.join(f))?);
    }
    let mut test = read_records(&dir.join(CIFAR_TEST_FILE))?;
    if let Some((n_train, n_test)) = limit {
        train.truncate(n_train);
        test.truncate(n_test);
    }
    let (mut xtr, ytr) = records_to_tensor(&train)?;
    let (mut xte, yte) = records_to_tensor(&test)?;
    let stats = ChannelStats::of(&xtr);
    stats.apply(&mut xtr);
    stats.apply(&mut xte);
    Ok((
        LabeledDataset::new(xtr, ytr, CIFAR_CLASSES, Split::Train, stats.clone())?,
        LabeledDataset::new(xte, yte, CIFAR_CLASSES, Split::Test, stats)?,
    ))
}

/// Class prototypes plus Gaussian noise scaled by `difficulty`. Labels are
/// assigned round-robin, so `n` divisible by `classes` gives exact balance.
/// The result is normalised with its own channel statistics.
pub fn make_synthetic(
    n: usize,
    classes: usize,
    shape: &[usize],
    difficulty: f64,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    Ok(synthesize(n, 0, classes, shape, difficulty, seed)?.0)
}

/// Train and test sets drawn from the same prototypes; the test set is
/// normalised with the training statistics.
pub fn make_synthetic_split(
    n_train: usize,
    n_test: usize,
    classes: usize,
    shape: &[usize],
    difficulty: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    match synthesize(n_train, n_test, classes, shape, difficulty, seed)? {
        (train, Some(test)) => Ok((train, test)),
        _ => Err(DataError::Invalid("n_test must be >= 1".into())),
    }
}

fn synthesize(
    n_train: usize,
    n_test: usize,
    classes: usize,
    shape: &[usize],
    difficulty: f64,
    seed: u64,
) -> Result<(LabeledDataset, Option<LabeledDataset>), DataError> {
    if n_train == 0 || classes == 0 || shape.len() < 2 || shape.contains(&0) {
        return Err(DataError::Invalid(format!(
            "n_train {n_train}, classes {classes}, shape {shape:?}"
        )));
    }
    if !(difficulty >= 0.0 && difficulty.is_finite()) {
        return Err(DataError::Invalid(format!("difficulty {difficulty}")));
    }
    let dim: usize = shape.iter().product();
    let mut proto_rng = rng::stream(seed, "synthetic-prototypes");
    let protos: Vec<f64> = (0..classes * dim).map(|_| StandardNormal.sample(&mut proto_rng)).collect();
    let mut noise_rng = rng::stream(seed, "synthetic-noise");
    let mut make = |count: usize, offset: usize| {
        let labels: Vec<usize> = (0..count).map(|i| (i + offset) % classes).collect();
        let mut data = Vec::with_capacity(count * dim);
        for &l in &labels {
            for p in &protos[l * dim..(l + 1) * dim] {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                data.push(p + difficulty * z);
            }
        }
        let mut s = vec![count];
        s.extend_from_slice(shape);
        (data, labels, s)
    };
    let (dtr, ltr, str_) = make(n_train, 0);
    let mut xtr = Tensor::new(str_, dtr).expect("consistent shape");
    let stats = ChannelStats::of(&xtr);
    stats.apply(&mut xtr);
    let test = if n_test > 0 {
        let (dte, lte, ste) = make(n_test, n_train);
        let mut xte = Tensor::new(ste, dte).expect("consistent shape");
        stats.apply(&mut xte);
        Some(LabeledDataset::new(xte, lte, classes, Split::Test, stats.clone())?)
    } else {
        None
    };
    Ok((LabeledDataset::new(xtr, ltr, classes, Split::Train, stats)?, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentFlags {
    /// Horizontal flip with probability 0.5 per sample.
    pub flip: bool,
    /// Flip every sample (overrides the coin).
    pub force_flip: bool,
    /// Side of the cutout square; `None` disables cutout.
    pub cutout: Option<usize>,
    /// Standardise each channel over the batch.
    pub channel_norm: bool,
}

impl AugmentFlags {
    pub fn is_identity(&self) -> bool {
        !self.flip && !self.force_flip && self.cutout.is_none() && !self.channel_norm
    }
}

/// Default cutout side for 32×32 images.
pub const DEFAULT_CUTOUT: usize = 8;

/// Applies flip, then cutout, then channel normalisation to a `[n, C, H, W]`
/// batch. Deterministic in `(seed, batch_index)`.
pub fn augment(batch: &Tensor, flags: &AugmentFlags, seed: u64, batch_index: u64) -> Tensor {
    let mut out = batch.clone();
    if flags.is_identity() || batch.shape().len() != 4 {
        return out;
    }
    let [n, c, h, w] = [batch.shape()[0], batch.shape()[1], batch.shape()[2], batch.shape()[3]];
    let mut r = rng::indexed_stream(seed, "augment", batch_index);
    let data = out.data_mut();
    if flags.flip || flags.force_flip {
        for s in 0..n {
            let coin = r.random::<bool>();
            if flags.force_flip || coin {
                for row in data[s * c * h * w..(s + 1) * c * h * w].chunks_exact_mut(w) {
                    row.reverse();
                }
            }
        }
    }
    if let Some(side) = flags.cutout {
        let side = side.min(h).min(w);
        if side > 0 {
            let fill = channel_means(data, n, c, h * w);
            for s in 0..n {
                let y0 = r.random_range(0..=h - side);
                let x0 = r.random_range(0..=w - side);
                for ch in 0..c {
                    let base = (s * c + ch) * h * w;
                    for y in y0..y0 + side {
                        data[base + y * w + x0..base + y * w + x0 + side].fill(fill[ch]);
                    }
                }
            }
        }
    }
    if flags.channel_norm {
        let plane = h * w;
        let mean = channel_means(data, n, c, plane);
        let mut var = vec![0.0; c];
        for (i, v) in data.iter().enumerate() {
            var[(i / plane) % c] += (v - mean[(i / plane) % c]).powi(2);
        }
        let count = (n * plane) as f64;
        for (i, v) in data.iter_mut().enumerate() {
            let ch = (i / plane) % c;
            let sd = (var[ch] / count).sqrt();
            *v -= mean[ch];
            if sd > 0.0 {
                *v /= sd;
            }
        }
    }
    out
}

fn channel_means(data: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut mean = vec![0.0; c];
    for (i, v) in data.iter().enumerate() {
        mean[(i / plane) % c] += v;
    }
    mean.iter_mut().for_each(|m| *m /= (n * plane) as f64);
    mean
}
