//! Datasets, per-worker shards and mini-batch iteration.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substream;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Class index for classifiers (stored as a float), regression target otherwise.
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Result<Self> {
        let name = name.into();
        let first = samples
            .first()
            .ok_or_else(|| Error::config(format!("dataset `{name}` is empty")))?;
        let dim = first.features.len();
        if let Some(i) = samples.iter().position(|s| s.features.len() != dim) {
            return Err(Error::config(format!(
                "dataset `{name}`: sample {i} has feature dim {}, expected {dim}",
                samples[i].features.len()
            )));
        }
        Ok(Dataset { name, samples })
    }

    /// Featureless samples. Used to meter the number of local steps for
    /// models that ignore their batch (the quadratic bowl).
    pub fn placeholder(count: usize) -> Result<Self> {
        let samples = (0..count)
            .map(|_| Sample {
                features: Vec::new(),
                target: 0.0,
            })
            .collect();
        Dataset::new("steps", samples)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].features.len()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Number of distinct classes, assuming targets are class indices.
    pub fn class_count(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.target.max(0.0) as usize)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Keeps the first `limit` samples.
    pub fn truncated(mut self, limit: usize) -> Self {
        self.samples.truncate(limit.max(1));
        self
    }

    /// A fixed, seeded subset of at most `size` samples, in a deterministic order.
    pub fn subset(&self, size: usize, seed: u64) -> Dataset {
        if size >= self.len() {
            return self.clone();
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order.truncate(size);
        order.sort_unstable();
        Dataset {
            name: format!("{}[subset]", self.name),
            samples: order.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// A borrowed view over `m` samples.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    samples: Vec<&'a Sample>,
}

impl<'a> Batch<'a> {
    pub fn new(samples: Vec<&'a Sample>) -> Self {
        Batch { samples }
    }

    pub fn from_dataset(dataset: &'a Dataset) -> Self {
        Batch {
            samples: dataset.samples.iter().collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[&'a Sample] {
        &self.samples
    }

    pub fn inputs(&self) -> impl Iterator<Item = &'a [f64]> + '_ {
        self.samples.iter().map(|s| s.features.as_slice())
    }

    pub fn targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.target)
    }
}

/// One worker's slice of the dataset together with its iteration state.
#[derive(Debug, Clone)]
pub struct Shard {
    owner: usize,
    dataset: Arc<Dataset>,
    indices: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
    epoch_limit: usize,
    rng: ChaCha8Rng,
}

impl Shard {
    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Dataset indices owned by this shard, in split order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn epoch_limit(&self) -> usize {
        self.epoch_limit
    }

    pub fn with_epoch_limit(mut self, epochs: usize) -> Self {
        self.epoch_limit = epochs;
        self
    }

    pub fn is_exhausted(&self) -> bool {
        self.epoch >= self.epoch_limit
    }

    /// Next `m` samples, or `None` once `epoch_limit` passes are done.
    ///
    /// Each epoch starts with a seeded reshuffle of the shard; an incomplete
    /// tail batch at the end of an epoch is dropped.
    pub fn next_minibatch(&mut self, m: usize) -> Result<Option<Batch<'_>>> {
        if m == 0 || m > self.len() {
            return Err(Error::config(format!(
                "mini-batch size {m} invalid for shard {} of size {}",
                self.owner,
                self.len()
            )));
        }
        if self.is_exhausted() {
            return Ok(None);
        }
        if self.cursor == 0 {
            self.order.clone_from(&self.indices);
            self.order.shuffle(&mut self.rng);
        }
        let start = self.cursor;
        self.cursor += m;
        if self.cursor + m > self.len() {
            self.cursor = 0;
            self.epoch += 1;
        }
        let samples = self.order[start..start + m]
            .iter()
            .map(|&i| &self.dataset.samples[i])
            .collect();
        Ok(Some(Batch { samples }))
    }
}

/// Seeded shuffle of the whole dataset followed by a contiguous split into
/// `n` shards whose sizes differ by at most one (the first `len % n` shards
/// get the extra sample). Shards start with `epoch_limit = 1`.
pub fn shard(dataset: &Arc<Dataset>, n: usize, seed: u64) -> Result<Vec<Shard>> {
    if n == 0 || n > dataset.len() {
        return Err(Error::config(format!(
            "cannot split {} samples across {n} workers",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(substream(seed, 0x5AAD, 0)));

    let base = dataset.len() / n;
    let extra = dataset.len() % n;
    let mut start = 0;
    let shards = (0..n)
        .map(|k| {
            let size = base + usize::from(k < extra);
            let indices = order[start..start + size].to_vec();
            start += size;
            Shard {
                owner: k,
                dataset: Arc::clone(dataset),
                order: Vec::with_capacity(size),
                indices,
                cursor: 0,
                epoch: 0,
                epoch_limit: 1,
                rng: ChaCha8Rng::seed_from_u64(substream(seed, 0xBA7C, k as u64)),
            }
        })
        .collect();
    Ok(shards)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    TwoGaussians,
    TwoMoons,
}

/// Balanced two-class 2-D dataset. Labels alternate 0,1,0,1,...
///
/// `two-gaussians`: isotropic blobs centered at (-1.5,-1.5) and (1.5,1.5)
/// with standard deviation `noise`.
/// `two-moons`: interleaved half circles (outer: (cos t, sin t); inner:
/// (1 - cos t, 0.5 - sin t)) with `t` evenly spaced on [0, pi] and
/// additive Gaussian noise of standard deviation `noise`.
pub fn gen_synthetic(kind: SyntheticKind, count: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if count < 2 {
        return Err(Error::config("synthetic dataset needs at least 2 samples"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::config(format!("invalid noise level {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, 0x5E7, 0));
    let per_class = [count.div_ceil(2), count / 2];
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % 2;
        let j = i / 2;
        let mut nx: f64 = StandardNormal.sample(&mut rng);
        let mut ny: f64 = StandardNormal.sample(&mut rng);
        nx *= noise;
        ny *= noise;
        let (x, y) = match kind {
            SyntheticKind::TwoGaussians => {
                let c = if label == 0 { -1.5 } else { 1.5 };
                (c + nx, c + ny)
            }
            SyntheticKind::TwoMoons => {
                let span = (per_class[label] - 1).max(1) as f64;
                let t = std::f64::consts::PI * j as f64 / span;
                if label == 0 {
                    (t.cos() + nx, t.sin() + ny)
                } else {
                    (1.0 - t.cos() + nx, 0.5 - t.sin() + ny)
                }
            }
        };
        samples.push(Sample {
            features: vec![x, y],
            target: label as f64,
        });
    }
    let name = match kind {
        SyntheticKind::TwoGaussians => "two-gaussians",
        SyntheticKind::TwoMoons => "two-moons",
    };
    Dataset::new(name, samples)
}

/// Loads an IDX image/label file pair (the MNIST distribution format).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Parses in-memory IDX images (magic 0x803, u8 pixels) and labels
/// (magic 0x801, u8). Pixels are scaled to [0, 1] by /255.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut img = ByteReader::new(images, "images");
    if img.u32()? != IDX_IMAGES_MAGIC {
        return Err(Error::parse("images magic", "bad magic"));
    }
    let count = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let pixels = img.take(count * rows * cols, "images payload")?;

    let mut lab = ByteReader::new(labels, "labels");
    if lab.u32()? != IDX_LABELS_MAGIC {
        return Err(Error::parse("labels magic", "bad magic"));
    }
    let label_count = lab.u32()? as usize;
    if label_count != count {
        return Err(Error::parse(
            "labels count",
            format!("count mismatch: {count} images vs {label_count} labels"),
        ));
    }
    let targets = lab.take(label_count, "labels payload")?;

    let dim = rows * cols;
    let samples = (0..count)
        .map(|i| Sample {
            features: pixels[i * dim..(i + 1) * dim]
                .iter()
                .map(|&p| f64::from(p) / 255.0)
                .collect(),
            target: f64::from(targets[i]),
        })
        .collect();
    Dataset::new("idx", samples)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'static str,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8], file: &'static str) -> Self {
        ByteReader { bytes, pos: 0, file }
    }

    fn take(&mut self, len: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::parse(
                field,
                format!("truncated {} file: need {len} bytes at offset {}", self.file, self.pos),
            )),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let field = format!("{} header", self.file);
        let b = self.take(4, &field)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}
