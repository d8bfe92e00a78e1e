//! Dataset generation, IDX ingestion, batching, and the test-set
//! corruption suite.
//!
//! Datasets are immutable after construction and safe to share across
//! threads. Every generator and corruption is bitwise deterministic from
//! its seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::model::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Fixed-shape feature tensors with class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    /// Per-example feature shape, e.g. [2] for points or [c, h, w] for images.
    shape: Vec<usize>,
    class_count: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        shape: Vec<usize>,
        class_count: usize,
        split: Split,
    ) -> Result<Dataset> {
        let feat_len: usize = shape.iter().product();
        if labels.is_empty() {
            return Err(CoreError::Config("dataset must be nonempty".into()));
        }
        if feat_len == 0 || features.len() != labels.len() * feat_len {
            return Err(CoreError::ShapeMismatch {
                expected: format!(
                    "{} features ({} x {feat_len})",
                    labels.len() * feat_len,
                    labels.len()
                ),
                got: format!("{} features", features.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(CoreError::Config(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            shape,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feat_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Dataset {
        self.split = split;
        self
    }

    pub fn example(&self, i: usize) -> &[f64] {
        let f = self.feat_len();
        &self.features[i * f..(i + 1) * f]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Copies the examples at `indices`, in order, into a batch.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let f = self.feat_len();
        let mut inputs = Vec::with_capacity(indices.len() * f);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.example(i));
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, labels, f)
    }

    /// The whole dataset as one batch, in index order.
    pub fn to_batch(&self) -> Batch {
        Batch::new(self.features.clone(), self.labels.clone(), self.feat_len())
    }
}

/// Gaussian point clouds; class c sits at simplex vertex 4*e_c (the origin
/// for c = dims), so at most dims+1 classes fit.
pub fn make_blobs(
    class_count: usize,
    dims: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if class_count == 0 || dims == 0 || n_per_class == 0 {
        return Err(CoreError::Config("blob sizes must be positive".into()));
    }
    if !(spread >= 0.0) {
        return Err(CoreError::Config(format!(
            "blob spread must be >= 0, got {spread}"
        )));
    }
    if class_count > dims + 1 {
        return Err(CoreError::Config(format!(
            "{class_count} classes need at least {} dims (one simplex vertex each)",
            class_count - 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = class_count * n_per_class;
    let mut features = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for c in 0..class_count {
        for _ in 0..n_per_class {
            for d in 0..dims {
                let center = if c < dims && d == c { 4.0 } else { 0.0 };
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(center + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, vec![dims], class_count, Split::Train)
}

/// Two interleaved spiral arms in the plane with angular noise.
///
/// Point i of an arm has radius 0.25 + 0.75*t and angle 3*pi*t + arm*pi
/// (+ noise), t = i/(n-1), so radii grow strictly along each arm.
pub fn make_spirals(n_per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n_per_class < 2 {
        return Err(CoreError::Config(
            "spirals need at least 2 points per arm".into(),
        ));
    }
    if !(noise >= 0.0) {
        return Err(CoreError::Config(format!(
            "spiral noise must be >= 0, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n_per_class * 4);
    let mut labels = Vec::with_capacity(n_per_class * 2);
    for arm in 0..2usize {
        for i in 0..n_per_class {
            let t = i as f64 / (n_per_class - 1) as f64;
            let r = 0.25 + 0.75 * t;
            let z: f64 = StandardNormal.sample(&mut rng);
            let theta =
                3.0 * std::f64::consts::PI * t + arm as f64 * std::f64::consts::PI + noise * z;
            features.push(r * theta.cos());
            features.push(r * theta.sin());
            labels.push(arm);
        }
    }
    Dataset::new(features, labels, vec![2], 2, Split::Train)
}

fn read_u32_be(bytes: &[u8], off: usize, what: &str) -> Result<u32> {
    let end = off + 4;
    if bytes.len() < end {
        return Err(CoreError::Ingest(format!("file truncated reading {what}")));
    }
    Ok(u32::from_be_bytes([
        bytes[off],
        bytes[off + 1],
        bytes[off + 2],
        bytes[off + 3],
    ]))
}

/// Parses an IDX image/label file pair (the MNIST container format).
/// Pixels are scaled from u8 to [0,1]; labels become class indices.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let read = |path: &Path| {
        std::fs::read(path)
            .map_err(|e| CoreError::Ingest(format!("cannot read {}: {e}", path.display())))
    };
    let images = read(images_path)?;
    let labels_raw = read(labels_path)?;

    let magic = read_u32_be(&images, 0, "image magic")?;
    if magic != 0x0000_0803 {
        return Err(CoreError::Ingest(format!(
            "bad magic {magic:#010x} in image file, expected 0x00000803"
        )));
    }
    let count = read_u32_be(&images, 4, "image count")? as usize;
    let rows = read_u32_be(&images, 8, "image rows")? as usize;
    let cols = read_u32_be(&images, 12, "image cols")? as usize;
    let expect = 16 + count * rows * cols;
    if images.len() != expect {
        return Err(CoreError::Ingest(format!(
            "image file has {} bytes, expected {expect} for {count} images of {rows}x{cols}",
            images.len()
        )));
    }

    let lmagic = read_u32_be(&labels_raw, 0, "label magic")?;
    if lmagic != 0x0000_0801 {
        return Err(CoreError::Ingest(format!(
            "bad magic {lmagic:#010x} in label file, expected 0x00000801"
        )));
    }
    let lcount = read_u32_be(&labels_raw, 4, "label count")? as usize;
    if labels_raw.len() != 8 + lcount {
        return Err(CoreError::Ingest(format!(
            "label file has {} bytes, expected {} for {lcount} labels",
            labels_raw.len(),
            8 + lcount
        )));
    }
    if lcount != count {
        return Err(CoreError::Ingest(format!(
            "count mismatch: {count} images but {lcount} labels"
        )));
    }
    if count == 0 {
        return Err(CoreError::Ingest("IDX files contain zero examples".into()));
    }

    let features: Vec<f64> = images[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = labels_raw[8..].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().unwrap() + 1;
    Dataset::new(
        features,
        labels,
        vec![1, rows, cols],
        class_count,
        Split::Train,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    GaussianNoise,
    ImpulseNoise,
    Blur3x3,
    Contrast,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::Blur3x3,
        CorruptionKind::Contrast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::Blur3x3 => "blur3x3",
            CorruptionKind::Contrast => "contrast",
        }
    }

    /// Blur and contrast interpret features spatially, so they need
    /// channel-height-width shaped examples.
    pub fn needs_image_shape(self) -> bool {
        matches!(self, CorruptionKind::Blur3x3 | CorruptionKind::Contrast)
    }
}

/// Corruption kind plus severity level 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<CorruptionSpec> {
        if !(1..=5).contains(&severity) {
            return Err(CoreError::Config(format!(
                "corruption severity must be 1..=5, got {severity}"
            )));
        }
        Ok(CorruptionSpec { kind, severity })
    }
}

/// Per-severity parameter tables (normative; severity index = level - 1).
const GAUSSIAN_SIGMA: [f64; 5] = [0.04, 0.08, 0.12, 0.16, 0.20];
const IMPULSE_FRACTION: [f64; 5] = [0.01, 0.02, 0.04, 0.08, 0.16];
const BLUR_PASSES: [usize; 5] = [1, 2, 3, 4, 5];
const CONTRAST_SCALE: [f64; 5] = [0.8, 0.65, 0.5, 0.35, 0.2];

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// One pass of a normalized 3x3 box filter over a [c, h, w] plane stack.
/// Border pixels average over their valid neighborhood, so constant
/// images are fixed points.
fn box_blur_pass(pix: &mut [f64], c: usize, h: usize, w: usize) {
    let mut out = vec![0.0; pix.len()];
    for ch in 0..c {
        let plane = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut count = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let ny = y as i64 + dy;
                        let nx = x as i64 + dx;
                        if ny >= 0 && ny < h as i64 && nx >= 0 && nx < w as i64 {
                            acc += pix[plane + (ny as usize) * w + nx as usize];
                            count += 1.0;
                        }
                    }
                }
                out[plane + y * w + x] = acc / count;
            }
        }
    }
    pix.copy_from_slice(&out);
}

/// Applies one corruption to a test split, leaving labels, shapes, and
/// example count untouched.
pub fn corrupt(dataset: &Dataset, spec: &CorruptionSpec, seed: u64) -> Result<Dataset> {
    if dataset.split() != Split::Test {
        return Err(CoreError::Config(
            "corruption applies to the test split only".into(),
        ));
    }
    let s = (spec.severity - 1) as usize;
    if spec.kind.needs_image_shape() && dataset.shape().len() != 3 {
        return Err(CoreError::Config(format!(
            "{} needs [channels, height, width] data, got shape {:?}",
            spec.kind.name(),
            dataset.shape()
        )));
    }

    let mut features = dataset.features.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec.kind {
        CorruptionKind::GaussianNoise => {
            let sigma = GAUSSIAN_SIGMA[s];
            for v in features.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = clamp01(*v + sigma * z);
            }
        }
        CorruptionKind::ImpulseNoise => {
            // One draw per pixel: low half of the flip band goes to 0,
            // high half to 1.
            let p = IMPULSE_FRACTION[s];
            for v in features.iter_mut() {
                let u: f64 = rng.random();
                if u < p / 2.0 {
                    *v = 0.0;
                } else if u < p {
                    *v = 1.0;
                }
            }
        }
        CorruptionKind::Blur3x3 => {
            let (c, h, w) = (dataset.shape[0], dataset.shape[1], dataset.shape[2]);
            let f = dataset.feat_len();
            for i in 0..dataset.len() {
                let pix = &mut features[i * f..(i + 1) * f];
                for _ in 0..BLUR_PASSES[s] {
                    box_blur_pass(pix, c, h, w);
                }
            }
        }
        CorruptionKind::Contrast => {
            let scale = CONTRAST_SCALE[s];
            for v in features.iter_mut() {
                *v = clamp01(0.5 + scale * (*v - 0.5));
            }
        }
    }

    Ok(Dataset {
        features,
        labels: dataset.labels.clone(),
        shape: dataset.shape.clone(),
        class_count: dataset.class_count,
        split: Split::Test,
    })
}

/// Shuffled mini-batch iterator: a fresh full permutation each epoch, the
/// final partial batch kept. Deterministic from seed and stream id.
pub struct BatchStream<'a> {
    data: &'a Dataset,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchStream<'a> {
    pub fn new(data: &'a Dataset, batch_size: usize, seed: u64) -> Result<BatchStream<'a>> {
        Self::with_stream(data, batch_size, seed, 0)
    }

    /// Independent stream with the same seed; used to draw a second batch
    /// sequence that shares nothing with stream 0.
    pub fn with_stream(
        data: &'a Dataset,
        batch_size: usize,
        seed: u64,
        stream: u64,
    ) -> Result<BatchStream<'a>> {
        if batch_size == 0 || batch_size > data.len() {
            return Err(CoreError::Config(format!(
                "batch size {batch_size} invalid for dataset of {} examples",
                data.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut s = BatchStream {
            data,
            batch_size,
            order: (0..data.len()).collect(),
            pos: 0,
            rng,
        };
        s.shuffle();
        Ok(s)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.batch_size)
    }

    fn shuffle(&mut self) {
        // Fisher-Yates, spelled out so the draw sequence is pinned by this
        // crate rather than a shuffle helper's internals.
        for i in (1..self.order.len()).rev() {
            let j = self.rng.random_range(0..=i);
            self.order.swap(i, j);
        }
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.pos >= self.order.len() {
            self.shuffle();
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.data.gather(&self.order[self.pos..end]);
        self.pos = end;
        batch
    }
}

const DATASET_MAGIC: &[u8; 4] = b"RWPD";

/// Writes a dataset in the binary dump format (magic "RWPD").
pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&[match dataset.split {
        Split::Train => 0u8,
        Split::Test => 1u8,
    }])?;
    w.write_all(&(dataset.class_count as u32).to_le_bytes())?;
    w.write_all(&(dataset.shape.len() as u32).to_le_bytes())?;
    for &d in &dataset.shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&(dataset.len() as u64).to_le_bytes())?;
    for &l in &dataset.labels {
        w.write_all(&(l as u32).to_le_bytes())?;
    }
    for &v in &dataset.features {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut read_exact = |n: usize, what: &str| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf)
            .map_err(|_| CoreError::Ingest(format!("dataset file truncated reading {what}")))?;
        Ok(buf)
    };

    let magic = read_exact(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(CoreError::Ingest(format!(
            "bad dataset magic {magic:?}, expected {DATASET_MAGIC:?}"
        )));
    }
    let split = match read_exact(1, "split tag")?[0] {
        0 => Split::Train,
        1 => Split::Test,
        other => {
            return Err(CoreError::Ingest(format!("bad split tag {other}")));
        }
    };
    let u32_of = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    let class_count = u32_of(&read_exact(4, "class count")?);
    let shape_len = u32_of(&read_exact(4, "shape length")?);
    let mut shape = Vec::with_capacity(shape_len);
    for _ in 0..shape_len {
        shape.push(u32_of(&read_exact(4, "shape dim")?));
    }
    let n_bytes = read_exact(8, "example count")?;
    let n = u64::from_le_bytes(n_bytes.try_into().unwrap()) as usize;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(u32_of(&read_exact(4, "label")?));
    }
    let feat_len: usize = shape.iter().product();
    let mut features = Vec::with_capacity(n * feat_len);
    for _ in 0..n * feat_len {
        let b = read_exact(8, "feature value")?;
        features.push(f64::from_le_bytes(b.try_into().unwrap()));
    }
    Dataset::new(features, labels, shape, class_count, split)
}
