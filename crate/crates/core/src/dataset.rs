//! MNIST in IDX format.
//!
//! The four files are the usual `train-images-idx3-ubyte`,
//! `train-labels-idx1-ubyte`, `t10k-images-idx3-ubyte` and
//! `t10k-labels-idx1-ubyte`, raw or gzip-compressed (with or without a `.gz`
//! suffix; compression is detected from the stream itself).

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{INPUT_DIM, NUM_CLASSES};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Environment variable consulted when no data directory is given.
pub const DATA_DIR_ENV: &str = "DEEPGROK_DATA_DIR";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Inputs in `[0, 1]`, integer labels and the matching 0/1 one-hot targets.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    inputs: Matrix,
    labels: Vec<u8>,
    onehot: Matrix,
}

impl LabeledSet {
    pub fn new(inputs: Matrix, labels: Vec<u8>) -> Result<LabeledSet> {
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Value(format!("label {bad} is not a digit")));
        }
        let onehot = one_hot(&labels);
        Ok(LabeledSet {
            inputs,
            labels,
            onehot,
        })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn onehot(&self) -> &Matrix {
        &self.onehot
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            onehot: self.onehot.select_rows(indices),
        }
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

pub fn one_hot(labels: &[u8]) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), NUM_CLASSES);
    for (r, &l) in labels.iter().enumerate() {
        m[(r, l as usize)] = 1.0;
    }
    m
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let word = bytes.get(offset..offset + 4).ok_or(Error::Length {
        expected: offset + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(word.try_into().expect("4 bytes")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format(format!(
            "magic number {magic:#010x}, expected {expected:#010x}"
        )));
    }
    Ok(())
}

/// Decompresses the stream if it starts with the gzip signature.
pub fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

/// Parses an IDX3 image stream into an `n × (rows·cols)` matrix of pixels
/// scaled to `[0, 1]`.
pub fn load_idx_images(bytes: &[u8]) -> Result<Matrix> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let pixels = rows * cols;
    let expected = 16 + n * pixels;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[16..expected]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Matrix::from_vec(n, pixels, data)
}

/// Parses an IDX1 label stream.
pub fn load_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = read_be_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let labels = bytes[8..expected].to_vec();
    if let Some((i, bad)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(Error::Value(format!(
            "label {bad} at index {i} is not a digit"
        )));
    }
    Ok(labels)
}

/// Serializes labels as an IDX1 stream.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Serializes `[0, 1]` pixel rows as an IDX3 stream of `rows × cols` images.
pub fn encode_idx_images(images: &Matrix, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != images.cols() {
        return Err(Error::Shape(format!(
            "{rows}x{cols} images need {} columns, got {}",
            rows * cols,
            images.cols()
        )));
    }
    let mut out = Vec::with_capacity(16 + images.as_slice().len());
    for word in [IMAGES_MAGIC, images.rows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend(
        images
            .as_slice()
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// `n_train` distinct indices out of `0..full`, in sampling order. The same
/// `(full, n_train, seed)` always yields the same sequence.
pub fn split_indices(full: usize, n_train: usize, seed: u64) -> Result<Vec<usize>> {
    if n_train == 0 || n_train > full {
        return Err(Error::Argument(format!(
            "training-set size {n_train} must be within 1..={full}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, full, n_train).into_vec())
}

/// Uniform random subset of `full_train` without replacement.
pub fn make_split(full_train: &LabeledSet, n_train: usize, seed: u64) -> Result<LabeledSet> {
    let idx = split_indices(full_train.len(), n_train, seed)?;
    Ok(full_train.subset(&idx))
}

#[derive(Clone, Debug)]
pub struct Mnist {
    pub train: LabeledSet,
    pub test: LabeledSet,
}

impl Mnist {
    /// Loads the four IDX files from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Mnist> {
        let dir = dir.as_ref();
        let images = |name| load_idx_images(&read_idx_file(dir, name)?);
        let labels = |name| load_idx_labels(&read_idx_file(dir, name)?);
        Ok(Mnist {
            train: LabeledSet::new(images(TRAIN_IMAGES)?, labels(TRAIN_LABELS)?)?,
            test: LabeledSet::new(images(TEST_IMAGES)?, labels(TEST_LABELS)?)?,
        })
    }

    /// Resolves the data directory from an explicit path or the
    /// `DEEPGROK_DATA_DIR` environment variable.
    pub fn resolve_dir(explicit: Option<&Path>) -> Result<PathBuf> {
        match explicit {
            Some(p) => Ok(p.to_path_buf()),
            None => std::env::var_os(DATA_DIR_ENV)
                .map(PathBuf::from)
                .ok_or_else(|| {
                    Error::Argument(format!(
                        "no data directory given and {DATA_DIR_ENV} is unset"
                    ))
                }),
        }
    }
}

fn read_idx_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let plain = dir.join(name);
    let path = if plain.exists() {
        plain
    } else {
        dir.join(format!("{name}.gz"))
    };
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    maybe_gunzip(bytes)
}

/// A deterministic MNIST-shaped stand-in: ten random prototype images plus
/// per-sample noise, clipped to `[0, 1]`. Used by examples and tests that
/// must run without the real files.
pub fn synthetic_digits(n_train: usize, n_test: usize, seed: u64) -> Mnist {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 1.0);
    let prototypes: Vec<Vec<f64>> = (0..NUM_CLASSES)
        .map(|_| {
            (0..INPUT_DIM)
                .map(|_| {
                    let u: f64 = unit.sample(&mut rng);
                    if u < 0.2 {
                        unit.sample(&mut rng)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut draw = |n: usize| {
        let mut data = Vec::with_capacity(n * INPUT_DIM);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % NUM_CLASSES;
            labels.push(class as u8);
            for &p in &prototypes[class] {
                let noise = 0.6 * (unit.sample(&mut rng) - 0.5);
                data.push((p + noise).clamp(0.0, 1.0));
            }
        }
        let inputs = Matrix::from_vec(n, INPUT_DIM, data).expect("sized above");
        LabeledSet::new(inputs, labels).expect("labels are digits")
    };
    let train = draw(n_train);
    let test = draw(n_test);
    Mnist { train, test }
}
