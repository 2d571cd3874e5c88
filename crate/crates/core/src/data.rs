//! Datasets: IDX (MNIST) ingestion, synthetic Gaussian blobs, label
//! corruption and seeded subsampling.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::nn::LabeledExample;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: cannot read file: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated file ({found} bytes, need {needed})")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("usage error: {0}")]
    Usage(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    /// Validates labels, feature lengths and non-emptiness.
    pub fn new(
        name: impl Into<String>,
        examples: Vec<LabeledExample>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if examples.is_empty() {
            return Err(DataError::Invalid("dataset is empty".into()));
        }
        if num_classes == 0 {
            return Err(DataError::Invalid("num_classes must be positive".into()));
        }
        let dim = examples[0].features.len();
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != dim {
                return Err(DataError::Invalid(format!(
                    "example {i} has {} features, expected {dim}",
                    ex.features.len()
                )));
            }
            if ex.label >= num_classes {
                return Err(DataError::Invalid(format!(
                    "example {i} has label {} >= {num_classes}",
                    ex.label
                )));
            }
        }
        Ok(Self {
            examples,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.examples[0].features.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// First `n` examples (or all of them when `n >= len`).
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            examples: self.examples[..n.min(self.len())].to_vec(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    /// CSV interchange form: one row per example, `label,f0,f1,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            write!(out, "{}", ex.label).unwrap();
            for v in &ex.features {
                write!(out, ",{v:e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(name: &str, text: &str, num_classes: usize) -> Result<Dataset, DataError> {
        let mut examples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let bad = |msg: &str| DataError::Invalid(format!("csv line {}: {msg}", lineno + 1));
            let label = fields
                .next()
                .and_then(|f| f.trim().parse::<usize>().ok())
                .ok_or_else(|| bad("bad label"))?;
            let features = fields
                .map(|f| f.trim().parse::<f64>().map_err(|_| bad("bad feature")))
                .collect::<Result<Vec<_>, _>>()?;
            examples.push(LabeledExample::new(features, label));
        }
        Dataset::new(name, examples, num_classes)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            needed: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Parses an IDX image file into row-major pixel vectors scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<Vec<f64>>, DataError> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let pixels = rows * cols;
    let needed = 16 + count * pixels;
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[16..needed]
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>, DataError> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..needed].iter().map(|&l| l as usize).collect())
}

/// Loads an IDX image/label pair. The class count is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let images = parse_idx_images(&read_file(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_file(labels_path)?, labels_path)?;
    if images.len() != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let examples = images
        .into_iter()
        .zip(labels)
        .map(|(f, l)| LabeledExample::new(f, l))
        .collect();
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(name, examples, num_classes)
}

/// Encodes images (values quantized to bytes) and labels as an IDX pair.
pub fn encode_idx(
    images: &[Vec<u8>],
    rows: usize,
    cols: usize,
    labels: &[u8],
) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

/// Class `c` is drawn from `N(separation * e_{c mod dim}, I)`; labels cycle
/// through the classes so counts are balanced up to rounding.
pub fn synthetic_gaussian_blobs(
    num_classes: usize,
    dim: usize,
    n: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if num_classes == 0 || dim == 0 {
        return Err(DataError::Usage(
            "num_classes and dim must be positive".into(),
        ));
    }
    if n < num_classes {
        return Err(DataError::Usage(format!(
            "need n >= num_classes ({n} < {num_classes})"
        )));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(DataError::Usage(format!("bad separation {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let label = i % num_classes;
            let mut features: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            features[label % dim] += separation;
            LabeledExample::new(features, label)
        })
        .collect();
    Dataset::new(
        format!("blobs-k{num_classes}-d{dim}"),
        examples,
        num_classes,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub portion: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(portion: f64, seed: u64) -> Result<Self, DataError> {
        if !(0.0..=1.0).contains(&portion) {
            return Err(DataError::Usage(format!(
                "corruption portion {portion} not in [0,1]"
            )));
        }
        Ok(Self { portion, seed })
    }

    pub fn num_corrupted(&self, n: usize) -> usize {
        ((n as f64) * self.portion).round() as usize
    }
}

/// Replaces the labels of `round(n * p)` distinct, uniformly chosen examples
/// with uniform draws over all classes (the original label may be redrawn).
pub fn corrupt_labels(dataset: &Dataset, spec: &CorruptionSpec) -> Dataset {
    let mut out = dataset.clone();
    let n = dataset.len();
    let count = spec.num_corrupted(n).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in index::sample(&mut rng, n, count).into_iter() {
        out.examples[i].label = rng.random_range(0..dataset.num_classes);
    }
    out
}

/// Indices touched by [`corrupt_labels`] for this spec, in draw order.
pub fn corrupted_indices(n: usize, spec: &CorruptionSpec) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    index::sample(&mut rng, n, spec.num_corrupted(n).min(n)).into_vec()
}

/// Uniform sample of `n` examples without replacement, in random order.
pub fn subsample(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset, DataError> {
    if n > dataset.len() {
        return Err(DataError::Usage(format!(
            "cannot subsample {n} of {} examples",
            dataset.len()
        )));
    }
    if n == 0 {
        return Err(DataError::Usage("subsample size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = index::sample(&mut rng, dataset.len(), n)
        .into_iter()
        .map(|i| dataset.examples[i].clone())
        .collect();
    Dataset::new(dataset.name.clone(), examples, dataset.num_classes)
}
