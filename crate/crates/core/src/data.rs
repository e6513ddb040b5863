//! Datasets: synthetic Gaussian blobs, IDX ingestion and per-device shards.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Purpose};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub n_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            n_features: self.n_features,
            n_classes: self.n_classes,
            samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    #[default]
    Iid,
    LabelShard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub shards_per_device: usize,
    pub seed: u64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            mode: PartitionMode::Iid,
            shards_per_device: 2,
            seed: 0,
        }
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Isotropic Gaussian blobs with unit covariance.
///
/// Class `c` is centred at `class_separation * e_c` while `c < n_features`;
/// further classes use random unit directions scaled the same way. Labels are
/// assigned round-robin before shuffling, so class counts differ by at most one.
pub fn gen_synthetic(
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_features == 0 || n_classes < 2 {
        return Err(Error::argument("need n_features >= 1 and n_classes >= 2"));
    }
    if n_samples < n_classes {
        return Err(Error::argument("n_samples must be at least n_classes"));
    }
    if !(class_separation > 0.0 && class_separation.is_finite()) {
        return Err(Error::argument("class_separation must be positive"));
    }
    let mut rng = seed::stream(seed, seed::GLOBAL, 0, Purpose::Dataset);

    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| {
            if c < n_features {
                let mut m = vec![0.0; n_features];
                m[c] = class_separation;
                m
            } else {
                let dir: Vec<f64> = (0..n_features).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                dir.into_iter().map(|v| v / norm * class_separation).collect()
            }
        })
        .collect();

    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
    shuffle(&mut labels, &mut rng);

    let samples = labels
        .into_iter()
        .map(|label| {
            let features = means[label]
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            Sample { features, label }
        })
        .collect();

    Ok(Dataset {
        n_features,
        n_classes,
        samples,
    })
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(format!("truncated {what} header")))
}

/// Parses an IDX image file (magic 0x00000803, u8 pixels) into rows of
/// features scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, Vec<Vec<f64>>)> {
    let magic = read_be_u32(bytes, 0, "image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(format!("bad image magic {magic:#010x}")));
    }
    let count = read_be_u32(bytes, 4, "image")? as usize;
    let rows = read_be_u32(bytes, 8, "image")? as usize;
    let cols = read_be_u32(bytes, 12, "image")? as usize;
    let pixels = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format("image dimensions overflow"))?;
    let body = &bytes[16..];
    let expected = count
        .checked_mul(pixels)
        .ok_or_else(|| Error::format("image count overflow"))?;
    if body.len() != expected {
        return Err(Error::format(format!(
            "image payload has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let images = if pixels == 0 {
        vec![Vec::new(); count]
    } else {
        body.chunks(pixels)
            .map(|px| px.iter().map(|&b| b as f64 / 255.0).collect())
            .collect()
    };
    Ok((pixels, images))
}

/// Parses an IDX label file (magic 0x00000801).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_be_u32(bytes, 0, "label")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(format!("bad label magic {magic:#010x}")));
    }
    let count = read_be_u32(bytes, 4, "label")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::format(format!(
            "label payload has {} bytes, header implies {count}",
            body.len()
        )));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Encodes u8 images of `rows x cols` pixels as an IDX image file.
pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<Vec<u8>> {
    if images.iter().any(|im| im.len() != rows * cols) {
        return Err(Error::argument("image size does not match rows * cols"));
    }
    let header = |v: usize| u32::try_from(v).map_err(|_| Error::argument("IDX dimension exceeds u32"));
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&header(images.len())?.to_be_bytes());
    out.extend_from_slice(&header(rows)?.to_be_bytes());
    out.extend_from_slice(&header(cols)?.to_be_bytes());
    for im in images {
        out.extend_from_slice(im);
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let count = u32::try_from(labels.len()).map_err(|_| Error::argument("too many labels"))?;
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&count.to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::argument(format!("label {l} does not fit in a byte")))?);
    }
    Ok(out)
}

/// Min-max scales every feature of `dataset` jointly onto 0..=255.
pub fn quantize(dataset: &Dataset) -> Vec<Vec<u8>> {
    let values = dataset.samples.iter().flat_map(|s| s.features.iter().copied());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    dataset
        .samples
        .iter()
        .map(|s| {
            s.features
                .iter()
                .map(|v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect()
        })
        .collect()
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n_features, images) = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::format(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    if n_features == 0 {
        return Err(Error::format("images have zero pixels"));
    }
    let n_classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
    let samples = images
        .into_iter()
        .zip(labels)
        .map(|(features, label)| Sample { features, label })
        .collect();
    Ok(Dataset {
        n_features,
        n_classes,
        samples,
    })
}

/// Shuffles and splits off `test_fraction` of the samples (rounded down) as
/// the held-out evaluation set.
pub fn train_test_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::argument("test_fraction must be in [0, 1)"));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = seed::stream(seed, seed::GLOBAL, 0, Purpose::Split);
    shuffle(&mut idx, &mut rng);
    let n_test = (dataset.len() as f64 * test_fraction).floor() as usize;
    let pick = |ids: &[usize]| ids.iter().map(|&i| dataset.samples[i].clone()).collect();
    let test = dataset.with_samples(pick(&idx[..n_test]));
    let train = dataset.with_samples(pick(&idx[n_test..]));
    Ok((train, test))
}

/// Splits `dataset` into `n_devices` disjoint shards covering every sample.
pub fn partition(dataset: &Dataset, n_devices: usize, spec: &PartitionSpec) -> Result<Vec<Vec<Sample>>> {
    if n_devices == 0 {
        return Err(Error::argument("n_devices must be positive"));
    }
    if n_devices > dataset.len() {
        return Err(Error::argument(format!(
            "{n_devices} devices but only {} samples",
            dataset.len()
        )));
    }
    let mut rng = seed::stream(spec.seed, seed::GLOBAL, 0, Purpose::Partition);
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    shuffle(&mut idx, &mut rng);

    let groups: Vec<Vec<usize>> = match spec.mode {
        PartitionMode::Iid => split_even(&idx, n_devices),
        PartitionMode::LabelShard => {
            if spec.shards_per_device == 0 {
                return Err(Error::argument("shards_per_device must be positive"));
            }
            let n_shards = n_devices * spec.shards_per_device;
            if n_shards > dataset.len() {
                return Err(Error::argument(format!(
                    "{n_shards} label shards but only {} samples",
                    dataset.len()
                )));
            }
            idx.sort_by_key(|&i| dataset.samples[i].label);
            let mut shards = split_even(&idx, n_shards);
            shuffle(&mut shards, &mut rng);
            shards.chunks(spec.shards_per_device).map(|c| c.concat()).collect()
        }
    };

    Ok(groups
        .into_iter()
        .map(|g| g.into_iter().map(|i| dataset.samples[i].clone()).collect())
        .collect())
}

/// Contiguous split into `parts` runs whose lengths differ by at most one.
fn split_even(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}
