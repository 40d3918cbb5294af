//! MNIST IDX ingestion and conversion of grayscale digits into normalized,
//! centroid-centered source intensity objects.
//!
//! Coordinates are in units of original image pixels. The x axis runs along
//! columns (left to right) and the y axis along rows, pointing *up*, so a
//! pixel at `(row, col)` sits at `(col, -row)` before centering.

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is outside 0..=9")]
    LabelOutOfRange { index: usize, label: u8 },
    #[error("requested class {0} does not occur in the data")]
    ClassAbsent(u8),
    #[error("no classes requested")]
    NoClasses,
    #[error("cap per class must be positive")]
    ZeroCap,
    #[error("image {0} has no nonzero pixel and cannot be normalized")]
    EmptyImage(usize),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Decoded IDX image payload, row-major per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImageSet {
    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.rows * self.cols;
        &self.pixels[i * len..(i + 1) * len]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    pub labels: Vec<u8>,
}

impl LabelSet {
    pub fn count(&self) -> usize {
        self.labels.len()
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32, DatasetError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DatasetError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), DatasetError> {
    let found = read_u32_be(bytes, 0)?;
    if found != expected {
        return Err(DatasetError::BadMagic { expected, found });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImageSet, DatasetError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(DatasetError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(RawImageSet {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<LabelSet, DatasetError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32_be(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(DatasetError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let labels = bytes[8..expected].to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(DatasetError::LabelOutOfRange { index, label });
    }
    Ok(LabelSet { labels })
}

/// Decodes a matching pair of IDX image and label payloads.
pub fn parse_idx(
    image_bytes: &[u8],
    label_bytes: &[u8],
) -> Result<(RawImageSet, LabelSet), DatasetError> {
    let images = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if images.count != labels.count() {
        return Err(DatasetError::CountMismatch {
            images: images.count,
            labels: labels.count(),
        });
    }
    Ok((images, labels))
}

pub fn encode_idx_images(images: &RawImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for dim in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &LabelSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.labels.len() as u32).to_be_bytes());
    out.extend_from_slice(&labels.labels);
    out
}

/// Reads a file, gunzipping it when it carries the gzip magic.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let raw = fs::read(path).map_err(io_err)?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn load_idx(
    image_path: &Path,
    label_path: &Path,
) -> Result<(RawImageSet, LabelSet), DatasetError> {
    parse_idx(&read_maybe_gzip(image_path)?, &read_maybe_gzip(label_path)?)
}

/// Indices into a [`RawImageSet`] together with their labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSubset {
    pub indices: Vec<usize>,
    pub labels: Vec<u8>,
}

impl LabeledSubset {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Per-class counts in ascending class order.
    pub fn class_counts(&self) -> Vec<(u8, usize)> {
        let mut counts = [0usize; 10];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        (0u8..10)
            .filter(|&c| counts[c as usize] > 0)
            .map(|c| (c, counts[c as usize]))
            .collect()
    }
}

/// Keeps only the requested classes, optionally truncating each class to
/// `cap_per_class` images by seeded uniform sampling without replacement.
/// The result is ordered by original index.
pub fn select_classes(
    labels: &LabelSet,
    classes: &[u8],
    cap_per_class: Option<usize>,
    seed: u64,
) -> Result<LabeledSubset, DatasetError> {
    let wanted: BTreeSet<u8> = classes.iter().copied().collect();
    if wanted.is_empty() {
        return Err(DatasetError::NoClasses);
    }
    if cap_per_class == Some(0) {
        return Err(DatasetError::ZeroCap);
    }

    let mut kept: Vec<usize> = Vec::new();
    for &class in &wanted {
        let members: Vec<usize> = labels
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            return Err(DatasetError::ClassAbsent(class));
        }
        match cap_per_class {
            Some(cap) if cap < members.len() => {
                // one stream per class so changing the class list leaves
                // the other classes' picks untouched
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(class as u64);
                kept.extend(
                    index::sample(&mut rng, members.len(), cap)
                        .into_iter()
                        .map(|k| members[k]),
                );
            }
            _ => kept.extend(members),
        }
    }
    kept.sort_unstable();
    let labels = kept.iter().map(|&i| labels.labels[i]).collect();
    Ok(LabeledSubset {
        indices: kept,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

/// A normalized, centroid-centered intensity distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceObject {
    pub samples: Vec<Sample>,
    pub index: usize,
    pub label: u8,
}

impl SourceObject {
    /// Converts a row-major grayscale image into a source object. Zero pixels
    /// are dropped; the remaining pixel centers are shifted by the intensity
    /// centroid without any resampling.
    pub fn from_image(
        pixels: &[u8],
        rows: usize,
        cols: usize,
        index: usize,
        label: u8,
    ) -> Result<Self, DatasetError> {
        assert_eq!(pixels.len(), rows * cols, "pixel buffer does not match dims");
        let total: u64 = pixels.iter().map(|&p| p as u64).sum();
        if total == 0 {
            return Err(DatasetError::EmptyImage(index));
        }
        let total = total as f64;

        let mut samples: Vec<Sample> = pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(k, &p)| Sample {
                x: (k % cols) as f64,
                y: -((k / cols) as f64),
                w: p as f64 / total,
            })
            .collect();

        let cx: f64 = samples.iter().map(|s| s.w * s.x).sum();
        let cy: f64 = samples.iter().map(|s| s.w * s.y).sum();
        for s in &mut samples {
            s.x -= cx;
            s.y -= cy;
        }
        Ok(SourceObject {
            samples,
            index,
            label,
        })
    }

    /// A single unit-weight point at `(x, y)`. Not centered; used for
    /// point-source diagnostics.
    pub fn point(x: f64, y: f64) -> Self {
        SourceObject {
            samples: vec![Sample { x, y, w: 1.0 }],
            index: 0,
            label: 0,
        }
    }

    /// Largest absolute coordinate over both axes.
    pub fn radius(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.x.abs().max(s.y.abs()))
            .fold(0.0, f64::max)
    }

    /// Multiplies every coordinate by `f`.
    pub fn scaled(&self, f: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.x *= f;
            s.y *= f;
        }
        out
    }

    /// Reflects the object about the y axis (x -> -x).
    pub fn mirrored_x(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.x = -s.x;
        }
        out
    }
}

pub fn to_source_object(
    images: &RawImageSet,
    labels: &LabelSet,
    index: usize,
) -> Result<SourceObject, DatasetError> {
    SourceObject::from_image(
        images.image(index),
        images.rows,
        images.cols,
        index,
        labels.labels[index],
    )
}
