//! IDX reader and the letters subset used for semantic encoding.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::channels::rng_for;
use crate::error::{Error, Result};

/// A decoded IDX tensor of unsigned bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX file: two zero bytes, type code 0x08 (unsigned byte), the
/// number of dimensions, big-endian u32 sizes, then raw data.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let err = |offset: usize, message: String| Error::Idx { offset, message };
    if bytes.len() < 4 {
        return Err(err(0, "file shorter than the magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(err(
            0,
            format!("bad magic {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3]),
        ));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(err(3, "zero dimensions".into()));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(err(bytes.len(), "truncated dimension header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| err(4, "dimension product overflows".into()))?;
    if bytes.len() - header != count {
        return Err(err(
            header,
            format!("expected {count} data bytes, found {}", bytes.len() - header),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&std::fs::read(path)?)
}

/// Serializes an unsigned-byte IDX tensor.
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Letters used by the semantic case study, in class order.
pub const SEMANTIC_LETTERS: [char; 6] = ['S', 'I', 'M', 'N', 'T', 'U'];

/// EMNIST letters label of an ASCII letter (`A` and `a` map to 1).
pub fn letter_label(c: char) -> Result<u8> {
    if c.is_ascii_alphabetic() {
        Ok(c.to_ascii_uppercase() as u8 - b'A' + 1)
    } else {
        Err(Error::InvalidArgument(format!("{c:?} is not a letter")))
    }
}

/// Images with intensities in `[0, 1]` (row-major, `height x width`),
/// labels remapped to `0..classes.len()`, and a stratified split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset and splits it. Every class must be present.
    pub fn new(
        width: usize,
        height: usize,
        images: Vec<Vec<f64>>,
        labels: Vec<usize>,
        classes: Vec<String>,
        test_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dataset(format!("{} images for {} labels", images.len(), labels.len())));
        }
        if let Some(img) = images.iter().find(|i| i.len() != width * height) {
            return Err(Error::Dataset(format!("image of {} pixels, expected {}", img.len(), width * height)));
        }
        let mut counts = vec![0usize; classes.len()];
        for &l in &labels {
            *counts
                .get_mut(l)
                .ok_or_else(|| Error::Dataset(format!("label {l} outside {} classes", classes.len())))? += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Dataset(format!("class {} has no samples", classes[c])));
        }
        let (train, test) = stratified_split(&labels, classes.len(), test_fraction, seed)?;
        Ok(Self {
            width,
            height,
            images,
            labels,
            classes,
            train,
            test,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// The first `per_class` training indices of each class (in split
    /// order), or all of them.
    pub fn train_subset(&self, per_class: Option<usize>) -> Vec<usize> {
        let Some(cap) = per_class else {
            return self.train.clone();
        };
        let mut taken = vec![0usize; self.num_classes()];
        self.train
            .iter()
            .copied()
            .filter(|&i| {
                let c = &mut taken[self.labels[i]];
                *c += 1;
                *c <= cap
            })
            .collect()
    }
}

/// Splits indices so that the test set has `ceil(f * total)` items.
/// Each class first gets `floor(f * n_c)` test items; the remainder goes
/// to classes with the largest fractional share (lower class first on
/// ties), never taking a class's last training item. Within a class the
/// test items are the first of a seeded shuffle. Both lists are sorted.
pub fn stratified_split(labels: &[usize], classes: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let total = labels.len();
    let target = (test_fraction * total as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut quota: Vec<usize> = members
        .iter()
        .map(|m| ((test_fraction * m.len() as f64 + 1e-9).floor() as usize).min(m.len().saturating_sub(1)))
        .collect();
    let mut order: Vec<usize> = (0..classes).collect();
    let frac = |c: usize| test_fraction * members[c].len() as f64 - quota[c] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    let mut remaining = target.saturating_sub(quota.iter().sum());
    while remaining > 0 {
        let mut progressed = false;
        for &c in &order {
            if remaining > 0 && quota[c] + 1 < members[c].len() {
                quota[c] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, m) in members.iter_mut().enumerate() {
        let mut rng = rng_for(seed, c as u64);
        m.shuffle(&mut rng);
        test.extend_from_slice(&m[..quota[c]]);
        train.extend_from_slice(&m[quota[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Keeps the samples whose raw label is in `filter` (remapped to its
/// position) and normalizes pixels to `[0, 1]`.
pub fn select_classes(images: &IdxArray, labels: &IdxArray, filter: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>, Vec<usize>)> {
    if filter.is_empty() {
        return Err(Error::Dataset("empty class filter".into()));
    }
    if images.dims.len() != 3 || labels.dims.len() != 1 {
        return Err(Error::Dataset(format!(
            "expected 3-d images and 1-d labels, got {:?} and {:?}",
            images.dims, labels.dims
        )));
    }
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(Error::Dataset(format!("{n} images for {} labels", labels.dims[0])));
    }
    let mut out_images = Vec::new();
    let mut out_labels = Vec::new();
    for (i, raw) in labels.data.iter().enumerate() {
        if let Some(c) = filter.iter().position(|f| f == raw) {
            let px = &images.data[i * h * w..(i + 1) * h * w];
            out_images.push(px.iter().map(|&p| p as f64 / 255.0).collect());
            out_labels.push(c);
        }
    }
    Ok((w, h, out_images, out_labels))
}

/// Loads an EMNIST-letters IDX pair restricted to `letters`.
pub fn ingest_emnist(images_path: &Path, labels_path: &Path, letters: &[char], test_fraction: f64, seed: u64) -> Result<Dataset> {
    if letters.is_empty() {
        return Err(Error::Dataset("empty class filter".into()));
    }
    let filter = letters.iter().map(|&c| letter_label(c)).collect::<Result<Vec<u8>>>()?;
    let images = read_idx(images_path)?;
    let labels = read_idx(labels_path)?;
    let (w, h, imgs, lbls) = select_classes(&images, &labels, &filter)?;
    let names = letters.iter().map(|c| c.to_string()).collect();
    Dataset::new(w, h, imgs, lbls, names, test_fraction, seed)
}
