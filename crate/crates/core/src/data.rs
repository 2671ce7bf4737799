//! Dataset ingestion.
//!
//! MNIST ships as IDX files: a big-endian `u32` magic (`0x00000803` for
//! images, `0x00000801` for labels), one big-endian `u32` per dimension, then
//! raw `u8` data. CIFAR-10 binary batches are runs of 3073-byte records: one
//! label byte followed by 3072 pixel bytes. Pixels are scaled by `1/255`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 3073;
pub const CIFAR_FEATURES: usize = 3072;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `count x features`, every value in `[0, 1]`.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, class_count: usize, name: impl Into<String>) -> Result<Self> {
        let (count, _) = inputs.dims2()?;
        if count != labels.len() {
            return Err(Error::Input(format!(
                "{count} inputs but {} labels",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Input(format!("label {l} >= class count {class_count}")));
        }
        if inputs.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("input values must lie in [0, 1]".into()));
        }
        Ok(Self {
            inputs,
            labels,
            class_count,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.shape()[1]
    }

    /// The first `n` examples (or all of them, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let f = self.features();
        Dataset {
            inputs: Tensor::from_parts_unchecked(vec![n, f], self.inputs.data()[..n * f].to_vec()),
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
            name: self.name.clone(),
        }
    }

    /// Inputs and labels of the listed examples.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let inputs = self.inputs.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((inputs, labels))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingData(path.to_path_buf()))
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

struct IdxHeader {
    dims: Vec<usize>,
    data_offset: usize,
}

fn format_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len(), "truncated header"))
}

fn parse_idx_header(bytes: &[u8], path: &Path, magic: u32, rank: usize) -> Result<IdxHeader> {
    let found = read_be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(format_err(
            path,
            0,
            format!("expected magic {magic:#010x}, found {found:#010x}"),
        ));
    }
    let dims = (0..rank)
        .map(|i| read_be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let data_offset = 4 + 4 * rank;
    let needed = dims.iter().product::<usize>();
    let available = bytes.len() - data_offset;
    if available < needed {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated: header declares {needed} data bytes, {available} present"),
        ));
    }
    Ok(IdxHeader { dims, data_offset })
}

/// Loads an MNIST image/label pair, flattening each image to `rows * cols`.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;

    let img = parse_idx_header(&image_bytes, images_path, IDX_IMAGES_MAGIC, 3)?;
    let lab = parse_idx_header(&label_bytes, labels_path, IDX_LABELS_MAGIC, 1)?;
    let (count, rows, cols) = (img.dims[0], img.dims[1], img.dims[2]);
    if lab.dims[0] != count {
        return Err(format_err(
            labels_path,
            4,
            format!("{} labels for {count} images", lab.dims[0]),
        ));
    }

    let features = rows * cols;
    let pixels = &image_bytes[img.data_offset..img.data_offset + count * features];
    let inputs = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let raw_labels = &label_bytes[lab.data_offset..lab.data_offset + count];
    if let Some(pos) = raw_labels.iter().position(|&l| l > 9) {
        return Err(format_err(
            labels_path,
            lab.data_offset + pos,
            format!("label {} outside 0..=9", raw_labels[pos]),
        ));
    }
    let labels = raw_labels.iter().map(|&l| l as usize).collect();
    Dataset::new(
        Tensor::from_parts_unchecked(vec![count, features], inputs),
        labels,
        10,
        "mnist",
    )
}

/// Writes `dataset` as an IDX image/label pair with `rows x cols` images.
/// Values are stored as `round(255 * x)`.
pub fn write_mnist_idx(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != dataset.features() {
        return Err(Error::dim(
            None,
            format!("{rows}x{cols} images for {} features", dataset.features()),
        ));
    }
    if dataset.labels.iter().any(|&l| l > u8::MAX as usize) {
        return Err(Error::Input("labels must fit in a byte".into()));
    }
    let count = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.inputs.len());
    for v in [IDX_IMAGES_MAGIC, count, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(dataset.inputs.data().iter().map(|&x| (x * 255.0).round() as u8));

    let mut labels = Vec::with_capacity(8 + dataset.len());
    for v in [IDX_LABELS_MAGIC, count] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend(dataset.labels.iter().map(|&l| l as u8));

    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, images).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, labels).map_err(|e| Error::io(lp, e))?;
    Ok(())
}

/// Concatenates the records of one or more CIFAR-10 binary batch files.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        if bytes.is_empty() {
            log::warn!("{}: empty CIFAR-10 batch file", path.display());
        }
        if bytes.len() % CIFAR_RECORD_LEN != 0 {
            let whole = bytes.len() / CIFAR_RECORD_LEN * CIFAR_RECORD_LEN;
            return Err(format_err(
                path,
                whole,
                format!(
                    "size {} is not a multiple of the {CIFAR_RECORD_LEN}-byte record",
                    bytes.len()
                ),
            ));
        }
        for (i, record) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
            if record[0] > 9 {
                return Err(format_err(
                    path,
                    i * CIFAR_RECORD_LEN,
                    format!("label {} outside 0..=9", record[0]),
                ));
            }
            labels.push(record[0] as usize);
            inputs.extend(record[1..].iter().map(|&p| p as f64 / 255.0));
        }
    }
    let count = labels.len();
    Dataset::new(
        Tensor::from_parts_unchecked(vec![count, CIFAR_FEATURES], inputs),
        labels,
        10,
        "cifar10",
    )
}

/// Standard MNIST file names inside a directory.
pub fn mnist_paths(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Standard CIFAR-10 batch file names inside a directory.
pub fn cifar10_paths(dir: &Path, train: bool) -> Vec<PathBuf> {
    if train {
        (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
    } else {
        vec![dir.join("test_batch.bin")]
    }
}

/// Spherical unit-variance Gaussian blobs, one per class.
///
/// Class `i` is centred at `separation * s * e_(i mod features)` with
/// `s = -1` on every other wrap around the feature axes, so two classes fit in
/// one feature. Labels cycle `0, 1, .., class_count - 1`. All values are then
/// rescaled affinely into `[0, 1]` using the global min and max.
pub fn synth_gaussians(
    count: usize,
    features: usize,
    class_count: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if class_count == 0 || features == 0 {
        return Err(Error::Input("need at least one class and one feature".into()));
    }
    if count < class_count {
        return Err(Error::Input(format!(
            "{count} examples cannot cover {class_count} classes"
        )));
    }
    let mut rng = substream(seed, Stream::Data);
    let mut values = Vec::with_capacity(count * features);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % class_count;
        let axis = class % features;
        let sign = if (class / features).is_multiple_of(2) { 1.0 } else { -1.0 };
        for f in 0..features {
            let noise: f64 = rng.sample(StandardNormal);
            let mean = if f == axis { sign * separation } else { 0.0 };
            values.push(mean + noise);
        }
        labels.push(class);
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in &mut values {
        *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.5 };
    }
    Dataset::new(
        Tensor::from_parts_unchecked(vec![count, features], values),
        labels,
        class_count,
        "synth",
    )
}
