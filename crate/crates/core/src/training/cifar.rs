//! CIFAR-10 binary batches: 3073-byte records, one label byte followed by
//! the R, G and B planes of a 32×32 image.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const IMAGE_BYTES: usize = 3 * 32 * 32;
pub const RECORD_BYTES: usize = IMAGE_BYTES + 1;
pub const NUM_CLASSES: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `(N, 3, 32, 32)`
    pub images: Tensor4,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor4, labels: Vec<usize>, split: Split) -> Result<Dataset> {
        if images.batch() != labels.len() {
            return Err(Error::shape(
                &[images.batch()],
                &[labels.len()],
                "images vs labels",
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Label {
                label,
                classes: NUM_CLASSES,
            });
        }
        Ok(Dataset {
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let per = self.images.len() / self.len().max(1);
        &self.images.data()[i * per..(i + 1) * per]
    }

    /// Per-channel `(mean, std)` over all images, population std.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        let [n, c, h, w] = self.images.shape();
        let plane = h * w;
        (0..c)
            .map(|ch| {
                let count = (n * plane) as f64;
                let vals = (0..n).flat_map(|i| {
                    let start = (i * c + ch) * plane;
                    self.images.data()[start..start + plane].iter().copied()
                });
                let mean = vals.clone().sum::<f64>() / count;
                let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
                (mean, var.sqrt())
            })
            .collect()
    }

    /// Subtracts `mean` and divides by `std` per channel.
    pub fn standardize(&mut self, stats: &[(f64, f64)]) -> Result<()> {
        let [n, c, h, w] = self.images.shape();
        if stats.len() != c {
            return Err(Error::shape(&[stats.len()], &[c], "standardization stats"));
        }
        if let Some((ch, _)) = stats.iter().enumerate().find(|(_, s)| !(s.1 > 0.0)) {
            return Err(Error::Statistics(format!("channel {ch} has zero variance")));
        }
        let plane = h * w;
        let data = self.images.data_mut();
        for i in 0..n {
            for (ch, &(mean, std)) in stats.iter().enumerate() {
                let start = (i * c + ch) * plane;
                for v in &mut data[start..start + plane] {
                    *v = (*v - mean) / std;
                }
            }
        }
        Ok(())
    }
}

fn ingestion(file: &Path, offset: u64, detail: impl Into<String>) -> Error {
    Error::Ingestion {
        file: file.to_path_buf(),
        offset,
        detail: detail.into(),
    }
}

/// Reads up to `limit` records from one batch file, pixels scaled to `[0, 1]`.
pub fn read_batch_file(
    path: &Path,
    limit: Option<usize>,
    pixels: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) -> Result<usize> {
    let mut file = File::open(path).map_err(|e| ingestion(path, 0, e.to_string()))?;
    let mut bytes = Vec::new();
    match limit {
        Some(n) => Read::by_ref(&mut file)
            .take((n * RECORD_BYTES) as u64)
            .read_to_end(&mut bytes),
        None => file.read_to_end(&mut bytes),
    }
    .map_err(|e| ingestion(path, 0, e.to_string()))?;
    if bytes.is_empty() {
        return Err(ingestion(path, 0, "empty batch file"));
    }
    let whole = bytes.len() / RECORD_BYTES;
    if whole * RECORD_BYTES != bytes.len() && limit.is_none_or(|n| whole < n) {
        return Err(ingestion(
            path,
            (whole * RECORD_BYTES) as u64,
            format!(
                "truncated record: {} of {RECORD_BYTES} bytes",
                bytes.len() - whole * RECORD_BYTES
            ),
        ));
    }
    for (r, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= NUM_CLASSES {
            return Err(ingestion(
                path,
                (r * RECORD_BYTES) as u64,
                Error::Label {
                    label,
                    classes: NUM_CLASSES,
                }
                .to_string(),
            ));
        }
        labels.push(label);
        pixels.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok(whole)
}

fn read_split(files: &[PathBuf], limit: Option<usize>, split: Split) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        let remaining = limit.map(|n| n - labels.len());
        if remaining == Some(0) {
            break;
        }
        read_batch_file(path, remaining, &mut pixels, &mut labels)?;
    }
    if let Some(n) = limit {
        if labels.len() < n {
            return Err(Error::Config(format!(
                "requested {n} {split:?} images but only {} are available",
                labels.len()
            )));
        }
    }
    let images = Tensor4::from_vec([labels.len(), 3, 32, 32], pixels)?;
    Dataset::new(images, labels, split)
}

/// Loads the first `train_limit` training and `test_limit` test records (all
/// when `None`) and standardizes both splits with the training statistics.
pub fn load_cifar10_subset(
    dir: &Path,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
) -> Result<(Dataset, Dataset)> {
    let train_files: Vec<PathBuf> = TRAIN_FILES.iter().map(|f| dir.join(f)).collect();
    let mut train = read_split(&train_files, train_limit, Split::Train)?;
    let mut test = read_split(&[dir.join(TEST_FILE)], test_limit, Split::Test)?;
    let stats = train.channel_stats();
    train.standardize(&stats)?;
    test.standardize(&stats)?;
    Ok((train, test))
}

pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    load_cifar10_subset(dir, None, None)
}

/// Writes records in the binary batch format; `pixels` holds `3072` bytes
/// per label.
pub fn write_batch_file(path: &Path, labels: &[u8], pixels: &[u8]) -> Result<()> {
    if pixels.len() != labels.len() * IMAGE_BYTES {
        return Err(Error::shape(
            &[pixels.len()],
            &[labels.len() * IMAGE_BYTES],
            "batch pixels",
        ));
    }
    let mut out = Vec::with_capacity(labels.len() * RECORD_BYTES);
    for (label, img) in labels.iter().zip(pixels.chunks_exact(IMAGE_BYTES)) {
        out.push(*label);
        out.extend_from_slice(img);
    }
    File::create(path)?.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_synthetic(dir: &Path, per_file: usize) {
        for (f, name) in TRAIN_FILES.iter().chain([&TEST_FILE]).enumerate() {
            let labels: Vec<u8> = (0..per_file).map(|i| ((i + f) % 10) as u8).collect();
            let pixels: Vec<u8> = (0..per_file * IMAGE_BYTES)
                .map(|i| ((i * 7 + f * 13) % 256) as u8)
                .collect();
            write_batch_file(&dir.join(name), &labels, &pixels).unwrap();
        }
    }

    #[test]
    fn loads_and_standardizes() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic(dir.path(), 6);
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!(train.len(), 30);
        assert_eq!(test.len(), 6);
        assert_eq!(train.labels[..3], [0, 1, 2]);
        for (mean, std) in train.channel_stats() {
            assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn subset_reads_across_files() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic(dir.path(), 6);
        let (train, test) = load_cifar10_subset(dir.path(), Some(8), Some(2)).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!(train.labels[6], 1);
        assert!(load_cifar10_subset(dir.path(), Some(31), Some(2)).is_err());
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic(dir.path(), 3);
        let path = dir.path().join(TRAIN_FILES[2]);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..2 * RECORD_BYTES + 100]).unwrap();
        match load_cifar10(dir.path()).unwrap_err() {
            Error::Ingestion { file, offset, .. } => {
                assert_eq!(file, path);
                assert_eq!(offset, 2 * RECORD_BYTES as u64);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_label_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic(dir.path(), 3);
        let path = dir.path().join(TEST_FILE);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[RECORD_BYTES] = 255;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_cifar10(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Ingestion { offset, .. } if offset == RECORD_BYTES as u64));
        assert!(err.to_string().contains("label 255"));

        std::fs::remove_file(dir.path().join(TRAIN_FILES[0])).unwrap();
        let err = load_cifar10(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Ingestion { offset: 0, .. }));
    }
}
