//! CIFAR-10 binary format: each record is one label byte followed by
//! 3072 pixel bytes (1024 R, 1024 G, 1024 B, each plane row-major 32×32).

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 1 + PIXELS;
pub const PIXELS: usize = 3 * 32 * 32;
pub const CLASSES: usize = 10;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Parses one binary batch file, appending to `features` and `labels`.
pub fn read_batch_file(
    path: &Path,
    features: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    let bytes = fs::read(path).map_err(|source| Error::Ingestion {
        path: path.to_path_buf(),
        source,
    })?;
    let whole = bytes.len() / RECORD_BYTES * RECORD_BYTES;
    if whole != bytes.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: whole as u64,
            detail: format!(
                "truncated record ({} of {RECORD_BYTES} bytes)",
                bytes.len() - whole
            ),
        });
    }
    for (r, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = usize::from(record[0]);
        if label >= CLASSES {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: (r * RECORD_BYTES) as u64,
                detail: format!("label byte {label} is not a CIFAR-10 class"),
            });
        }
        labels.push(label);
        features.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    Ok(())
}

fn read_files(dir: &Path, names: &[&str]) -> Result<Dataset> {
    let (mut features, mut labels) = (Vec::new(), Vec::new());
    for name in names {
        read_batch_file(&dir.join(name), &mut features, &mut labels)?;
    }
    if labels.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            offset: 0,
            detail: "no records".into(),
        });
    }
    Dataset::new(features, labels, PIXELS, CLASSES)
}

/// Loads `(train, test)` from a directory holding the standard batch files.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = read_files(dir, &TRAIN_FILES)?;
    let test = read_files(dir, &[TEST_FILE])?;
    Ok((train, test))
}
