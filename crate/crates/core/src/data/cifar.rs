//! CIFAR-10 binary batches: each record is one label byte followed by the
//! red, green and blue planes of a square image, one byte per pixel.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{DataError, Dataset};
use crate::imaging::Image;

pub const CIFAR_SIDE: usize = 32;
const CIFAR_CLASSES: usize = 10;
const TRAIN_BATCHES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];

/// Loads the five training batches (50,000 records) from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<Dataset, DataError> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in TRAIN_BATCHES {
        let d = load_record_file(&dir.join(name), CIFAR_SIDE, CIFAR_CLASSES)?;
        images.extend_from_slice(d.images());
        labels.extend_from_slice(d.labels());
    }
    Dataset::new(images, labels, CIFAR_CLASSES)
}

/// Loads `test_batch.bin` (10,000 records) from `dir`.
pub fn load_cifar10_test(dir: &Path) -> Result<Dataset, DataError> {
    load_record_file(&dir.join("test_batch.bin"), CIFAR_SIDE, CIFAR_CLASSES)
}

/// Reads a file of CIFAR-layout records with `side × side` RGB images.
pub fn load_record_file(path: &Path, side: usize, classes: usize) -> Result<Dataset, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_records(&bytes, path.to_path_buf(), side, classes)
}

fn decode_records(
    bytes: &[u8],
    path: PathBuf,
    side: usize,
    classes: usize,
) -> Result<Dataset, DataError> {
    let plane = side * side;
    let record_len = 1 + 3 * plane;
    let mut images = Vec::with_capacity(bytes.len() / record_len);
    let mut labels = Vec::with_capacity(bytes.len() / record_len);
    for (record, chunk) in bytes.chunks(record_len).enumerate() {
        if chunk.len() != record_len {
            return Err(DataError::TruncatedRecord {
                path,
                record,
                got: chunk.len(),
                expected: record_len,
            });
        }
        let label = chunk[0];
        if label as usize >= classes {
            return Err(DataError::BadLabel {
                path,
                record,
                label,
                classes,
            });
        }
        let planes = &chunk[1..];
        let mut px = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                px.push(planes[c * plane + i] as f64 / 255.0);
            }
        }
        images.push(Image::new(side, side, 3, px)?);
        labels.push(label as usize);
    }
    Dataset::new(images, labels, classes)
}

/// Writes `d` in the record layout read by [`load_record_file`]. Pixels are
/// quantized to bytes.
pub fn write_record_file(d: &Dataset, path: &Path) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for (img, &label) in d.images().iter().zip(d.labels()) {
        if img.channels() != 3 || img.width() != img.height() || label > u8::MAX as usize {
            return Err(DataError::Synthetic(
                "record files hold square RGB images with byte labels".into(),
            ));
        }
        out.push(label as u8);
        for c in 0..3 {
            out.extend(
                img.pixels()
                    .iter()
                    .skip(c)
                    .step_by(3)
                    .map(|p| (p * 255.0).round() as u8),
            );
        }
    }
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&out).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, first: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(0u8, 3 * CIFAR_SIDE * CIFAR_SIDE));
        r[1] = first;
        r
    }

    #[test]
    fn decodes_label_and_scaling() {
        let mut bytes = record(7, 255);
        bytes.extend(record(0, 0));
        let d = decode_records(&bytes, "x".into(), CIFAR_SIDE, 10).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), &[7, 0]);
        assert_eq!(d.images()[0].get(0, 0, 0), 1.0);
        assert_eq!(d.images()[0].get(0, 0, 1), 0.0);
    }

    #[test]
    fn planes_map_to_channels() {
        let side = 2;
        // label, R plane, G plane, B plane
        let bytes = [1u8, 0, 51, 102, 153, 255, 255, 255, 255, 0, 0, 0, 0];
        let d = decode_records(&bytes, "x".into(), side, 2).unwrap();
        let img = &d.images()[0];
        assert_eq!(img.get(1, 0, 0), 0.2);
        assert_eq!(img.get(0, 1, 0), 0.4);
        assert_eq!(img.get(1, 1, 1), 1.0);
        assert_eq!(img.get(1, 1, 2), 0.0);
    }

    #[test]
    fn truncated_record() {
        let mut bytes = record(1, 0);
        bytes.extend(&record(2, 0)[..100]);
        let err = decode_records(&bytes, "x".into(), CIFAR_SIDE, 10).unwrap_err();
        assert!(matches!(
            err,
            DataError::TruncatedRecord {
                record: 1,
                got: 100,
                ..
            }
        ));
    }

    #[test]
    fn bad_label() {
        let err = decode_records(&record(10, 0), "x".into(), CIFAR_SIDE, 10).unwrap_err();
        assert!(matches!(err, DataError::BadLabel { label: 10, .. }));
    }

    #[test]
    fn missing_file() {
        let err = load_cifar10(Path::new("/nonexistent/cifar")).unwrap_err();
        assert!(matches!(err, DataError::MissingFile(_)));
        assert!(err.to_string().contains("data_batch_1.bin"));
    }
}
