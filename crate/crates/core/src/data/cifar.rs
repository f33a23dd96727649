//! CIFAR-10 binary batch files: per record one label byte followed by
//! 3072 pixel bytes (row-major R, G, B planes).

use super::{byte_to_unit, DataError, Dataset, Result, Split};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

const RECORD: usize = 3073;
#[cfg(test)]
const PLANE: usize = 1024;

pub fn load_cifar10(batch_files: &[&Path], split: Split) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for path in batch_files {
        let display = path.to_string_lossy().into_owned();
        let bytes = fs::read(path).map_err(|source| DataError::Io {
            path: display.clone(),
            source,
        })?;
        if bytes.len() % RECORD != 0 {
            return Err(DataError::BadRecordSize {
                path: display,
                len: bytes.len(),
                record: RECORD,
            });
        }
        for (record, chunk) in bytes.chunks(RECORD).enumerate() {
            let label = chunk[0];
            if label >= 10 {
                return Err(DataError::LabelOutOfRange {
                    path: display.clone(),
                    label,
                    record,
                });
            }
            labels.push(label as usize);
            // Planes are already channel-major (R, G, B), matching (C, H, W).
            data.extend(chunk[1..].iter().map(|&b| byte_to_unit(b)));
        }
    }
    let n = labels.len();
    let images = Tensor::new(&[n, 3, 32, 32], data).expect("cifar shape");
    Dataset {
        name: "cifar10".to_string(),
        images,
        labels,
        split,
    }
    .validate()
}

/// Writes records in the batch-file layout (fixture/builder helper).
pub fn write_cifar_batch(path: &Path, records: &[(u8, [u8; 3072])]) -> Result<()> {
    let mut bytes = Vec::with_capacity(records.len() * RECORD);
    for (label, pixels) in records {
        bytes.push(*label);
        bytes.extend_from_slice(pixels);
    }
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_string_lossy().into_owned(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("cre-cifar-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(format!("{tag}.bin"))
    }

    #[test]
    fn single_record_round_trips_exactly() {
        let path = fixture("single");
        let mut pixels = [0u8; 3072];
        for (i, p) in pixels.iter_mut().enumerate() {
            *p = (i % 251) as u8;
        }
        write_cifar_batch(&path, &[(7, pixels)]).unwrap();
        let ds = load_cifar10(&[&path], Split::Test).unwrap();
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(ds.images.shape(), &[1, 3, 32, 32]);
        for (i, v) in ds.images.data().iter().enumerate() {
            assert_eq!(*v, byte_to_unit(pixels[i]));
        }
        // Plane layout: pixel (c, h, w) comes from byte c*1024 + h*32 + w.
        assert_eq!(ds.images.data()[2 * PLANE + 5], byte_to_unit(pixels[2 * PLANE + 5]));
    }

    #[test]
    fn all_zero_record_is_black_image_label_zero() {
        let path = fixture("zero");
        write_cifar_batch(&path, &[(0, [0u8; 3072])]).unwrap();
        let ds = load_cifar10(&[&path], Split::Train).unwrap();
        assert_eq!(ds.labels, vec![0]);
        assert!(ds.images.data().iter().all(|v| *v == -1.0));
    }

    #[test]
    fn two_records_frame_as_two_samples() {
        let path = fixture("two");
        write_cifar_batch(&path, &[(1, [10u8; 3072]), (2, [20u8; 3072])]).unwrap();
        let ds = load_cifar10(&[&path], Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![1, 2]);
    }

    #[test]
    fn bad_length_is_rejected() {
        let path = fixture("bad");
        fs::write(&path, vec![0u8; 3072]).unwrap(); // one byte short of a record
        assert!(matches!(
            load_cifar10(&[&path], Split::Train),
            Err(DataError::BadRecordSize { .. })
        ));
    }
}
