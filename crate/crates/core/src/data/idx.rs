//! IDX binary format (MNIST / FashionMNIST distribution files).

use super::{byte_to_unit, DataError, Dataset, Result, Split};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

struct Reader {
    path: String,
    bytes: Vec<u8>,
    offset: usize,
}

impl Reader {
    fn open(path: &Path) -> Result<Self> {
        let display = path.to_string_lossy().into_owned();
        let bytes = fs::read(path).map_err(|source| DataError::Io {
            path: display.clone(),
            source,
        })?;
        Ok(Self {
            path: display,
            bytes,
            offset: 0,
        })
    }

    fn u32_be(&mut self) -> Result<u32> {
        if self.offset + 4 > self.bytes.len() {
            return Err(DataError::Truncated {
                path: self.path.clone(),
                offset: self.offset,
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.offset..self.offset + 4].try_into().unwrap());
        self.offset += 4;
        Ok(v)
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(DataError::Truncated {
                path: self.path.clone(),
                offset: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn finish(&self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(DataError::TrailingBytes {
                path: self.path.clone(),
                offset: self.offset,
                trailing: self.bytes.len() - self.offset,
            });
        }
        Ok(())
    }
}

/// Loads an IDX image/label file pair into a normalized dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path, name: &str, split: Split) -> Result<Dataset> {
    let mut ir = Reader::open(images_path)?;
    let magic = ir.u32_be()?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: ir.path.clone(),
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let count = ir.u32_be()? as usize;
    let rows = ir.u32_be()? as usize;
    let cols = ir.u32_be()? as usize;
    let pixels = ir.take(count * rows * cols)?.to_vec();
    ir.finish()?;

    let mut lr = Reader::open(labels_path)?;
    let magic = lr.u32_be()?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: lr.path.clone(),
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let label_count = lr.u32_be()? as usize;
    let label_bytes = lr.take(label_count)?.to_vec();
    lr.finish()?;

    if count != label_count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let mut labels = Vec::with_capacity(label_count);
    for (record, &b) in label_bytes.iter().enumerate() {
        if b >= 10 {
            return Err(DataError::LabelOutOfRange {
                path: lr.path.clone(),
                label: b,
                record,
            });
        }
        labels.push(b as usize);
    }
    let data: Vec<f64> = pixels.iter().map(|&b| byte_to_unit(b)).collect();
    let images = Tensor::new(&[count, 1, rows, cols], data).expect("idx shape");
    Dataset {
        name: name.to_string(),
        images,
        labels,
        split,
    }
    .validate()
}

/// Writes a (N, rows, cols) byte volume as an IDX image file.
pub fn write_idx_images(path: &Path, pixels: &[u8], count: usize, rows: usize, cols: usize) -> Result<()> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(count as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_string_lossy().into_owned(),
        source,
    })
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_string_lossy().into_owned(),
        source,
    })
}
