use std::path::Path;

use crate::error::{Error, Result};
use crate::evalharness::{BoundingBox, Dataset};
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    match std::fs::read(path) {
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        r => Ok(r?),
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated before {what}"),
        })
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < start + len {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("{what} truncated: expected {len} bytes from offset {start}"),
        });
    }
    if bytes.len() > start + len {
        return Err(Error::Format {
            offset: (start + len) as u64,
            message: format!("trailing bytes after {what}"),
        });
    }
    Ok(&bytes[start..start + len])
}

/// Parses an unsigned-byte image file (rank 3) and its label file (rank 1).
/// Pixels are scaled to [0, 1] and images flattened row-major; the dataset's
/// box is the unit cube.
pub fn parse_idx<T: Scalar>(images: &[u8], labels: &[u8]) -> Result<Dataset<T>> {
    let magic = be_u32(images, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("image magic is {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "row count")? as usize;
    let cols = be_u32(images, 12, "column count")? as usize;
    let magic = be_u32(labels, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("label magic is {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = be_u32(labels, 4, "label count")? as usize;
    if n_labels != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("label file holds {n_labels} labels but image file holds {n} images"),
        });
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format {
            offset: 4,
            message: "empty image set".into(),
        });
    }
    let d = rows * cols;
    let pixels = payload(images, 16, n * d, "image data")?;
    let ys = payload(labels, 8, n, "label data")?;
    let points: Vec<Vec<T>> = pixels
        .chunks(d)
        .map(|img| img.iter().map(|&p| T::of(f64::from(p) / 255.0)).collect())
        .collect();
    let mut ds = Dataset::new(points, ys.iter().map(|&y| y as usize).collect())?;
    ds.bounds = BoundingBox::new(vec![T::zero(); d], vec![T::one(); d])?;
    Ok(ds)
}

pub fn load_idx<T: Scalar>(images_path: &Path, labels_path: &Path) -> Result<Dataset<T>> {
    parse_idx(&read(images_path)?, &read(labels_path)?)
}
