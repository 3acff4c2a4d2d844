//! IDX image/label files (big-endian headers, unsigned bytes), optionally
//! gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{io_err, write_atomic, IoError};
use crate::dataset::{Dataset, Example};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: `count` images of `rows × cols` bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Read a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, IoError> {
    let raw = fs::read(path).map_err(io_err(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(path: &Path, bytes: &[u8], words: usize, magic: u32) -> Result<Vec<usize>, IoError> {
    let need = 4 * words;
    if bytes.len() < need {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            what: "header",
            missing: need - bytes.len(),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if word(0) != magic {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found: word(0),
        });
    }
    Ok((1..words).map(|i| word(i) as usize).collect())
}

fn body<'a>(path: &Path, bytes: &'a [u8], offset: usize, len: usize, what: &'static str) -> Result<&'a [u8], IoError> {
    let available = bytes.len() - offset;
    if available < len {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            what,
            missing: len - available,
        });
    }
    if available > len {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            message: format!("{} trailing bytes after {what}", available - len),
        });
    }
    Ok(&bytes[offset..])
}

pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<IdxImages, IoError> {
    let dims = header(path, bytes, 4, IMAGES_MAGIC)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = body(path, bytes, 16, count * rows * cols, "pixel data")?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>, IoError> {
    let dims = header(path, bytes, 2, LABELS_MAGIC)?;
    Ok(body(path, bytes, 8, dims[0], "label data")?.to_vec())
}

/// Load an image/label pair, scaling pixels to `[0, 1]`. The class count is
/// one more than the largest label.
pub fn read_idx(images: &Path, labels: &Path) -> Result<Dataset, IoError> {
    read_idx_classes(images, labels, None)
}

/// [`read_idx`] with an explicit class count (at least `max label + 1`).
pub fn read_idx_classes(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset, IoError> {
    let img = parse_idx_images(images, &read_maybe_gz(images)?)?;
    let lab = parse_idx_labels(labels, &read_maybe_gz(labels)?)?;
    if img.count != lab.len() {
        return Err(IoError::Format {
            path: labels.to_path_buf(),
            message: format!("{} labels for {} images in {}", lab.len(), img.count, images.display()),
        });
    }
    let dim = img.rows * img.cols;
    let classes = classes.unwrap_or_else(|| lab.iter().copied().max().map_or(0, |m| m as usize + 1));
    let examples = img
        .pixels
        .chunks_exact(dim.max(1))
        .zip(&lab)
        .map(|(px, &y)| Example::new(px.iter().map(|&p| f64::from(p) / 255.0).collect(), y as usize))
        .collect();
    Ok(Dataset::new(examples, dim, classes)?)
}

/// Write an uncompressed IDX image file.
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<(), IoError> {
    let per = rows * cols;
    if per == 0 || pixels.len() % per != 0 {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            message: format!("{} pixels do not form whole {rows}×{cols} images", pixels.len()),
        });
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGES_MAGIC, (pixels.len() / per) as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    write_atomic(path, &out)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_atomic(path, &out)
}
