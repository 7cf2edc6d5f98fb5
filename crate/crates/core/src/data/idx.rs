use alloc::format;
use alloc::vec::Vec;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn parse_err(offset: usize, message: impl Into<alloc::string::String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(bytes.len(), format!("truncated header, need bytes {offset}..{}", offset + 4)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, row-major per image.
    pub pixels: Vec<u8>,
}

/// Parses a big-endian IDX3 unsigned-byte image file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(parse_err(0, format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| parse_err(4, "image dimensions overflow"))?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(parse_err(bytes.len(), format!("truncated payload: {} of {need} pixel bytes", payload.len())));
    }
    if payload.len() > need {
        return Err(parse_err(16 + need, "trailing bytes after image payload"));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload.to_vec(),
    })
}

/// Parses a big-endian IDX1 unsigned-byte label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(parse_err(0, format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(parse_err(bytes.len(), format!("truncated payload: {} of {count} labels", payload.len())));
    }
    if payload.len() > count {
        return Err(parse_err(8 + count, "trailing bytes after label payload"));
    }
    Ok(payload.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a dataset with pixels mapped to `[0, 1]` and then multiplied by
/// `lambda`, keeping at most `limit` examples.
pub fn dataset_from_idx(images: &[u8], labels: Option<&[u8]>, limit: Option<usize>, lambda: f64) -> Result<Dataset> {
    let img = parse_idx_images(images)?;
    let labels = match labels {
        Some(bytes) => {
            let l = parse_idx_labels(bytes)?;
            if l.len() != img.count {
                return Err(parse_err(4, format!("label count {} differs from image count {}", l.len(), img.count)));
            }
            Some(l)
        }
        None => None,
    };
    let count = limit.map_or(img.count, |l| l.min(img.count));
    let dim = img.rows * img.cols;
    let scale = lambda / 255.0;
    let data = img.pixels[..count * dim].iter().map(|&p| p as f64 * scale).collect();
    let xs = Tensor::new(&[count, dim], data)?;
    let labels = labels.map(|l| l[..count].iter().map(|&v| v as u32).collect());
    Dataset::new(xs, labels, lambda, format!("idx {count}x{}x{}", img.rows, img.cols))
}
