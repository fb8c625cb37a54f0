//! IDX container reader (the MNIST distribution format).
//!
//! Layout: a big-endian `u32` magic `0x0000_08NN` where `NN` is the number of
//! dimensions, then one big-endian `u32` per dimension, then the unsigned
//! byte payload in row-major order. Images are magic `0x00000803`
//! (count, rows, cols); labels are `0x00000801` (count).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images parsed from an IDX file, one flattened image per row, pixels in
/// `[0, 1]` (byte / 255).
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub pixels: Tensor,
    pub rows: usize,
    pub cols: usize,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn header(bytes: &[u8], path: &Path, magic: u32) -> Result<(Vec<usize>, usize)> {
    if bytes.len() < 4 {
        return Err(Error::IdxTruncated {
            path: path.into(),
            expected: 4,
            found: bytes.len(),
        });
    }
    let found = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if found != magic {
        return Err(Error::IdxWrongMagic {
            path: path.into(),
            found,
        });
    }
    let ndim = (magic & 0xFF) as usize;
    let head = 4 + 4 * ndim;
    if bytes.len() < head {
        return Err(Error::IdxTruncated {
            path: path.into(),
            expected: head,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_add(head))
        .ok_or_else(|| Error::IdxDimensionOverflow { path: path.into() })?;
    if bytes.len() < payload {
        return Err(Error::IdxTruncated {
            path: path.into(),
            expected: payload,
            found: bytes.len(),
        });
    }
    Ok((dims, head))
}

/// Parses an in-memory image file; `path` only labels errors.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let (dims, head) = header(bytes, path, IMAGES_MAGIC)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let d = rows * cols;
    let data = bytes[head..head + n * d]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok(IdxImages {
        pixels: Tensor::from_parts(vec![n, d], data),
        rows,
        cols,
    })
}

/// Parses an in-memory label file; `path` only labels errors.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let (dims, head) = header(bytes, path, LABELS_MAGIC)?;
    Ok(bytes[head..head + dims[0]].to_vec())
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let path = path.as_ref();
    parse_idx_images(&read_file(path)?, path)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(&read_file(path)?, path)
}
