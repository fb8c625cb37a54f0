//! Grayscale image grids written as binary PGM (P5).
//!
//! The file is the ASCII header `P5\n<width> <height>\n255\n` followed by
//! `width × height` raster bytes, top row first. Tiles are separated by one
//! black (0) pixel. A value `v ∈ [0, 1]` becomes the byte `⌊255 v + ½⌋`
//! (round half up).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn pixel_byte(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor() as u8
}

/// Tiles `images` (shape `[rows, cols, side²]`) into one canvas and returns
/// the complete PGM file.
pub fn encode_pgm_grid(images: &Tensor, side: usize) -> Result<Vec<u8>> {
    let (rows, cols, d) = match images.shape() {
        [r, c, d] => (*r, *c, *d),
        s => {
            return Err(Error::dim(format!(
                "image grid must be rows × cols × pixels, got {:?}",
                s
            )))
        }
    };
    if side == 0 || side * side != d {
        return Err(Error::dim(format!(
            "{} pixels do not form a {}×{} image",
            d, side, side
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::dim("empty image grid"));
    }
    if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Data(format!("pixel value {} outside [0, 1]", v)));
    }
    let width = cols * side + (cols - 1);
    let height = rows * side + (rows - 1);
    let mut canvas = vec![0u8; width * height];
    for r in 0..rows {
        for c in 0..cols {
            let img = &images.data()[(r * cols + c) * d..(r * cols + c + 1) * d];
            for y in 0..side {
                let top = (r * (side + 1) + y) * width + c * (side + 1);
                for x in 0..side {
                    canvas[top + x] = pixel_byte(img[y * side + x]);
                }
            }
        }
    }
    let mut out = format!("P5\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(&canvas);
    Ok(out)
}

/// Writes [`encode_pgm_grid`] output to `path`.
pub fn image_grid_pgm(images: &Tensor, side: usize, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pgm_grid(images, side)?;
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_tile() {
        let img = Tensor::new(vec![1, 1, 4], vec![1.0; 4]).unwrap();
        let bytes = encode_pgm_grid(&img, 2).unwrap();
        let mut want = b"P5\n2 2\n255\n".to_vec();
        want.extend_from_slice(&[255; 4]);
        assert_eq!(bytes, want);
    }

    #[test]
    fn quantization() {
        assert_eq!(pixel_byte(0.5), 128);
        assert_eq!(pixel_byte(0.0), 0);
        assert_eq!(pixel_byte(1.0), 255);
        assert_eq!(pixel_byte(1.0 / 255.0), 1);
    }

    #[test]
    fn tiling_geometry() {
        let img = Tensor::full(&[10, 20, 784], 0.25);
        let bytes = encode_pgm_grid(&img, 28).unwrap();
        let (w, h) = (20 * 28 + 19, 10 * 28 + 9);
        let header = format!("P5\n{} {}\n255\n", w, h);
        assert!(bytes.starts_with(header.as_bytes()));
        assert_eq!(bytes.len(), header.len() + w * h);
        let raster = &bytes[header.len()..];
        // separator column after the first tile, separator row after the first tile row
        assert_eq!(raster[28], 0);
        assert_eq!(raster[28 * w + 5], 0);
        assert_eq!(raster[0], 64);
    }

    #[test]
    fn layout_of_distinct_tiles() {
        // 1×2 grid of 1×1 images: [0.2] and [0.8] → "a 0 b"
        let img = Tensor::new(vec![1, 2, 1], vec![0.2, 0.8]).unwrap();
        let bytes = encode_pgm_grid(&img, 1).unwrap();
        assert_eq!(&bytes[b"P5\n3 1\n255\n".len()..], &[51, 0, 204]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            encode_pgm_grid(&Tensor::zeros(&[1, 1, 5]), 2),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            encode_pgm_grid(&Tensor::full(&[1, 1, 4], 2.0), 2),
            Err(Error::Data(_))
        ));
        let r = image_grid_pgm(&Tensor::zeros(&[1, 1, 4]), 2, "/nonexistent-dir/x.pgm");
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
