//! Sample grids as grayscale PNGs.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixels between neighbouring cells.
pub const SEPARATOR: u32 = 2;
/// Gray level of separators, so that dark digits stay distinguishable.
pub const SEPARATOR_LEVEL: u8 = 128;

/// `[0, 1] -> {0..255}`, rounding to nearest.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Near-square layout with enough cells for `n` images.
pub fn layout(n: usize) -> (usize, usize) {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    (n.div_ceil(cols).max(1), cols)
}

/// Tiles `N x 1 x H x W` images row-major into a `rows x cols` grid. Unused
/// cells stay black.
pub fn render_grid(images: &Tensor<f32>, rows: usize, cols: usize) -> Result<GrayImage> {
    let shape = images.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::Shape(format!("grid expects N x 1 x H x W images, got {shape:?}")));
    }
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    if rows == 0 || cols == 0 || rows * cols < n {
        return Err(Error::Input(format!("a {rows}x{cols} grid cannot hold {n} images")));
    }
    let (hu, wu) = (h as u32, w as u32);
    let width = cols as u32 * wu + (cols as u32 - 1) * SEPARATOR;
    let height = rows as u32 * hu + (rows as u32 - 1) * SEPARATOR;
    let mut img = GrayImage::from_pixel(width, height, Luma([SEPARATOR_LEVEL]));
    for r in 0..rows {
        for c in 0..cols {
            let (x0, y0) = (c as u32 * (wu + SEPARATOR), r as u32 * (hu + SEPARATOR));
            let k = r * cols + c;
            for y in 0..h {
                for x in 0..w {
                    let v = if k < n { quantize(images.sample(k)[y * w + x]) } else { 0 };
                    img.put_pixel(x0 + x as u32, y0 + y as u32, Luma([v]));
                }
            }
        }
    }
    Ok(img)
}

pub fn export_grid(images: &Tensor<f32>, rows: usize, cols: usize, path: &Path) -> Result<()> {
    let img = render_grid(images, rows, cols)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
