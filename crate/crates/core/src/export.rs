//! Lossless raster output for image grids, heatmaps and masks.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tile `[N, 3, R, R]` images in `[-1, 1]` into a grid with `cols` columns
/// and a 1-pixel gap.
pub fn image_grid(images: &Tensor, cols: usize) -> Result<RgbImage> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 3 || s[2] != s[3] || s[0] == 0 {
        return Err(Error::Shape(format!("image grid needs [N, 3, R, R], got {s:?}")));
    }
    let (n, r) = (s[0], s[2]);
    let cols = cols.clamp(1, n);
    let rows = n.div_ceil(cols);
    let step = r + 1;
    let mut out = RgbImage::from_pixel((cols * step - 1) as u32, (rows * step - 1) as u32, Rgb([255, 255, 255]));
    let plane = r * r;
    for (i, img) in images.data().chunks(3 * plane).enumerate() {
        let (ox, oy) = ((i % cols) * step, (i / cols) * step);
        for p in 0..plane {
            let px = |c: usize| ((img[c * plane + p].clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
            out.put_pixel((ox + p % r) as u32, (oy + p / r) as u32, Rgb([px(0), px(1), px(2)]));
        }
    }
    Ok(out)
}

pub fn save_image_grid(images: &Tensor, cols: usize, path: &Path) -> Result<()> {
    image_grid(images, cols)?.save(path)?;
    Ok(())
}

/// Grayscale image of `values` (row-major, `width` wide) scaled so that
/// `max` maps to white. A zero `max` gives a black image.
pub fn gray_image(values: &[f64], width: usize, max: f64) -> GrayImage {
    let height = values.len() / width.max(1);
    GrayImage::from_fn(width as u32, height as u32, |x, y| {
        let v = values[y as usize * width + x as usize];
        let g = if max > 0.0 {
            (v / max).clamp(0.0, 1.0) * 255.0
        } else {
            0.0
        };
        Luma([g.round() as u8])
    })
}

pub fn save_gray(values: &[f64], width: usize, max: f64, path: &Path) -> Result<()> {
    gray_image(values, width, max).save(path)?;
    Ok(())
}

pub fn save_mask(mask: &[bool], width: usize, path: &Path) -> Result<()> {
    let v: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    save_gray(&v, width, 1.0, path)
}

/// Nearest-neighbour enlargement so small maps stay legible.
pub fn upscale_gray(img: &GrayImage, factor: u32) -> GrayImage {
    image::imageops::resize(
        img,
        img.width() * factor,
        img.height() * factor,
        image::imageops::FilterType::Nearest,
    )
}
