//! PNG ingestion and export. IR normalization: 8-bit inputs divide by 255,
//! 16-bit by 65535, float grids are min-max normalized per frame.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, Rgb, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::ir::IrFrame;
use crate::mask::BinaryMask;

fn open(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            source: e,
        })
}

/// Load a grayscale PNG as an IR frame. 8-bit and 16-bit depths map onto
/// [0,1] by their full ranges.
pub fn load_ir_frame(path: &Path, frame_index: usize) -> Result<IrFrame> {
    let img = open(path)?;
    let pixels = match img {
        DynamicImage::ImageLuma16(g) => {
            let (w, h) = g.dimensions();
            Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                g.get_pixel(c as u32, r as u32)[0] as f32 / 65535.0
            })
        }
        other => {
            let g = other.to_luma8();
            let (w, h) = g.dimensions();
            Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                g.get_pixel(c as u32, r as u32)[0] as f32 / 255.0
            })
        }
    };
    IrFrame::new(pixels, frame_index)
}

/// Min-max normalize an arbitrary float grid into an IR frame. A constant
/// grid maps to all zeros.
pub fn normalize_float_frame(pixels: Array2<f32>, frame_index: usize) -> Result<IrFrame> {
    let min = pixels.iter().copied().fold(f32::INFINITY, f32::min);
    let max = pixels.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !min.is_finite() || !max.is_finite() {
        return Err(Error::input(format!(
            "non-finite intensity in float frame {frame_index}"
        )));
    }
    let range = max - min;
    let normalized = if range == 0.0 {
        pixels.mapv(|_| 0.0)
    } else {
        pixels.mapv(|v| (v - min) / range)
    };
    IrFrame::new(normalized, frame_index)
}

/// Load an RGB PNG as an (H, W, 3) array in [0,1].
pub fn load_rgb_frame(path: &Path) -> Result<Array3<f32>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn(
        (h as usize, w as usize, 3),
        |(r, c, ch)| img.get_pixel(c as u32, r as u32)[ch] as f32 / 255.0,
    ))
}

pub fn save_rgb_frame(frame: &Array3<f32>, path: &Path) -> Result<()> {
    let (h, w, _) = frame.dim();
    let img = RgbImage::from_fn(w as u32, h as u32, |c, r| {
        let px =
            |ch: usize| (frame[[r as usize, c as usize, ch]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.display().to_string(),
        source: e,
    })
}

/// Write a mask as an 8-bit PNG with values 0 and 255.
pub fn save_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    let (h, w) = mask.dims();
    let img = GrayImage::from_fn(w as u32, h as u32, |c, r| {
        image::Luma([if mask.get(r as usize, c as usize) {
            255
        } else {
            0
        }])
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.display().to_string(),
        source: e,
    })
}

/// Read a {0,255} PNG back into a mask; any nonzero pixel counts as fire.
pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    let g = open(path)?.to_luma8();
    let (w, h) = g.dimensions();
    Ok(BinaryMask::from_fn(h as usize, w as usize, |r, c| {
        g.get_pixel(c as u32, r as u32)[0] > 0
    }))
}

/// Write a probability map as an 8-bit PNG with value round(255 * p).
pub fn save_prob_png(probs: &Array2<f32>, path: &Path) -> Result<()> {
    let (h, w) = probs.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |c, r| {
        image::Luma([(probs[[r as usize, c as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.display().to_string(),
        source: e,
    })
}

fn contour(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = mask.dims();
    let mut edges = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let boundary = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|&(dr, dc)| {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    nr < 0
                        || nr >= h as i64
                        || nc < 0
                        || nc >= w as i64
                        || !mask.get(nr as usize, nc as usize)
                });
            if boundary {
                edges.push((r, c));
            }
        }
    }
    edges
}

/// Overlay prediction (red contour) and optional ground truth (green
/// contour) on an RGB frame and save it.
pub fn save_overlay_png(
    rgb: &Array3<f32>,
    pred: &BinaryMask,
    gt: Option<&BinaryMask>,
    path: &Path,
) -> Result<()> {
    let mut frame = rgb.clone();
    if let Some(gt) = gt {
        for (r, c) in contour(gt) {
            frame[[r, c, 0]] = 0.0;
            frame[[r, c, 1]] = 1.0;
            frame[[r, c, 2]] = 0.0;
        }
    }
    for (r, c) in contour(pred) {
        frame[[r, c, 0]] = 1.0;
        frame[[r, c, 1]] = 0.0;
        frame[[r, c, 2]] = 0.0;
    }
    save_rgb_frame(&frame, path)
}
