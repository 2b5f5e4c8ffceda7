//! Renders frames at global coordinates into one stitched raster.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_png_gray;
use crate::types::{CoordinateSet, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Blend {
    /// Later frames replace earlier ones.
    #[default]
    Overwrite,
    /// Per-pixel mean of every frame covering the pixel.
    Average,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    pub image: GrayImage,
    /// Global position of canvas pixel (0, 0).
    pub origin_offset: (i64, i64),
    /// Number of frames covering each pixel.
    pub coverage: Vec<u32>,
}

impl Canvas {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn covered(&self, x: usize, y: usize) -> bool {
        self.coverage[y * self.width() + x] > 0
    }
}

/// Placement of a float coordinate: nearest pixel, halves away from zero.
pub fn place(v: f64) -> i64 {
    v.round() as i64
}

/// Composites `frames` at `coords`. The canvas is the tight bounding box of
/// all placed frames grown by `margin` pixels on every side; uncovered
/// pixels are 0.
pub fn composite(frames: &[GrayImage], coords: &CoordinateSet, blend: Blend, margin: usize) -> Result<Canvas> {
    if frames.is_empty() {
        return Err(Error::validation("nothing to composite"));
    }
    if frames.len() != coords.len() {
        return Err(Error::LengthMismatch {
            what: "frame coordinates",
            expected: frames.len(),
            found: coords.len(),
        });
    }
    let placed: Vec<(i64, i64)> = coords.coords.iter().map(|p| (place(p.x), place(p.y))).collect();
    let m = margin as i64;
    let x0 = placed.iter().map(|p| p.0).min().unwrap() - m;
    let y0 = placed.iter().map(|p| p.1).min().unwrap() - m;
    let x1 = placed
        .iter()
        .zip(frames)
        .map(|(p, f)| p.0 + f.width() as i64)
        .max()
        .unwrap()
        + m;
    let y1 = placed
        .iter()
        .zip(frames)
        .map(|(p, f)| p.1 + f.height() as i64)
        .max()
        .unwrap()
        + m;
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let area = w
        .checked_mul(h)
        .filter(|&a| a <= 1 << 31)
        .ok_or_else(|| Error::validation(format!("canvas {w}x{h} is too large")))?;

    let mut acc = vec![0.0f32; area];
    let mut coverage = vec![0u32; area];
    for (f, &(px, py)) in frames.iter().zip(&placed) {
        let (ox, oy) = ((px - x0) as usize, (py - y0) as usize);
        for r in 0..f.height() {
            let base = (oy + r) * w + ox;
            let dst = &mut acc[base..base + f.width()];
            let cov = &mut coverage[base..base + f.width()];
            for ((d, c), &s) in dst.iter_mut().zip(cov.iter_mut()).zip(f.row(r)) {
                match blend {
                    Blend::Overwrite => *d = s,
                    Blend::Average => *d += s,
                }
                *c += 1;
            }
        }
    }
    if blend == Blend::Average {
        for (d, &c) in acc.iter_mut().zip(&coverage) {
            if c > 0 {
                *d /= c as f32;
            }
        }
    }
    Ok(Canvas {
        image: GrayImage::from_raw(w, h, acc),
        origin_offset: (x0, y0),
        coverage,
    })
}

pub fn write_canvas(canvas: &Canvas, path: impl AsRef<Path>) -> Result<()> {
    write_png_gray(path, &canvas.image)
}
