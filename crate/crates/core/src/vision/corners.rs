use crate::error::{Error, Result};
use crate::types::GrayImage;
use crate::vision::filters::{box_sum, sobel};

/// Half-width of the structure-tensor accumulation window (7x7).
pub const SCORE_WINDOW_RADIUS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: f64,
    pub y: f64,
    /// Minimum eigenvalue of the windowed structure tensor.
    pub score: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerParams {
    pub max_corners: usize,
    /// Fraction of the strongest response a corner must reach.
    pub quality: f32,
    pub min_distance: f64,
}

impl Default for CornerParams {
    fn default() -> Self {
        Self {
            max_corners: 200,
            quality: 0.01,
            min_distance: 10.0,
        }
    }
}

/// Per-pixel minimum eigenvalue of the 7x7 structure tensor built from
/// Sobel gradients.
pub fn min_eigen_map(img: &GrayImage) -> Vec<f32> {
    let w = img.width();
    let h = img.height();
    let (gx, gy) = sobel(img);
    let xx: Vec<f32> = gx.iter().map(|g| g * g).collect();
    let xy: Vec<f32> = gx.iter().zip(&gy).map(|(a, b)| a * b).collect();
    let yy: Vec<f32> = gy.iter().map(|g| g * g).collect();
    let a = box_sum(&xx, w, h, SCORE_WINDOW_RADIUS);
    let b = box_sum(&xy, w, h, SCORE_WINDOW_RADIUS);
    let c = box_sum(&yy, w, h, SCORE_WINDOW_RADIUS);
    a.iter()
        .zip(&b)
        .zip(&c)
        .map(|((&a, &b), &c)| {
            let (a, b, c) = (a as f64, b as f64, c as f64);
            let v = 0.5 * (a + c - ((a - c).powi(2) + 4.0 * b * b).sqrt());
            v.max(0.0) as f32
        })
        .collect()
}

/// Shi-Tomasi "good features to track".
///
/// Returns corners sorted by descending score, at most `max_corners`, with
/// no two closer than `min_distance`.
pub fn shi_tomasi(img: &GrayImage, params: &CornerParams) -> Result<Vec<Corner>> {
    let w = img.width();
    let h = img.height();
    if w < 8 || h < 8 {
        return Err(Error::validation(format!(
            "corner detection needs at least 8x8 pixels, got {w}x{h}"
        )));
    }
    if !(params.quality > 0.0 && params.quality <= 1.0) {
        return Err(Error::validation(format!(
            "quality must be in (0, 1], got {}",
            params.quality
        )));
    }
    let score = min_eigen_map(img);
    let max = score.iter().copied().fold(0.0f32, f32::max);
    // Responses this small are rounding noise on a flat image.
    if max <= 1e-9 {
        return Ok(Vec::new());
    }
    let threshold = params.quality * max;

    // 3x3 non-maximum suppression; ties go to the first pixel in raster order.
    let mut cands: Vec<(usize, usize, f32)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let s = score[y * w + x];
            if s < threshold || s <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let n = score[ny as usize * w + nx as usize];
                    let earlier = (dy, dx) < (0, 0);
                    if n > s || (n == s && earlier) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                cands.push((x, y, s));
            }
        }
    }
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));

    let min_d2 = params.min_distance * params.min_distance;
    let mut out: Vec<Corner> = Vec::new();
    for (x, y, s) in cands {
        if out.len() >= params.max_corners {
            break;
        }
        let (fx, fy) = (x as f64, y as f64);
        if out
            .iter()
            .any(|c| (c.x - fx).powi(2) + (c.y - fy).powi(2) < min_d2)
        {
            continue;
        }
        let (ox, oy) = subpixel_offset(&score, w, h, x, y);
        out.push(Corner {
            x: fx + ox,
            y: fy + oy,
            score: s,
        });
    }
    Ok(out)
}

fn subpixel_offset(score: &[f32], w: usize, h: usize, x: usize, y: usize) -> (f64, f64) {
    let fit = |l: f32, c: f32, r: f32| -> f64 {
        let denom = (l - 2.0 * c + r) as f64;
        if denom >= 0.0 {
            return 0.0;
        }
        (0.5 * (l - r) as f64 / denom).clamp(-0.5, 0.5)
    };
    let c = score[y * w + x];
    let ox = if x > 0 && x + 1 < w {
        fit(score[y * w + x - 1], c, score[y * w + x + 1])
    } else {
        0.0
    };
    let oy = if y > 0 && y + 1 < h {
        fit(score[(y - 1) * w + x], c, score[(y + 1) * w + x])
    } else {
        0.0
    };
    // Keep the refined point inside the raster.
    let ox = ox.clamp(-(x as f64), (w - 1 - x) as f64);
    let oy = oy.clamp(-(y as f64), (h - 1 - y) as f64);
    (ox, oy)
}
