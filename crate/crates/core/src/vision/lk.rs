//! Sparse pyramidal Lucas-Kanade tracking (iterative, coarse to fine).

use crate::error::{Error, Result};
use crate::types::{GrayImage, Translation2D};
use crate::vision::corners::Corner;
use crate::vision::filters::sobel;
use crate::vision::pyramid::Pyramid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkParams {
    /// Integration window side length; must be odd.
    pub window: usize,
    pub levels: usize,
    pub max_iters: usize,
    /// Update norm below which a level is considered converged.
    pub eps: f64,
    /// Minimum eigenvalue of the per-pixel averaged gradient matrix.
    pub min_eigen: f64,
}

impl Default for LkParams {
    fn default() -> Self {
        Self {
            window: 21,
            levels: 3,
            max_iters: 30,
            eps: 0.01,
            min_eigen: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackResult {
    /// Motion of the image content at the point, `next` position minus `prev` position.
    pub flow: Translation2D,
    pub converged: bool,
}

struct Level<'a> {
    img: &'a GrayImage,
    gx: GrayImage,
    gy: GrayImage,
}

/// Tracks `points` from `prev` into `next`.
///
/// Returns one result per point, in input order. A point is flagged as not
/// converged when the finest level never reached an update below `eps` or
/// when the tracked window left the frame.
pub fn lk_track(
    prev: &Pyramid,
    next: &Pyramid,
    points: &[Corner],
    params: &LkParams,
) -> Result<Vec<TrackResult>> {
    if params.window.is_multiple_of(2) || params.window < 3 {
        return Err(Error::validation(format!(
            "LK window must be odd and at least 3, got {}",
            params.window
        )));
    }
    if prev.len() != next.len() {
        return Err(Error::validation(format!(
            "pyramid depth mismatch: {} vs {}",
            prev.len(),
            next.len()
        )));
    }
    for (a, b) in prev.levels().iter().zip(next.levels()) {
        if a.width() != b.width() || a.height() != b.height() {
            return Err(Error::validation(format!(
                "pyramid level size mismatch: {}x{} vs {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            )));
        }
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let levels: Vec<Level> = prev
        .levels()
        .iter()
        .map(|img| {
            let (gx, gy) = sobel(img);
            Level {
                img,
                gx: GrayImage::from_raw(img.width(), img.height(), gx),
                gy: GrayImage::from_raw(img.width(), img.height(), gy),
            }
        })
        .collect();
    Ok(points
        .iter()
        .map(|p| track_one(&levels, next, p.x, p.y, params))
        .collect())
}

fn track_one(levels: &[Level], next: &Pyramid, x: f64, y: f64, params: &LkParams) -> TrackResult {
    let r = (params.window / 2) as isize;
    let n = params.window * params.window;
    let mut tmpl = vec![0.0f64; n];
    let mut gxs = vec![0.0f64; n];
    let mut gys = vec![0.0f64; n];
    let mut guess = Translation2D::ZERO;
    let mut converged = false;

    for lvl in (0..levels.len()).rev() {
        let scale = (1u64 << lvl) as f64;
        let (px, py) = (x / scale, y / scale);
        let level = &levels[lvl];
        let target = next.level(lvl);

        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        let mut k = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let sx = px + dx as f64;
                let sy = py + dy as f64;
                tmpl[k] = level.img.sample(sx, sy) as f64;
                let gx = level.gx.sample(sx, sy) as f64;
                let gy = level.gy.sample(sx, sy) as f64;
                gxs[k] = gx;
                gys[k] = gy;
                a += gx * gx;
                b += gx * gy;
                c += gy * gy;
                k += 1;
            }
        }
        let det = a * c - b * b;
        let min_eig = 0.5 * (a + c - ((a - c).powi(2) + 4.0 * b * b).sqrt()) / n as f64;
        if min_eig < params.min_eigen || det.abs() < f64::EPSILON {
            if lvl == 0 {
                return TrackResult {
                    flow: guess,
                    converged: false,
                };
            }
            guess = guess.scale(2.0);
            continue;
        }

        let mut v = Translation2D::ZERO;
        let mut level_converged = false;
        for _ in 0..params.max_iters {
            let qx = px + guess.dx + v.dx;
            let qy = py + guess.dy + v.dy;
            // Bounds are checked in full-resolution units: coarse levels round
            // their size up, so their last pixel can sit past the frame.
            if !inside(next.level(0), qx * scale, qy * scale) {
                return TrackResult {
                    flow: Translation2D::new(qx * scale - x, qy * scale - y),
                    converged: false,
                };
            }
            let (mut bx, mut by) = (0.0, 0.0);
            let mut k = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let diff = tmpl[k] - target.sample(qx + dx as f64, qy + dy as f64) as f64;
                    bx += diff * gxs[k];
                    by += diff * gys[k];
                    k += 1;
                }
            }
            let step = Translation2D::new((c * bx - b * by) / det, (a * by - b * bx) / det);
            v = v + step;
            if step.norm() < params.eps {
                level_converged = true;
                break;
            }
        }
        if lvl == 0 {
            converged = level_converged;
            guess = guess + v;
        } else {
            guess = (guess + v).scale(2.0);
        }
    }
    let fx = x + guess.dx;
    let fy = y + guess.dy;
    // Windows that hang over either frame edge compare against replicated
    // border pixels, which biases the estimate.
    let half = (params.window / 2) as f64;
    if !window_inside(next.level(0), fx, fy, half) || !window_inside(levels[0].img, x, y, half) {
        converged = false;
    }
    TrackResult {
        flow: guess,
        converged,
    }
}

fn window_inside(img: &GrayImage, x: f64, y: f64, half: f64) -> bool {
    x >= half && y >= half && x + half <= (img.width() - 1) as f64 && y + half <= (img.height() - 1) as f64
}

fn inside(img: &GrayImage, x: f64, y: f64) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (img.width() - 1) as f64 && y <= (img.height() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::texture::synthetic_tissue;
    use crate::vision::corners::{shi_tomasi, CornerParams};
    use crate::vision::pyramid::build_pyramid;

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn identity_motion_is_zero() {
        let src = synthetic_tissue(160, 160, 3);
        let pyr = build_pyramid(&src, 3).unwrap();
        let corners = shi_tomasi(&src, &CornerParams::default()).unwrap();
        assert!(!corners.is_empty());
        let res = lk_track(&pyr, &pyr, &corners, &LkParams::default()).unwrap();
        assert_eq!(res.len(), corners.len());
        let half = 10.0;
        for (r, c) in res.iter().zip(&corners) {
            let interior = c.x >= half && c.y >= half && c.x + half <= 159.0 && c.y + half <= 159.0;
            assert_eq!(r.converged, interior, "{c:?} {r:?}");
            assert!(r.flow.norm() <= 0.01, "{:?}", r.flow);
        }
    }

    #[test]
    fn integer_shift_crop_pair() {
        let src = synthetic_tissue(600, 600, 11);
        // Content of `next` is `prev` shifted right by 7 px.
        let prev = src.crop(7, 0, 512, 512).unwrap();
        let next = src.crop(0, 0, 512, 512).unwrap();
        let pp = build_pyramid(&prev, 3).unwrap();
        let pn = build_pyramid(&next, 3).unwrap();
        let corners = shi_tomasi(&prev, &CornerParams::default()).unwrap();
        let res = lk_track(&pp, &pn, &corners, &LkParams::default()).unwrap();
        let good: Vec<_> = res.iter().filter(|r| r.converged).collect();
        assert!(good.len() > corners.len() / 2);
        for r in &good {
            assert!((r.flow.dx - 7.0).abs() <= 0.25 && r.flow.dy.abs() <= 0.25, "{:?}", r.flow);
        }
    }

    #[test]
    fn subpixel_shift_median() {
        let src = synthetic_tissue(600, 600, 5);
        let prev = src.crop_subpixel(52.5, 36.75, 256, 256).unwrap();
        let next = src.crop_subpixel(40.0, 40.0, 256, 256).unwrap();
        let pp = build_pyramid(&prev, 3).unwrap();
        let pn = build_pyramid(&next, 3).unwrap();
        let corners = shi_tomasi(&prev, &CornerParams::default()).unwrap();
        let res = lk_track(&pp, &pn, &corners, &LkParams::default()).unwrap();
        let good: Vec<_> = res.iter().filter(|r| r.converged).collect();
        let mx = median(good.iter().map(|r| r.flow.dx).collect());
        let my = median(good.iter().map(|r| r.flow.dy).collect());
        assert!((mx - 12.5).abs() <= 0.5, "{mx}");
        assert!((my + 3.25).abs() <= 0.5, "{my}");
    }

    #[test]
    fn empty_points_and_even_window() {
        let img = GrayImage::filled(64, 64, 0.2);
        let p = build_pyramid(&img, 2).unwrap();
        assert!(lk_track(&p, &p, &[], &LkParams::default()).unwrap().is_empty());
        let bad = LkParams {
            window: 20,
            ..Default::default()
        };
        assert!(lk_track(&p, &p, &[], &bad).is_err());
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let a = build_pyramid(&GrayImage::filled(64, 64, 0.2), 2).unwrap();
        let b = build_pyramid(&GrayImage::filled(64, 48, 0.2), 2).unwrap();
        assert!(lk_track(&a, &b, &[], &LkParams::default()).is_err());
    }
}
