//! Zero-normalized cross-correlation template matching.
//!
//! Window means and energies come from integral images; the numerator is
//! evaluated directly, so every score is exact rather than FFT-approximated.

use crate::types::{GrayImage, Translation2D};
use crate::vision::filters::blur_decimate;
use crate::vision::pyramid::{build_pyramid, max_levels};
use crate::vision::template::Template;

/// Best placement of a template inside a target frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    /// Target-frame origin minus source-frame origin implied by the match.
    pub translation: Translation2D,
    /// Maximum ZNCC score over the searched placements.
    pub correlation: f64,
}

/// Number of coarse peaks refined at full resolution during a full search.
const COARSE_PEAKS: usize = 4;
/// Coarse templates must keep at least this many pixels per side.
const MIN_COARSE_SIDE: usize = 8;
const MAX_COARSE_LEVEL: usize = 3;

/// Window energies below this are treated as flat and score zero.
const FLAT_ENERGY: f64 = 1e-10;

struct Level {
    img: GrayImage,
    /// Pixels minus the global mean; the zero-mean kernel makes the shift
    /// irrelevant in exact arithmetic and it limits f32 cancellation.
    centered: Vec<f32>,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Level {
    fn new(img: GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut sum = vec![0.0f64; stride * (h + 1)];
        let mut sq = vec![0.0f64; stride * (h + 1)];
        for y in 0..h {
            let mut rs = 0.0;
            let mut rq = 0.0;
            for (x, &v) in img.row(y).iter().enumerate() {
                let v = v as f64;
                rs += v;
                rq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + rs;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + rq;
            }
        }
        let mean = img.mean();
        let centered = img.data().iter().map(|&v| (v as f64 - mean) as f32).collect();
        Self {
            img,
            centered,
            sum,
            sq,
        }
    }

    #[inline]
    fn window(&self, table: &[f64], x: usize, y: usize, w: usize, h: usize) -> f64 {
        let s = self.img.width() + 1;
        table[(y + h) * s + x + w] - table[y * s + x + w] - table[(y + h) * s + x] + table[y * s + x]
    }
}

/// Zero-mean template ready for correlation.
struct Kernel {
    w: usize,
    h: usize,
    values: Vec<f32>,
    norm: f64,
}

impl Kernel {
    fn new(patch: &GrayImage) -> Option<Self> {
        let mean = patch.mean();
        let values: Vec<f32> = patch.data().iter().map(|&v| (v as f64 - mean) as f32).collect();
        let norm = values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        (norm > 1e-9).then_some(Self {
            w: patch.width(),
            h: patch.height(),
            values,
            norm,
        })
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = acc.iter().sum::<f32>();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn score_at(level: &Level, k: &Kernel, x: usize, y: usize) -> f64 {
    let n = (k.w * k.h) as f64;
    let s = level.window(&level.sum, x, y, k.w, k.h);
    let q = level.window(&level.sq, x, y, k.w, k.h);
    let energy = q - s * s / n;
    if energy <= FLAT_ENERGY * n {
        return 0.0;
    }
    let tw = level.img.width();
    let data = &level.centered;
    let mut num = 0.0f64;
    for r in 0..k.h {
        let row = &data[(y + r) * tw + x..(y + r) * tw + x + k.w];
        num += dot(&k.values[r * k.w..(r + 1) * k.w], row) as f64;
    }
    (num / (k.norm * energy.sqrt())).clamp(-1.0, 1.0)
}

/// Inclusive placement rectangle.
#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl Rect {
    fn clip(self, max_x: i64, max_y: i64) -> Option<Rect> {
        let r = Rect {
            x0: self.x0.max(0),
            y0: self.y0.max(0),
            x1: self.x1.min(max_x),
            y1: self.y1.min(max_y),
        };
        (r.x0 <= r.x1 && r.y0 <= r.y1).then_some(r)
    }
}

/// Exhaustive search; ties keep the first placement in (y, x) order.
fn best_in(level: &Level, k: &Kernel, rect: Rect) -> (usize, usize, f64) {
    let mut best = (rect.x0 as usize, rect.y0 as usize, f64::NEG_INFINITY);
    for y in rect.y0..=rect.y1 {
        for x in rect.x0..=rect.x1 {
            let s = score_at(level, k, x as usize, y as usize);
            if s > best.2 {
                best = (x as usize, y as usize, s);
            }
        }
    }
    best
}

/// Target frame with the integral images needed for fast ZNCC, plus coarse
/// levels for whole-frame searches.
pub struct NccTarget {
    levels: Vec<Level>,
}

impl NccTarget {
    /// Prepares only full resolution; enough for windowed searches.
    pub fn new(img: &GrayImage) -> Self {
        Self {
            levels: vec![Level::new(img.clone())],
        }
    }

    /// Prepares full resolution plus up to three coarse levels.
    pub fn with_pyramid(img: &GrayImage) -> Self {
        let n = max_levels(img.width(), img.height()).clamp(1, MAX_COARSE_LEVEL + 1);
        let pyr = build_pyramid(img, n).expect("level count bounded by max_levels");
        Self {
            levels: pyr.levels().iter().cloned().map(Level::new).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.levels[0].img.width()
    }

    pub fn height(&self) -> usize {
        self.levels[0].img.height()
    }

    fn max_placement(&self, level: usize, k: &Kernel) -> Option<(i64, i64)> {
        let img = &self.levels[level].img;
        (k.w <= img.width() && k.h <= img.height())
            .then(|| ((img.width() - k.w) as i64, (img.height() - k.h) as i64))
    }

    /// Exhaustive full-resolution search over placements within
    /// `search_radius` (L-infinity) of the placement predicted by `center`.
    pub fn match_window(
        &self,
        template: &Template,
        center: Translation2D,
        search_radius: usize,
        subpixel: bool,
    ) -> Option<MatchResult> {
        let k = Kernel::new(template.patch())?;
        let (mx, my) = self.max_placement(0, &k)?;
        let (ox, oy) = template.origin();
        let cx = (ox as f64 - center.dx).round() as i64;
        let cy = (oy as f64 - center.dy).round() as i64;
        let r = search_radius as i64;
        let rect = Rect {
            x0: cx - r,
            y0: cy - r,
            x1: cx + r,
            y1: cy + r,
        }
        .clip(mx, my)?;
        let (x, y, s) = best_in(&self.levels[0], &k, rect);
        let (x, y, s) = climb(&self.levels[0], &k, (mx, my), (x, y, s), search_radius);
        Some(self.finish(template, &k, x, y, s, subpixel))
    }

    /// Searches every placement of the template in the frame, coarse to fine:
    /// exhaustive ZNCC at a reduced level, then exhaustive full-resolution
    /// refinement around the strongest coarse peaks.
    pub fn match_full(&self, template: &Template, subpixel: bool) -> Option<MatchResult> {
        let k0 = Kernel::new(template.patch())?;
        let (mx, my) = self.max_placement(0, &k0)?;
        let side = template.width().min(template.height());
        let mut level = 0;
        while level + 1 < self.levels.len()
            && side.div_ceil(1 << (level + 1)) >= MIN_COARSE_SIDE
        {
            level += 1;
        }
        if level == 0 {
            let (x, y, s) = best_in(
                &self.levels[0],
                &k0,
                Rect {
                    x0: 0,
                    y0: 0,
                    x1: mx,
                    y1: my,
                },
            );
            return Some(self.finish(template, &k0, x, y, s, subpixel));
        }

        let mut coarse = template.patch().clone();
        for _ in 0..level {
            coarse = blur_decimate(&coarse);
        }
        let Some(kc) = Kernel::new(&coarse) else {
            return self.match_window(template, Translation2D::ZERO, mx.max(my) as usize, subpixel);
        };
        let (cmx, cmy) = self.max_placement(level, &kc)?;
        let lvl = &self.levels[level];
        let cw = (cmx + 1) as usize;
        let mut scores = vec![f64::NEG_INFINITY; cw * (cmy + 1) as usize];
        for y in 0..=cmy as usize {
            for x in 0..cw {
                scores[y * cw + x] = score_at(lvl, &kc, x, y);
            }
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut peaks: Vec<(i64, i64)> = Vec::with_capacity(COARSE_PEAKS);
        for i in order {
            let (x, y) = ((i % cw) as i64, (i / cw) as i64);
            if peaks.iter().all(|&(px, py)| (px - x).abs() > 2 || (py - y).abs() > 2) {
                peaks.push((x, y));
                if peaks.len() == COARSE_PEAKS {
                    break;
                }
            }
        }

        let scale = 1i64 << level;
        let r = scale + 2;
        let mut best: Option<(usize, usize, f64)> = None;
        for (px, py) in peaks {
            let rect = Rect {
                x0: px * scale - r,
                y0: py * scale - r,
                x1: px * scale + r,
                y1: py * scale + r,
            };
            let Some(rect) = rect.clip(mx, my) else {
                continue;
            };
            let cand = best_in(&self.levels[0], &k0, rect);
            let better = match best {
                None => true,
                Some(b) => cand.2 > b.2 || (cand.2 == b.2 && (cand.1, cand.0) < (b.1, b.0)),
            };
            if better {
                best = Some(cand);
            }
        }
        let (x, y, s) = best?;
        Some(self.finish(template, &k0, x, y, s, subpixel))
    }

    fn finish(
        &self,
        template: &Template,
        k: &Kernel,
        x: usize,
        y: usize,
        score: f64,
        subpixel: bool,
    ) -> MatchResult {
        let (mut fx, mut fy) = (x as f64, y as f64);
        if subpixel {
            let lvl = &self.levels[0];
            let (mx, my) = (lvl.img.width() - k.w, lvl.img.height() - k.h);
            if x > 0 && x < mx {
                fx += parabola(score_at(lvl, k, x - 1, y), score, score_at(lvl, k, x + 1, y));
            }
            if y > 0 && y < my {
                fy += parabola(score_at(lvl, k, x, y - 1), score, score_at(lvl, k, x, y + 1));
            }
        }
        let (ox, oy) = template.origin();
        MatchResult {
            translation: Translation2D::new(ox as f64 - fx, oy as f64 - fy),
            correlation: score,
        }
    }
}

/// Steepest ascent over the 8-neighborhood, at most `max_steps` moves. A
/// window maximum on the window border is usually the flank of a peak that
/// lies just outside it.
fn climb(
    level: &Level,
    k: &Kernel,
    (mx, my): (i64, i64),
    (mut x, mut y, mut s): (usize, usize, f64),
    max_steps: usize,
) -> (usize, usize, f64) {
    for _ in 0..max_steps {
        let mut next = None;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx > mx || ny > my {
                    continue;
                }
                let v = score_at(level, k, nx as usize, ny as usize);
                if v > next.map_or(s, |(_, _, b)| b) {
                    next = Some((nx as usize, ny as usize, v));
                }
            }
        }
        match next {
            Some(n) => (x, y, s) = n,
            None => break,
        }
    }
    (x, y, s)
}

fn parabola(l: f64, c: f64, r: f64) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

/// Exhaustive ZNCC over placements within `search_radius` of the placement
/// that `search_center` predicts. `None` when no placement fits.
pub fn match_template(
    template: &Template,
    target: &GrayImage,
    search_center: Translation2D,
    search_radius: usize,
) -> Option<MatchResult> {
    NccTarget::new(target).match_window(template, search_center, search_radius, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::texture::synthetic_tissue;
    use proptest::prelude::*;

    /// Direct two-pass ZNCC of a template against one placement.
    fn naive_zncc(t: &GrayImage, img: &GrayImage, x: usize, y: usize) -> f64 {
        let n = (t.width() * t.height()) as f64;
        let mut ws = Vec::new();
        for r in 0..t.height() {
            for c in 0..t.width() {
                ws.push(img.get(x + c, y + r) as f64);
            }
        }
        let ts: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
        let mt = ts.iter().sum::<f64>() / n;
        let mw = ws.iter().sum::<f64>() / n;
        let num: f64 = ts.iter().zip(&ws).map(|(a, b)| (a - mt) * (b - mw)).sum();
        let da: f64 = ts.iter().map(|a| (a - mt).powi(2)).sum::<f64>().sqrt();
        let db: f64 = ws.iter().map(|b| (b - mw).powi(2)).sum::<f64>().sqrt();
        num / (da * db)
    }

    #[test]
    fn scores_match_naive() {
        let img = synthetic_tissue(96, 80, 2);
        let t = Template::cut(&img, 30, 20, 21, 17).unwrap();
        let target = NccTarget::new(&img);
        let k = Kernel::new(t.patch()).unwrap();
        for (x, y) in [(0, 0), (30, 20), (75, 63), (10, 40)] {
            let a = score_at(&target.levels[0], &k, x, y);
            let b = naive_zncc(t.patch(), &img, x, y);
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn self_match_recovers_offset() {
        let img = synthetic_tissue(200, 160, 4);
        // Template taken from a frame whose origin is 40 px left and 30 px up
        // of the target's; the same content sits at (57, 41) in the target.
        let t = Template::new(img.crop(57, 41, 31, 31).unwrap(), (97, 71)).unwrap();
        let m = match_template(&t, &img, Translation2D::new(40.0, 30.0), 10).unwrap();
        assert_eq!(m.translation, Translation2D::new(40.0, 30.0));
        assert!((m.correlation - 1.0).abs() < 1e-6);
        // A miss-centred window still finds it while it covers the truth.
        let m = match_template(&t, &img, Translation2D::new(33.0, 36.0), 8).unwrap();
        assert_eq!(m.translation, Translation2D::new(40.0, 30.0));
    }

    #[test]
    fn offset_invariance() {
        let img = synthetic_tissue(160, 160, 8);
        let brighter = GrayImage::from_fn(160, 160, |x, y| (img.get(x, y) * 0.7 + 0.2).min(1.0));
        let t = Template::cut(&img, 60, 60, 31, 31).unwrap();
        let raw = GrayImage::from_raw(
            160,
            160,
            img.data().iter().map(|v| v * 0.7 + 0.2).collect(),
        );
        assert_eq!(raw, brighter);
        let m = match_template(&t, &brighter, Translation2D::ZERO, 5).unwrap();
        assert_eq!(m.translation, Translation2D::ZERO);
        assert!((m.correlation - 1.0).abs() < 1e-6);
    }

    #[test]
    fn window_peak_on_border_climbs_to_true_peak() {
        let src = synthetic_tissue(400, 300, 21);
        let a = src.crop(0, 0, 200, 200).unwrap();
        let b = src.crop(40, 25, 200, 200).unwrap();
        let t = Template::new(a.crop(60, 60, 50, 50).unwrap(), (60, 60)).unwrap();
        let target = NccTarget::new(&b);
        // True offset (40,25) lies 2 px outside a radius-4 window around (34,19).
        let m = target.match_window(&t, Translation2D::new(34.0, 19.0), 4, true).unwrap();
        assert!((m.translation - Translation2D::new(40.0, 25.0)).max_abs() < 0.05, "{m:?}");
        assert!(m.correlation > 0.99);
    }

    #[test]
    fn window_outside_target_is_no_match() {
        let img = synthetic_tissue(100, 100, 1);
        let t = Template::cut(&img, 10, 10, 20, 20).unwrap();
        assert!(match_template(&t, &img, Translation2D::new(500.0, 0.0), 10).is_none());
        let small = GrayImage::filled(10, 10, 0.5);
        assert!(match_template(&t, &small, Translation2D::ZERO, 10).is_none());
    }

    #[test]
    fn flat_target_scores_zero() {
        let img = synthetic_tissue(100, 100, 1);
        let t = Template::cut(&img, 10, 10, 20, 20).unwrap();
        let flat = GrayImage::filled(100, 100, 0.5);
        let m = match_template(&t, &flat, Translation2D::ZERO, 3).unwrap();
        assert_eq!(m.correlation, 0.0);
        // Ties resolve to the smallest (y, x) placement.
        assert_eq!(m.translation, Translation2D::new(3.0, 3.0));
    }

    #[test]
    fn full_search_finds_distant_match() {
        let img = synthetic_tissue(512, 512, 33);
        for (x, y, side) in [(400usize, 37usize, 31usize), (5, 440, 48), (250, 250, 16), (100, 300, 20)] {
            let t = Template::new(img.crop(x, y, side, side).unwrap(), (0, 0)).unwrap();
            let target = NccTarget::with_pyramid(&img);
            let m = target.match_full(&t, false).unwrap();
            assert_eq!(m.translation, Translation2D::new(-(x as f64), -(y as f64)));
            assert!(m.correlation > 0.999999);
        }
    }

    #[test]
    fn subpixel_refinement_tracks_fractional_shift() {
        let src = synthetic_tissue(300, 300, 9);
        let a = src.crop(50, 50, 200, 200).unwrap();
        let b = src.crop_subpixel(60.4, 47.7, 200, 200).unwrap();
        let t = Template::cut(&a, 80, 80, 41, 41).unwrap();
        let target = NccTarget::new(&b);
        let m = target.match_window(&t, Translation2D::new(10.0, -2.0), 5, true).unwrap();
        assert!((m.translation.dx - 10.4).abs() < 0.2, "{:?}", m.translation);
        assert!((m.translation.dy + 2.3).abs() < 0.2, "{:?}", m.translation);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn affine_intensity_invariance(gain in 0.05f32..1.0, offset in -0.5f32..0.5, seed in 0u64..1000) {
            let img = synthetic_tissue(90, 90, seed);
            let t = Template::cut(&img, 30, 30, 24, 24).unwrap();
            let warped = GrayImage::from_raw(90, 90, img.data().iter().map(|v| v * gain + offset).collect());
            let a = NccTarget::new(&img);
            let b = NccTarget::new(&warped);
            let k = Kernel::new(t.patch()).unwrap();
            for (x, y) in [(30usize, 30usize), (0, 0), (50, 12), (66, 66)] {
                let sa = score_at(&a.levels[0], &k, x, y);
                let sb = score_at(&b.levels[0], &k, x, y);
                prop_assert!((sa - sb).abs() <= 1e-6, "{} vs {}", sa, sb);
            }
        }
    }
}
