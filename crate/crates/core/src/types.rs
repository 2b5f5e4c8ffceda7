//! Shared domain types.
//!
//! Coordinates follow raster convention: x grows rightward, y grows downward,
//! and the global origin is frame 0's upper-left corner.

use std::ops::{Add, AddAssign, Neg, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic generator used for every random draw in the crate.
pub type Rng = ChaCha8Rng;

/// Name of the generator recorded in dataset manifests.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rec.601 luma weights.
pub fn luma601(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Row-major luminance raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                what: "image buffer",
                expected: width * height,
                found: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::validation(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image without range checks; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                data.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    /// Raster with arbitrary (unclamped) values, used for intermediate
    /// buffers such as gradients and blurred pyramid levels.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with replicate borders.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Bilinear sample with replicate borders.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let xi = x0 as isize;
        let yi = y0 as isize;
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        top + (bottom - top) * fy
    }

    /// Integer crop. Fails when the rectangle leaves the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::validation(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(GrayImage::from_raw(w, h, data))
    }

    /// Crop at a fractional upper-left corner. Integer coordinates take the
    /// exact integer path so the result is bit-identical to [`Self::crop`].
    pub fn crop_subpixel(&self, x0: f64, y0: f64, w: usize, h: usize) -> Result<GrayImage> {
        if !(x0.is_finite() && y0.is_finite())
            || x0 < 0.0
            || y0 < 0.0
            || x0 + w as f64 > self.width as f64
            || y0 + h as f64 > self.height as f64
        {
            return Err(Error::Internal(format!(
                "crop {w}x{h} at ({x0}, {y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        if x0.fract() == 0.0 && y0.fract() == 0.0 {
            return self.crop(x0 as usize, y0 as usize, w, h);
        }
        let mut data = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                data.push(self.sample(x0 + c as f64, y0 + r as f64));
            }
        }
        Ok(GrayImage::from_raw(w, h, data))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        self.data
            .iter()
            .map(|&v| (v as f64 - m).powi(2))
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Quantizes to 8 bits, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height {
            return Err(Error::LengthMismatch {
                what: "8-bit image buffer",
                expected: width * height,
                found: bytes.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }
}

/// Sub-pixel displacement between two frames.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Translation2D {
    pub dx: f64,
    pub dy: f64,
}

impl Translation2D {
    pub const ZERO: Translation2D = Translation2D { dx: 0.0, dy: 0.0 };

    pub const fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn norm(self) -> f64 {
        self.dx.hypot(self.dy)
    }

    /// L-infinity norm.
    pub fn max_abs(self) -> f64 {
        self.dx.abs().max(self.dy.abs())
    }

    pub fn is_finite(self) -> bool {
        self.dx.is_finite() && self.dy.is_finite()
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.dx * s, self.dy * s)
    }
}

impl Add for Translation2D {
    type Output = Translation2D;
    fn add(self, o: Translation2D) -> Translation2D {
        Translation2D::new(self.dx + o.dx, self.dy + o.dy)
    }
}

impl Sub for Translation2D {
    type Output = Translation2D;
    fn sub(self, o: Translation2D) -> Translation2D {
        Translation2D::new(self.dx - o.dx, self.dy - o.dy)
    }
}

impl Neg for Translation2D {
    type Output = Translation2D;
    fn neg(self) -> Translation2D {
        Translation2D::new(-self.dx, -self.dy)
    }
}

/// Upper-left corner of a frame in global space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add<Translation2D> for Point2 {
    type Output = Point2;
    fn add(self, t: Translation2D) -> Point2 {
        Point2::new(self.x + t.dx, self.y + t.dy)
    }
}

impl AddAssign<Translation2D> for Point2 {
    fn add_assign(&mut self, t: Translation2D) {
        self.x += t.dx;
        self.y += t.dy;
    }
}

impl Sub for Point2 {
    type Output = Translation2D;
    fn sub(self, o: Point2) -> Translation2D {
        Translation2D::new(self.x - o.x, self.y - o.y)
    }
}

/// Per-frame global coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoordinateSet {
    pub coords: Vec<Point2>,
}

impl CoordinateSet {
    pub fn new(coords: Vec<Point2>) -> Result<Self> {
        if let Some((i, _)) = coords.iter().enumerate().find(|(_, p)| !p.is_finite()) {
            return Err(Error::validation(format!("coordinate {i} is not finite")));
        }
        Ok(Self { coords })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            coords: vec![Point2::ORIGIN; n],
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point2> {
        self.coords.iter()
    }

    /// First differences: `steps[i] = coords[i + 1] - coords[i]`.
    pub fn steps(&self) -> Vec<Translation2D> {
        self.coords.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Keeps only the listed indices, in order.
    pub fn select(&self, indices: &[usize]) -> CoordinateSet {
        CoordinateSet {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
        }
    }

    /// Shifts every coordinate so that frame 0 sits at the origin.
    pub fn rebased(&self) -> CoordinateSet {
        let Some(&first) = self.coords.first() else {
            return self.clone();
        };
        CoordinateSet {
            coords: self
                .coords
                .iter()
                .map(|&p| Point2::new(p.x - first.x, p.y - first.y))
                .collect(),
        }
    }
}

impl std::ops::Index<usize> for CoordinateSet {
    type Output = Point2;
    fn index(&self, i: usize) -> &Point2 {
        &self.coords[i]
    }
}

/// Prefix sum of step translations, starting at the origin.
pub fn compose_coords(steps: &[Translation2D]) -> Result<CoordinateSet> {
    if let Some(i) = steps.iter().position(|s| !s.is_finite()) {
        return Err(Error::validation(format!("step {i} is not finite")));
    }
    let mut coords = Vec::with_capacity(steps.len() + 1);
    let mut p = Point2::ORIGIN;
    coords.push(p);
    for &s in steps {
        p += s;
        coords.push(p);
    }
    Ok(CoordinateSet { coords })
}

/// A simulated scan: frames in capture order with exact ground truth.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub frames: Vec<GrayImage>,
    pub truth_steps: Vec<Translation2D>,
    pub truth_coords: CoordinateSet,
    pub source_id: String,
    pub seed: u64,
}

impl FrameSequence {
    pub fn new(
        frames: Vec<GrayImage>,
        truth_steps: Vec<Translation2D>,
        source_id: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        if frames.len() != truth_steps.len() + 1 {
            return Err(Error::LengthMismatch {
                what: "truth steps",
                expected: frames.len().saturating_sub(1),
                found: truth_steps.len(),
            });
        }
        let truth_coords = compose_coords(&truth_steps)?;
        Ok(Self {
            frames,
            truth_steps,
            truth_coords,
            source_id: source_id.into(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
