//! Simulated microscope video scans.
//!
//! A patch is swept over a large source image in a serpentine pattern: a
//! rightward pass, a few downward steps, a leftward pass, and so on, until the
//! patch would leave the bottom of the source. Every step has a randomly
//! perturbed length and heading; the exact sub-pixel translations are kept as
//! ground truth.
//!
//! Per-scan draws (made once, in this order, from the seeded generator):
//! mean step length, noise factor, heading deviation std, row overlap. Each
//! step then draws a length from `N(mean, mean / noise_factor)` and a heading
//! deviation from `N(0, angle_std)` degrees around its nominal direction.

pub mod texture;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{compose_coords, rng_from_seed, FrameSequence, GrayImage, Rng, Translation2D};

pub use texture::{synthetic_tissue, synthetic_tissue_with, TissueParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub patch: usize,
    /// Interval the per-scan mean step length is drawn from, in pixels.
    pub mag_range: (f64, f64),
    pub noise_factor_range: (f64, f64),
    pub angle_std_range_deg: (f64, f64),
    pub row_overlap_range: (f64, f64),
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            patch: 512,
            // 512/35 and 512/25
            mag_range: (14.62, 20.48),
            noise_factor_range: (5.0, 25.0),
            angle_std_range_deg: (1.0, 15.0),
            row_overlap_range: (0.2, 0.4),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("mag_range", self.mag_range),
            ("noise_factor_range", self.noise_factor_range),
            ("angle_std_range_deg", self.angle_std_range_deg),
            ("row_overlap_range", self.row_overlap_range),
        ];
        for (name, (lo, hi)) in ranges {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::validation(format!("{name}: low {lo} > high {hi}")));
            }
        }
        if self.patch < 64 {
            return Err(Error::validation(format!("patch {} < 64", self.patch)));
        }
        if self.mag_range.0 <= 0.0 || self.mag_range.1 >= self.patch as f64 {
            return Err(Error::validation(format!(
                "mean step range {:?} must be positive and below the patch size {}",
                self.mag_range, self.patch
            )));
        }
        if self.noise_factor_range.0 <= 0.0 {
            return Err(Error::validation("noise factor must be positive"));
        }
        if self.angle_std_range_deg.0 < 0.0 {
            return Err(Error::validation("angle std must be non-negative"));
        }
        if self.row_overlap_range.0 < 0.0 || self.row_overlap_range.1 >= 1.0 {
            return Err(Error::validation("row overlap must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// The four per-scan draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRealization {
    pub mean_mag: f64,
    pub noise_factor: f64,
    pub angle_std_deg: f64,
    pub row_overlap: f64,
}

impl ScanRealization {
    pub fn draw(cfg: &SimConfig, rng: &mut Rng) -> Self {
        Self {
            mean_mag: uniform(rng, cfg.mag_range),
            noise_factor: uniform(rng, cfg.noise_factor_range),
            angle_std_deg: uniform(rng, cfg.angle_std_range_deg),
            row_overlap: uniform(rng, cfg.row_overlap_range),
        }
    }

    pub fn magnitude_std(&self) -> f64 {
        self.mean_mag / self.noise_factor
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    // Always consume one draw so the stream layout is independent of the ranges.
    let u: f64 = rng.random();
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heading {
    Right,
    Left,
    Down,
}

impl Heading {
    fn unit(self) -> (f64, f64) {
        match self {
            Heading::Right => (1.0, 0.0),
            Heading::Left => (-1.0, 0.0),
            Heading::Down => (0.0, 1.0),
        }
    }
}

/// One drawn step before any boundary handling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawnStep {
    pub translation: Translation2D,
    pub magnitude: f64,
    pub deviation_deg: f64,
}

/// Step-noise model of a realized scan.
#[derive(Debug, Clone, Copy)]
pub struct StepModel {
    pub realization: ScanRealization,
}

impl StepModel {
    pub fn draw(&self, rng: &mut Rng, heading: Heading) -> DrawnStep {
        let r = &self.realization;
        let z_mag: f64 = StandardNormal.sample(rng);
        let z_ang: f64 = StandardNormal.sample(rng);
        let magnitude = r.mean_mag + r.magnitude_std() * z_mag;
        let deviation_deg = r.angle_std_deg * z_ang;
        let (s, c) = deviation_deg.to_radians().sin_cos();
        let (ux, uy) = heading.unit();
        DrawnStep {
            translation: Translation2D::new(magnitude * (ux * c - uy * s), magnitude * (ux * s + uy * c)),
            magnitude,
            deviation_deg,
        }
    }
}

/// A planned scan: the realization, the accepted steps and per-step metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPlan {
    pub realization: ScanRealization,
    pub steps: Vec<Translation2D>,
    pub headings: Vec<Heading>,
    /// Serpentine row each step belongs to; transition steps carry the row they lead into.
    pub rows: Vec<usize>,
    pub source_width: usize,
    pub source_height: usize,
    pub patch: usize,
}

impl ScanPlan {
    pub fn row_count(&self) -> usize {
        self.rows.last().map_or(1, |r| r + 1)
    }

    pub fn len_frames(&self) -> usize {
        self.steps.len() + 1
    }
}

/// Plans a serpentine scan over a `source_w x source_h` image.
///
/// Horizontal passes end before the step that would carry the patch past the
/// left or right edge. Transition steps head down until the vertical distance
/// covered since the pass ended reaches `patch * (1 - row_overlap)`; the scan
/// ends when a step would carry the patch past the bottom edge. Heading noise
/// that would push the patch out across the other axis is reflected on that
/// axis, which keeps step lengths and deviation magnitudes untouched.
pub fn plan_scan(source_w: usize, source_h: usize, cfg: &SimConfig) -> Result<ScanPlan> {
    cfg.validate()?;
    if source_w < 2 * cfg.patch || source_h < 2 * cfg.patch {
        return Err(Error::validation(format!(
            "source {source_w}x{source_h} must be at least twice the patch ({}) in each axis",
            cfg.patch
        )));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let realization = ScanRealization::draw(cfg, &mut rng);
    let model = StepModel { realization };
    let max_x = (source_w - cfg.patch) as f64;
    let max_y = (source_h - cfg.patch) as f64;
    let row_gap = cfg.patch as f64 * (1.0 - realization.row_overlap);
    // Guards against degenerate configurations that never advance.
    let step_budget = 50 * (source_w + source_h) * (source_w + source_h) / cfg.patch.max(1);

    let mut plan = ScanPlan {
        realization,
        steps: Vec::new(),
        headings: Vec::new(),
        rows: Vec::new(),
        source_width: source_w,
        source_height: source_h,
        patch: cfg.patch,
    };
    let (mut x, mut y) = (0.0f64, 0.0f64);
    let mut row = 0usize;
    let mut heading = Heading::Right;
    'scan: loop {
        loop {
            if plan.steps.len() > step_budget {
                break 'scan;
            }
            let mut t = model.draw(&mut rng, heading).translation;
            if !(0.0..=max_x).contains(&(x + t.dx)) {
                break;
            }
            if !(0.0..=max_y).contains(&(y + t.dy)) {
                t.dy = -t.dy;
            }
            if !(0.0..=max_y).contains(&(y + t.dy)) {
                break;
            }
            x += t.dx;
            y += t.dy;
            plan.steps.push(t);
            plan.headings.push(heading);
            plan.rows.push(row);
        }
        row += 1;
        let mut descended = 0.0;
        while descended < row_gap {
            if plan.steps.len() > step_budget {
                break 'scan;
            }
            let mut t = model.draw(&mut rng, Heading::Down).translation;
            if y + t.dy > max_y {
                break 'scan;
            }
            if !(0.0..=max_x).contains(&(x + t.dx)) {
                t.dx = -t.dx;
            }
            if !(0.0..=max_x).contains(&(x + t.dx)) || y + t.dy < 0.0 {
                break 'scan;
            }
            x += t.dx;
            y += t.dy;
            descended += t.dy;
            plan.steps.push(t);
            plan.headings.push(Heading::Down);
            plan.rows.push(row);
        }
        heading = if heading == Heading::Right {
            Heading::Left
        } else {
            Heading::Right
        };
    }
    Ok(plan)
}

/// Crops every frame of the plan out of `source`, bilinearly at fractional
/// positions. Frame 0 sits at the source's top-left corner.
pub fn render_scan(
    source: &GrayImage,
    plan: &[Translation2D],
    cfg: &SimConfig,
    source_id: &str,
) -> Result<FrameSequence> {
    let coords = compose_coords(plan)?;
    let frames = coords
        .coords
        .par_iter()
        .map(|p| source.crop_subpixel(p.x, p.y, cfg.patch, cfg.patch))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, plan.to_vec(), source_id, cfg.seed)
}
