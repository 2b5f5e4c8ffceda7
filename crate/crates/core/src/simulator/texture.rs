//! Procedural stand-in for a digitized slide: a smooth stained background,
//! fibrous mid-frequency texture and scattered dark nuclei.

use rand::Rng as _;

use crate::types::{rng_from_seed, GrayImage, Rng};

struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f32>,
}

impl ValueNoise {
    fn new(rng: &mut Rng, width: usize, height: usize, cell: f64) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let lattice = (0..cols * rows).map(|_| rng.random::<f32>()).collect();
        Self {
            cell,
            cols,
            lattice,
        }
    }

    fn at(&self, x: usize, y: usize) -> f32 {
        let fx = x as f64 / self.cell;
        let fy = y as f64 / self.cell;
        let (ix, iy) = (fx as usize, fy as usize);
        let smooth = |t: f64| (t * t * (3.0 - 2.0 * t)) as f32;
        let tx = smooth(fx - ix as f64);
        let ty = smooth(fy - iy as f64);
        let v = |cx: usize, cy: usize| self.lattice[cy * self.cols + cx];
        let top = v(ix, iy) + (v(ix + 1, iy) - v(ix, iy)) * tx;
        let bottom = v(ix, iy + 1) + (v(ix + 1, iy + 1) - v(ix, iy + 1)) * tx;
        top + (bottom - top) * ty
    }
}

/// Knobs of [`synthetic_tissue_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct TissueParams {
    pub background: f32,
    /// Value-noise layers as (cell size in px, darkening amplitude).
    pub layers: Vec<(f64, f32)>,
    /// Source area per nucleus, in px^2.
    pub area_per_nucleus: usize,
    pub nucleus_sigma: (f64, f64),
    pub nucleus_amp: (f32, f32),
}

impl Default for TissueParams {
    fn default() -> Self {
        Self {
            background: 0.78,
            layers: vec![(96.0, 0.15), (24.0, 0.10), (8.0, 0.10), (4.0, 0.08)],
            area_per_nucleus: 150,
            nucleus_sigma: (1.4, 3.8),
            nucleus_amp: (0.12, 0.38),
        }
    }
}

/// Deterministic textured source image of the given size.
pub fn synthetic_tissue(width: usize, height: usize, seed: u64) -> GrayImage {
    synthetic_tissue_with(width, height, seed, &TissueParams::default())
}

pub fn synthetic_tissue_with(width: usize, height: usize, seed: u64, p: &TissueParams) -> GrayImage {
    let mut rng = rng_from_seed(seed ^ 0x5eed_7155_0e00_0001);
    let layers: Vec<(ValueNoise, f32)> = p
        .layers
        .iter()
        .map(|&(cell, amp)| (ValueNoise::new(&mut rng, width, height, cell), amp))
        .collect();

    let mut data: Vec<f32> = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let v = layers
                .iter()
                .fold(p.background, |v, (noise, amp)| v - amp * noise.at(x, y));
            data.push(v);
        }
    }

    let count = width * height / p.area_per_nucleus.max(1);
    for _ in 0..count {
        let cx = rng.random::<f64>() * width as f64;
        let cy = rng.random::<f64>() * height as f64;
        let sigma = rng.random_range(p.nucleus_sigma.0..p.nucleus_sigma.1);
        let amp = rng.random_range(p.nucleus_amp.0..p.nucleus_amp.1);
        let reach = (3.0 * sigma).ceil() as isize;
        let inv = 1.0 / (2.0 * sigma * sigma);
        let (x0, y0) = (cx as isize, cy as isize);
        for yy in (y0 - reach).max(0)..=(y0 + reach).min(height as isize - 1) {
            for xx in (x0 - reach).max(0)..=(x0 + reach).min(width as isize - 1) {
                let d2 = (xx as f64 - cx).powi(2) + (yy as f64 - cy).powi(2);
                data[yy as usize * width + xx as usize] -= amp * (-d2 * inv).exp() as f32;
            }
        }
    }
    GrayImage::from_fn(width, height, |x, y| data[y * width + x])
}
