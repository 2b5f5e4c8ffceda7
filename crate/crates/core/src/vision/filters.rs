//! Small separable kernels shared by the detectors and the pyramid.

use crate::types::GrayImage;

/// Sobel derivatives scaled by 1/8 so that a unit ramp has gradient 1.
/// Borders replicate.
pub fn sobel(img: &GrayImage) -> (Vec<f32>, Vec<f32>) {
    let w = img.width();
    let h = img.height();
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    let xi = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let yi = |y: isize| y.clamp(0, h as isize - 1) as usize;
    let d = img.data();
    for y in 0..h {
        let ym = yi(y as isize - 1) * w;
        let y0 = y * w;
        let yp = yi(y as isize + 1) * w;
        for x in 0..w {
            let xm = xi(x as isize - 1);
            let xp = xi(x as isize + 1);
            let tl = d[ym + xm];
            let tc = d[ym + x];
            let tr = d[ym + xp];
            let ml = d[y0 + xm];
            let mr = d[y0 + xp];
            let bl = d[yp + xm];
            let bc = d[yp + x];
            let br = d[yp + xp];
            gx[y0 + x] = ((tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl)) * 0.125;
            gy[y0 + x] = ((bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr)) * 0.125;
        }
    }
    (gx, gy)
}

/// Sum over a `(2r+1)^2` window with replicate borders, via two running-sum passes.
pub fn box_sum(src: &[f32], w: usize, h: usize, r: usize) -> Vec<f32> {
    let mut tmp = vec![0.0f32; w * h];
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let ri = r as isize;
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let mut acc = 0.0f64;
        for k in -ri..=ri {
            acc += row[clamp(k, w)] as f64;
        }
        tmp[y * w] = acc as f32;
        for x in 1..w {
            let xi = x as isize;
            acc += row[clamp(xi + ri, w)] as f64 - row[clamp(xi - ri - 1, w)] as f64;
            tmp[y * w + x] = acc as f32;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for x in 0..w {
        let mut acc = 0.0f64;
        for k in -ri..=ri {
            acc += tmp[clamp(k, h) * w + x] as f64;
        }
        out[x] = acc as f32;
        for y in 1..h {
            let yi = y as isize;
            acc += tmp[clamp(yi + ri, h) * w + x] as f64 - tmp[clamp(yi - ri - 1, h) * w + x] as f64;
            out[y * w + x] = acc as f32;
        }
    }
    out
}

const GAUSS5: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// 5-tap binomial blur followed by keeping every second row and column.
pub fn blur_decimate(img: &GrayImage) -> GrayImage {
    let w = img.width();
    let h = img.height();
    let nw = w.div_ceil(2);
    let nh = h.div_ceil(2);
    let d = img.data();
    let cx = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let cy = |y: isize| y.clamp(0, h as isize - 1) as usize;
    // Horizontal pass only at the kept columns.
    let mut tmp = vec![0.0f32; nw * h];
    for y in 0..h {
        let row = &d[y * w..(y + 1) * w];
        for nx in 0..nw {
            let x = (2 * nx) as isize;
            let mut acc = 0.0;
            for (k, g) in GAUSS5.iter().enumerate() {
                acc += g * row[cx(x + k as isize - 2)];
            }
            tmp[y * nw + nx] = acc;
        }
    }
    let mut out = vec![0.0f32; nw * nh];
    for ny in 0..nh {
        let y = (2 * ny) as isize;
        for nx in 0..nw {
            let mut acc = 0.0;
            for (k, g) in GAUSS5.iter().enumerate() {
                acc += g * tmp[cy(y + k as isize - 2) * nw + nx];
            }
            out[ny * nw + nx] = acc;
        }
    }
    GrayImage::from_raw(nw, nh, out)
}
