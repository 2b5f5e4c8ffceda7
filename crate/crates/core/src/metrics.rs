//! Endpoint error and re-centered endpoint error.
//!
//! Both use the mean per-frame Euclidean distance. Re-EPE averages the EPE
//! obtained after translating both coordinate sets so that frame `i` sits at
//! the origin, for every `i`; a shared global offset therefore cancels.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CoordinateSet, Point2, Translation2D};

/// Anything that can be viewed as a list of 2-vectors.
pub trait Vectors {
    fn vectors(&self) -> Vec<(f64, f64)>;
}

impl Vectors for CoordinateSet {
    fn vectors(&self) -> Vec<(f64, f64)> {
        self.coords.iter().map(|p| (p.x, p.y)).collect()
    }
}

impl Vectors for [Translation2D] {
    fn vectors(&self) -> Vec<(f64, f64)> {
        self.iter().map(|t| (t.dx, t.dy)).collect()
    }
}

impl Vectors for Vec<Translation2D> {
    fn vectors(&self) -> Vec<(f64, f64)> {
        self.as_slice().vectors()
    }
}

impl Vectors for [Point2] {
    fn vectors(&self) -> Vec<(f64, f64)> {
        self.iter().map(|p| (p.x, p.y)).collect()
    }
}

fn check_lengths(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch {
            what,
            expected: b,
            found: a,
        });
    }
    if a == 0 {
        return Err(Error::validation(format!("{what}: empty input")));
    }
    Ok(())
}

/// Pairwise summation keeps the reduction order fixed and the error small.
fn tree_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => tree_sum(&v[..n / 2]) + tree_sum(&v[n / 2..]),
    }
}

/// Mean Euclidean distance between corresponding vectors.
pub fn epe<P: Vectors + ?Sized, T: Vectors + ?Sized>(pred: &P, truth: &T) -> Result<f64> {
    let p = pred.vectors();
    let t = truth.vectors();
    check_lengths("EPE operands", p.len(), t.len())?;
    let d: Vec<f64> = p
        .iter()
        .zip(&t)
        .map(|(a, b)| (a.0 - b.0).hypot(a.1 - b.1))
        .collect();
    Ok(tree_sum(&d) / d.len() as f64)
}

/// Re-centered EPE, evaluated directly in `O(N^2)`.
pub fn re_epe(pred: &CoordinateSet, truth: &CoordinateSet) -> Result<f64> {
    check_lengths("Re-EPE operands", pred.len(), truth.len())?;
    // Recentering at i leaves the per-frame difference P[j] - T[j] - (P[i] - T[i]).
    let diff: Vec<(f64, f64)> = pred
        .coords
        .iter()
        .zip(&truth.coords)
        .map(|(p, t)| (p.x - t.x, p.y - t.y))
        .collect();
    let n = diff.len();
    let per_center: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (cx, cy) = diff[i];
            let d: Vec<f64> = diff.iter().map(|&(x, y)| (x - cx).hypot(y - cy)).collect();
            tree_sum(&d) / n as f64
        })
        .collect();
    Ok(tree_sum(&per_center) / n as f64)
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub n_frames: usize,
    /// Mean per-pair step error; absent for methods without pairwise steps.
    pub epe_pairwise: Option<f64>,
    pub re_epe: f64,
    pub comparisons_made: u64,
    pub wall_time_s: f64,
}

pub const REPORT_HEADER: &str = "method,n_frames,epe,re_epe,comparisons,wall_time_s";

impl MetricReport {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(s, "{},{},", self.method, self.n_frames).unwrap();
        if let Some(e) = self.epe_pairwise {
            write!(s, "{e:.6}").unwrap();
        }
        write!(
            s,
            ",{:.6},{},{:.2}",
            self.re_epe, self.comparisons_made, self.wall_time_s
        )
        .unwrap();
        s
    }
}

/// Optional step lists for the pairwise EPE column.
pub struct StepPair<'a> {
    pub pred: &'a [Translation2D],
    pub truth: &'a [Translation2D],
}

pub fn evaluate(
    method: &str,
    pred_coords: &CoordinateSet,
    truth: &CoordinateSet,
    steps: Option<StepPair<'_>>,
    comparisons_made: u64,
    wall_time_s: f64,
) -> Result<MetricReport> {
    let re = re_epe(pred_coords, truth)?;
    let epe_pairwise = match steps {
        Some(s) => Some(epe(s.pred, s.truth)?),
        None => None,
    };
    Ok(MetricReport {
        method: method.to_string(),
        n_frames: pred_coords.len(),
        epe_pairwise,
        re_epe: re,
        comparisons_made,
        wall_time_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn cs(v: &[(f64, f64)]) -> CoordinateSet {
        CoordinateSet::new(v.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    /// Literal reading of the definition: recenter both sets, take the mean
    /// distance, average over centers. Plain loops, no shared code.
    fn brute_re_epe(p: &CoordinateSet, t: &CoordinateSet) -> f64 {
        let n = p.len();
        let mut outer = 0.0;
        for i in 0..n {
            let mut inner = 0.0;
            for j in 0..n {
                let px = p.coords[j].x - p.coords[i].x;
                let py = p.coords[j].y - p.coords[i].y;
                let tx = t.coords[j].x - t.coords[i].x;
                let ty = t.coords[j].y - t.coords[i].y;
                inner += ((px - tx) * (px - tx) + (py - ty) * (py - ty)).sqrt();
            }
            outer += inner / n as f64;
        }
        outer / n as f64
    }

    fn random_set(rng: &mut crate::types::Rng, n: usize, span: f64) -> CoordinateSet {
        cs(&(0..n)
            .map(|_| (rng.random_range(-span..span), rng.random_range(-span..span)))
            .collect::<Vec<_>>())
    }

    #[test]
    fn epe_examples() {
        let t = cs(&[(0.0, 0.0), (10.0, 2.0), (-4.0, 7.5)]);
        assert_eq!(epe(&t, &t).unwrap(), 0.0);
        let p = cs(&[(3.0, 4.0), (13.0, 6.0), (-1.0, 11.5)]);
        assert!((epe(&p, &t).unwrap() - 5.0).abs() < 1e-12);
        assert!(epe(&p, &cs(&[(0.0, 0.0)])).is_err());
    }

    #[test]
    fn epe_matches_loop_oracle() {
        let mut rng = crate::types::rng_from_seed(1);
        let p = random_set(&mut rng, 50, 100.0);
        let t = random_set(&mut rng, 50, 100.0);
        let mut acc = 0.0;
        for j in 0..50 {
            let dx = p.coords[j].x - t.coords[j].x;
            let dy = p.coords[j].y - t.coords[j].y;
            acc += (dx * dx + dy * dy).sqrt();
        }
        assert!((epe(&p, &t).unwrap() - acc / 50.0).abs() < 1e-12);
    }

    #[test]
    fn re_epe_examples() {
        let t = cs(&[(0.0, 0.0), (10.0, 2.0), (-4.0, 7.5), (8.0, 8.0)]);
        assert_eq!(re_epe(&t, &t).unwrap(), 0.0);
        let shifted = cs(&[(100.5, -3.0), (110.5, -1.0), (96.5, 4.5), (108.5, 5.0)]);
        assert!(re_epe(&shifted, &t).unwrap().abs() < 1e-12);
        assert!(re_epe(&t, &cs(&[(0.0, 0.0)])).is_err());
    }

    #[test]
    fn single_displaced_frame_closed_form() {
        // With one frame off by (d, 0), every center other than that frame
        // sees one error of d; the displaced center sees N - 1 errors of d.
        // Total: (N - 1) d / N for the others and (N - 1) d / N for itself,
        // giving 2 (N - 1) d / N^2.
        let n = 37;
        let d = 6.5;
        let mut rng = crate::types::rng_from_seed(9);
        let t = random_set(&mut rng, n, 500.0);
        let mut p = t.clone();
        p.coords[11].x += d;
        let closed = 2.0 * (n as f64 - 1.0) * d / (n * n) as f64;
        let brute = brute_re_epe(&p, &t);
        assert!((brute - closed).abs() < 1e-9);
        assert!((re_epe(&p, &t).unwrap() - brute).abs() < 1e-9);
    }

    #[test]
    fn report_row_format() {
        let t = cs(&[(0.0, 0.0), (1.0, 0.0)]);
        let steps = t.steps();
        let r = evaluate("lk", &t, &t, Some(StepPair { pred: &steps, truth: &steps }), 0, 1.234).unwrap();
        assert_eq!(r.csv_row(), "lk,2,0.000000,0.000000,0,1.23");
        let g = evaluate("pure-graph", &t, &t, None, 2, 0.0).unwrap();
        assert_eq!(g.csv_row(), "pure-graph,2,,0.000000,2,0.00");
        assert_eq!(REPORT_HEADER.split(',').count(), g.csv_row().split(',').count());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn re_epe_properties(seed in 0u64..10_000, n in 1usize..60, cx in -1e4f64..1e4, cy in -1e4f64..1e4) {
            let mut rng = crate::types::rng_from_seed(seed);
            let p = random_set(&mut rng, n, 300.0);
            let t = random_set(&mut rng, n, 300.0);
            let base = re_epe(&p, &t).unwrap();
            prop_assert!((base - brute_re_epe(&p, &t)).abs() <= 1e-9);
            let moved = cs(&p.coords.iter().map(|q| (q.x + cx, q.y + cy)).collect::<Vec<_>>());
            prop_assert!((re_epe(&moved, &t).unwrap() - base).abs() <= 1e-9);
            let moved_t = cs(&t.coords.iter().map(|q| (q.x + cx, q.y + cy)).collect::<Vec<_>>());
            prop_assert!((re_epe(&p, &moved_t).unwrap() - base).abs() <= 1e-9);
            prop_assert!((re_epe(&t, &p).unwrap() - base).abs() <= 1e-9);
        }

        #[test]
        fn epe_triangle(seed in 0u64..10_000, n in 1usize..40) {
            let mut rng = crate::types::rng_from_seed(seed);
            let p = random_set(&mut rng, n, 50.0);
            let q = random_set(&mut rng, n, 50.0);
            let t = random_set(&mut rng, n, 50.0);
            prop_assert!(epe(&p, &t).unwrap() <= epe(&p, &q).unwrap() + epe(&q, &t).unwrap() + 1e-12);
        }
    }
}
