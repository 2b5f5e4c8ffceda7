//! Stage one: one translation per consecutive retained frame pair, composed
//! into an approximate stitch.
//!
//! Two estimators exist. Lucas-Kanade tracks Shi-Tomasi corners from one
//! frame into the next and reduces the point flows to a single translation by
//! componentwise median, since the whole frame moves rigidly. The external
//! estimator replays predictions produced elsewhere (for example a learned
//! regressor) from a flow file.

use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::read_flow_file;
use crate::types::{compose_coords, CoordinateSet, GrayImage, Translation2D};
use crate::vision::{build_pyramid, lk_track, shi_tomasi, CornerParams, LkParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkPairParams {
    pub corners: CornerParams,
    pub lk: LkParams,
    /// Points within this distance of the median count as inliers.
    pub inlier_radius: f64,
    /// Fewer converged points than this yields the zero fallback.
    pub min_points: usize,
    /// With a stride above one, track every intermediate frame pair and sum
    /// the steps instead of tracking the retained pair directly.
    pub chain_intermediate: bool,
}

impl Default for LkPairParams {
    /// A hundred points is ample for a median; five pyramid levels keep
    /// steps of up to about 50 px inside the tracker's reach.
    fn default() -> Self {
        Self {
            corners: CornerParams {
                max_corners: 100,
                ..CornerParams::default()
            },
            lk: LkParams {
                levels: 5,
                ..LkParams::default()
            },
            inlier_radius: 1.5,
            min_points: 4,
            chain_intermediate: false,
        }
    }
}

/// A translation estimate with a confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEstimate {
    pub translation: Translation2D,
    pub confidence: f64,
}

impl PairEstimate {
    pub const FAILED: PairEstimate = PairEstimate {
        translation: Translation2D::ZERO,
        confidence: 0.0,
    };
}

#[derive(Debug, Clone)]
pub enum PairwiseEstimator {
    Lk(LkPairParams),
    /// Precomputed predictions, one per retained pair.
    External(Vec<PairEstimate>),
}

impl PairwiseEstimator {
    pub fn from_flow_file(path: impl AsRef<Path>, expected_pairs: Option<usize>) -> Result<Self> {
        Ok(PairwiseEstimator::External(load_external_flows(path, expected_pairs)?))
    }
}

fn lk_or_failed(frames: &[GrayImage], a: usize, b: usize, params: &LkPairParams) -> PairEstimate {
    estimate_pair_lk(&frames[a], &frames[b], params).unwrap_or_else(|err| {
        warn!("pair {a}->{b}: {err}; using zero step");
        PairEstimate::FAILED
    })
}

/// Adapts predictions to `stride` over an `n_frames` sequence. A list with
/// one entry per retained pair is returned as is; a list with one entry per
/// original pair is summed over each stride window, keeping the smallest
/// confidence.
pub fn flows_at_stride(preds: &[PairEstimate], n_frames: usize, stride: usize) -> Result<Vec<PairEstimate>> {
    if stride == 0 {
        return Err(Error::validation("stride must be at least 1"));
    }
    let retained = retained_indices(n_frames, stride);
    let pairs = retained.len().saturating_sub(1);
    if preds.len() == pairs {
        return Ok(preds.to_vec());
    }
    if preds.len() != n_frames.saturating_sub(1) {
        return Err(Error::LengthMismatch {
            what: "external flow predictions",
            expected: pairs,
            found: preds.len(),
        });
    }
    Ok(retained
        .windows(2)
        .map(|w| {
            let chunk = &preds[w[0]..w[1]];
            PairEstimate {
                translation: chunk
                    .iter()
                    .fold(Translation2D::ZERO, |acc, e| acc + e.translation),
                confidence: chunk.iter().map(|e| e.confidence).fold(1.0, f64::min),
            }
        })
        .collect())
}

/// Result of stage one over the retained frames.
#[derive(Debug, Clone)]
pub struct ApproxStitch {
    pub coords: CoordinateSet,
    pub steps: Vec<Translation2D>,
    pub per_step_confidence: Vec<f64>,
    /// Original frame index of every retained frame.
    pub retained: Vec<usize>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Componentwise median of point flows and the fraction of flows within
/// `inlier_radius` of it.
pub fn aggregate_flows(flows: &[Translation2D], inlier_radius: f64) -> Option<(Translation2D, f64)> {
    if flows.is_empty() {
        return None;
    }
    let mut xs: Vec<f64> = flows.iter().map(|f| f.dx).collect();
    let mut ys: Vec<f64> = flows.iter().map(|f| f.dy).collect();
    let m = Translation2D::new(median(&mut xs), median(&mut ys));
    let inliers = flows.iter().filter(|f| (**f - m).norm() <= inlier_radius).count();
    Some((m, inliers as f64 / flows.len() as f64))
}

/// Frame-to-frame translation (`next` origin minus `prev` origin) by
/// Lucas-Kanade. Falls back to zero with confidence 0 when fewer than
/// `min_points` corners converge.
pub fn estimate_pair_lk(prev: &GrayImage, next: &GrayImage, params: &LkPairParams) -> Result<PairEstimate> {
    if prev.width() != next.width() || prev.height() != next.height() {
        return Err(Error::validation(format!(
            "frame size mismatch: {}x{} vs {}x{}",
            prev.width(),
            prev.height(),
            next.width(),
            next.height()
        )));
    }
    let corners = shi_tomasi(prev, &params.corners)?;
    if corners.len() < params.min_points {
        return Ok(PairEstimate::FAILED);
    }
    let levels = params
        .lk
        .levels
        .min(crate::vision::pyramid::max_levels(prev.width(), prev.height()))
        .max(1);
    let pp = build_pyramid(prev, levels)?;
    let pn = build_pyramid(next, levels)?;
    let tracks = lk_track(&pp, &pn, &corners, &params.lk)?;
    // Content motion is the negative of the camera (frame origin) motion.
    let flows: Vec<Translation2D> = tracks.iter().filter(|t| t.converged).map(|t| -t.flow).collect();
    if flows.len() < params.min_points {
        return Ok(PairEstimate::FAILED);
    }
    let (translation, confidence) = aggregate_flows(&flows, params.inlier_radius).expect("non-empty");
    Ok(PairEstimate {
        translation,
        confidence,
    })
}

/// Reads a flow file (`index,dx,dy[,confidence]`). When `expected_pairs` is
/// given the row count must match it.
pub fn load_external_flows(path: impl AsRef<Path>, expected_pairs: Option<usize>) -> Result<Vec<PairEstimate>> {
    let rows = read_flow_file(path.as_ref())?;
    if let Some(n) = expected_pairs {
        if rows.len() != n {
            return Err(Error::LengthMismatch {
                what: "flow file rows",
                expected: n,
                found: rows.len(),
            });
        }
    }
    Ok(rows
        .into_iter()
        .map(|(translation, confidence)| PairEstimate {
            translation,
            confidence,
        })
        .collect())
}

/// Indices `0, stride, 2*stride, ...` below `n`.
pub fn retained_indices(n: usize, stride: usize) -> Vec<usize> {
    (0..n).step_by(stride.max(1)).collect()
}

/// Runs stage one over `frames` keeping every `stride`-th frame.
///
/// The LK estimator tracks each consecutive retained pair directly, unless
/// `chain_intermediate` is set, in which case the step is the sum over every
/// original pair in between and its confidence the minimum of theirs. A
/// failed estimate contributes a zero step with confidence 0.
pub fn run_stage_one(frames: &[GrayImage], estimator: &PairwiseEstimator, stride: usize) -> Result<ApproxStitch> {
    if stride == 0 {
        return Err(Error::validation("stride must be at least 1"));
    }
    let retained = retained_indices(frames.len(), stride);
    if retained.len() < 2 {
        return Err(Error::validation(format!(
            "{} frames at stride {stride} leave fewer than 2 retained frames",
            frames.len()
        )));
    }
    let pairs = retained.len() - 1;
    let estimates: Vec<PairEstimate> = match estimator {
        PairwiseEstimator::External(preds) => {
            if preds.len() != pairs {
                return Err(Error::LengthMismatch {
                    what: "external flow predictions",
                    expected: pairs,
                    found: preds.len(),
                });
            }
            preds.clone()
        }
        PairwiseEstimator::Lk(params) if params.chain_intermediate => {
            let last = *retained.last().unwrap();
            let single: Vec<PairEstimate> = (0..last)
                .into_par_iter()
                .map(|i| lk_or_failed(frames, i, i + 1, params))
                .collect();
            retained
                .windows(2)
                .map(|w| {
                    let chunk = &single[w[0]..w[1]];
                    PairEstimate {
                        translation: chunk
                            .iter()
                            .fold(Translation2D::ZERO, |acc, e| acc + e.translation),
                        confidence: chunk.iter().map(|e| e.confidence).fold(1.0, f64::min),
                    }
                })
                .collect()
        }
        PairwiseEstimator::Lk(params) => retained
            .par_windows(2)
            .map(|w| lk_or_failed(frames, w[0], w[1], params))
            .collect(),
    };
    let failed = estimates.iter().filter(|e| e.confidence == 0.0).count();
    if failed > 0 {
        warn!("stage one: {failed} of {pairs} retained steps have zero confidence");
    }
    let steps: Vec<Translation2D> = estimates.iter().map(|e| e.translation).collect();
    let coords = compose_coords(&steps)?;
    Ok(ApproxStitch {
        coords,
        steps,
        per_step_confidence: estimates.iter().map(|e| e.confidence.clamp(0.0, 1.0)).collect(),
        retained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::synthetic_tissue;
    use proptest::prelude::*;

    #[test]
    fn identical_frames_give_zero() {
        let f = synthetic_tissue(256, 256, 1);
        let e = estimate_pair_lk(&f, &f, &LkPairParams::default()).unwrap();
        assert!(e.translation.norm() <= 0.01);
        assert!(e.confidence >= 0.9);
    }

    #[test]
    fn known_shift_crop_pair() {
        let src = synthetic_tissue(700, 700, 2);
        let prev = src.crop(40, 40, 512, 512).unwrap();
        let next = src.crop(55, 42, 512, 512).unwrap();
        let e = estimate_pair_lk(&prev, &next, &LkPairParams::default()).unwrap();
        assert!((e.translation.dx - 15.0).abs() <= 0.5, "{:?}", e);
        assert!((e.translation.dy - 2.0).abs() <= 0.5, "{:?}", e);
    }

    #[test]
    fn textureless_pair_falls_back() {
        let f = GrayImage::filled(128, 128, 0.5);
        let e = estimate_pair_lk(&f, &f, &LkPairParams::default()).unwrap();
        assert_eq!(e, PairEstimate::FAILED);
    }

    #[test]
    fn size_mismatch_is_error() {
        let a = GrayImage::filled(64, 64, 0.5);
        let b = GrayImage::filled(64, 32, 0.5);
        assert!(estimate_pair_lk(&a, &b, &LkPairParams::default()).is_err());
    }

    #[test]
    fn stride_retention() {
        assert_eq!(retained_indices(401, 20).len(), 21);
        assert_eq!(retained_indices(5, 1), vec![0, 1, 2, 3, 4]);
        assert_eq!(retained_indices(45, 20), vec![0, 20, 40]);
        let frames = vec![GrayImage::filled(16, 16, 0.5); 3];
        let est = PairwiseEstimator::External(vec![]);
        assert!(run_stage_one(&frames, &est, 0).is_err());
        assert!(run_stage_one(&frames, &est, 5).is_err());
    }

    #[test]
    fn zero_estimator_gives_zero_coords() {
        let frames = vec![GrayImage::filled(16, 16, 0.5); 7];
        let est = PairwiseEstimator::External(vec![PairEstimate::FAILED; 3]);
        let a = run_stage_one(&frames, &est, 2).unwrap();
        assert_eq!(a.retained, vec![0, 2, 4, 6]);
        assert_eq!(a.coords, CoordinateSet::zeros(4));
        let wrong = PairwiseEstimator::External(vec![PairEstimate::FAILED; 2]);
        assert!(matches!(
            run_stage_one(&frames, &wrong, 2),
            Err(Error::LengthMismatch { expected: 3, found: 2, .. })
        ));
    }

    #[test]
    fn lk_with_stride_direct_and_chained() {
        let src = synthetic_tissue(420, 300, 6);
        let offsets = [(0usize, 0usize), (9, 1), (17, 3), (26, 2), (33, 5)];
        let frames: Vec<_> = offsets.iter().map(|&(x, y)| src.crop(x, y, 256, 256).unwrap()).collect();
        for chain_intermediate in [false, true] {
            let params = LkPairParams {
                chain_intermediate,
                ..Default::default()
            };
            let a = run_stage_one(&frames, &PairwiseEstimator::Lk(params), 2).unwrap();
            assert_eq!(a.retained, vec![0, 2, 4]);
            assert!((a.coords[1].x - 17.0).abs() < 0.3 && (a.coords[1].y - 3.0).abs() < 0.3);
            assert!((a.coords[2].x - 33.0).abs() < 0.5 && (a.coords[2].y - 5.0).abs() < 0.5);
            assert_eq!(a.coords, compose_coords(&a.steps).unwrap());
        }
    }

    #[test]
    fn flows_collapse_to_stride() {
        let preds: Vec<PairEstimate> = (0..6)
            .map(|i| PairEstimate {
                translation: Translation2D::new(i as f64, 1.0),
                confidence: 1.0 - 0.1 * i as f64,
            })
            .collect();
        let c = flows_at_stride(&preds, 7, 3).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].translation, Translation2D::new(3.0, 3.0));
        assert_eq!(c[1].translation, Translation2D::new(12.0, 3.0));
        assert!((c[1].confidence - 0.5).abs() < 1e-12);
        assert_eq!(flows_at_stride(&c, 7, 3).unwrap(), c);
        assert_eq!(flows_at_stride(&preds, 7, 1).unwrap(), preds);
        assert!(matches!(
            flows_at_stride(&preds[..4], 7, 3),
            Err(Error::LengthMismatch { expected: 2, found: 4, .. })
        ));
    }

    proptest! {
        #[test]
        fn median_resists_minority_outliers(
            truth in (-30.0f64..30.0, -30.0f64..30.0),
            inliers in 6usize..40,
            seed in 0u64..1000,
        ) {
            use rand::Rng as _;
            let mut rng = crate::types::rng_from_seed(seed);
            let t = Translation2D::new(truth.0, truth.1);
            let mut flows: Vec<Translation2D> = (0..inliers)
                .map(|_| t + Translation2D::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)))
                .collect();
            // Up to 49% outliers, arbitrarily far away.
            let outliers = (inliers * 49) / 51;
            for _ in 0..outliers {
                flows.push(Translation2D::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0)));
            }
            let (m, conf) = aggregate_flows(&flows, 1.5).unwrap();
            prop_assert!((m - t).max_abs() <= 0.2 + 1e-12);
            prop_assert!(conf >= inliers as f64 / flows.len() as f64 - 1e-12);
        }
    }
}
