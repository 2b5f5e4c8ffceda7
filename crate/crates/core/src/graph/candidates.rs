use std::sync::atomic::{AtomicU64, Ordering};

use log::debug;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{AlignmentGraph, CandidateEdge, GraphConfig, GraphStage, NeighborhoodGraph};
use crate::types::{CoordinateSet, GrayImage, Translation2D};
use crate::vision::{extract_templates, shi_tomasi, CornerParams, MatchResult, NccTarget, Template, TemplateParams};

/// Templates cut around the frame's corner clusters.
pub fn frame_templates(frame: &GrayImage, cfg: &GraphConfig) -> Result<Vec<Template>> {
    let corners = shi_tomasi(
        frame,
        &CornerParams {
            max_corners: cfg.template_corners,
            quality: cfg.corner_quality,
            min_distance: cfg.template_corner_spacing,
        },
    )?;
    Ok(extract_templates(
        frame,
        &corners,
        &TemplateParams {
            dilation_radius: cfg.dilation_radius,
            max_templates: cfg.max_templates,
            min_size: cfg.template_min_size,
            max_size: cfg.template_max_size,
        },
    ))
}

fn better(a: Option<MatchResult>, b: Option<MatchResult>) -> Option<MatchResult> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.correlation > x.correlation { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Template matches of every template of `u` inside `v`, for every ordered
/// pair of the neighborhood graph.
///
/// With a prior the search is a window of `search_radius` around the prior
/// offset. When that window yields nothing above `min_weight`,
/// `full_search_fallback` is set and the prior has the two frames
/// overlapping, the whole frame is searched. Without a prior every search
/// covers the whole frame.
pub fn propose_candidates(
    frames: &[&GrayImage],
    graph: &NeighborhoodGraph,
    cfg: &GraphConfig,
    prior: Option<&CoordinateSet>,
) -> Result<AlignmentGraph> {
    let n = frames.len();
    if graph.len() != n {
        return Err(Error::LengthMismatch {
            what: "neighborhood nodes",
            expected: n,
            found: graph.len(),
        });
    }
    if let Some(p) = prior {
        if p.len() != n {
            return Err(Error::LengthMismatch {
                what: "prior coordinates",
                expected: n,
                found: p.len(),
            });
        }
    }
    let templates: Vec<Vec<Template>> = frames
        .par_iter()
        .map(|f| frame_templates(f, cfg))
        .collect::<Result<_>>()?;
    for (u, t) in templates.iter().enumerate() {
        if t.is_empty() && !graph.neighbors(u).is_empty() {
            debug!("frame {u}: no templates, no outgoing candidates");
        }
    }
    let need_pyramid = prior.is_none() || cfg.full_search_fallback;
    let targets: Vec<NccTarget> = frames
        .par_iter()
        .map(|f| {
            if need_pyramid {
                NccTarget::with_pyramid(f)
            } else {
                NccTarget::new(f)
            }
        })
        .collect();

    let counter = AtomicU64::new(0);
    let pairs = graph.directed_pairs();
    let per_pair: Vec<Vec<CandidateEdge>> = pairs
        .par_iter()
        .map(|&(u, v)| {
            counter.fetch_add(1, Ordering::Relaxed);
            let target = &targets[v];
            templates[u]
                .iter()
                .filter_map(|t| {
                    let m = match prior {
                        Some(p) => {
                            let center: Translation2D = p[v] - p[u];
                            let w = target.match_window(t, center, cfg.search_radius, cfg.subpixel);
                            let overlaps = center.dx.abs() < target.width() as f64
                                && center.dy.abs() < target.height() as f64;
                            if cfg.full_search_fallback
                                && overlaps
                                && w.is_none_or(|m| m.correlation < cfg.min_weight)
                            {
                                better(w, target.match_full(t, cfg.subpixel))
                            } else {
                                w
                            }
                        }
                        None => target.match_full(t, cfg.subpixel),
                    }?;
                    (m.correlation.is_finite() && m.translation.is_finite()).then_some(CandidateEdge {
                        src: u,
                        dst: v,
                        translation: m.translation,
                        weight: m.correlation,
                    })
                })
                .collect()
        })
        .collect();

    Ok(AlignmentGraph {
        stage: GraphStage::Multigraph,
        n_nodes: n,
        edges: per_pair.into_iter().flatten().collect(),
        comparisons_made: counter.into_inner(),
    })
}
