//! Stage two: neighborhood-graph refinement of an approximate stitch.
//!
//! Frames whose approximate positions lie within a radius of each other are
//! linked. For every linked ordered pair, templates cut around corner
//! clusters of the source frame are located in the destination frame by
//! ZNCC, giving a multigraph of candidate translations. The multigraph is
//! pruned to one translation per ordered pair, reduced to forward/backward
//! consistent undirected edges, and the final coordinates are the weighted
//! least-squares solution over those edges.
//!
//! [`run_pure_graph`] is the same machinery over all frame pairs with no
//! prior, searching each destination frame exhaustively.

mod candidates;
mod neighborhood;
mod prune;
mod solve;

use serde::{Deserialize, Serialize};

pub use candidates::{frame_templates, propose_candidates};
pub use neighborhood::{build_neighborhood, NeighborhoodGraph};
pub use prune::{enforce_consistency, prune_multigraph};
pub use solve::{solve_coordinates, CG_TOLERANCE};

use crate::error::{Error, Result};
use crate::io::EdgeRow;
use crate::pairwise::ApproxStitch;
use crate::types::{CoordinateSet, GrayImage, Translation2D};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEdge {
    pub src: usize,
    pub dst: usize,
    /// `dst` origin minus `src` origin.
    pub translation: Translation2D,
    /// ZNCC score of the match.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphStage {
    Multigraph,
    DirectedPruned,
    UndirectedConsistent,
}

impl GraphStage {
    pub fn name(self) -> &'static str {
        match self {
            GraphStage::Multigraph => "multigraph",
            GraphStage::DirectedPruned => "directed",
            GraphStage::UndirectedConsistent => "consistent",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGraph {
    pub stage: GraphStage,
    pub n_nodes: usize,
    pub edges: Vec<CandidateEdge>,
    /// Ordered frame pairs that went through template matching.
    pub comparisons_made: u64,
}

impl AlignmentGraph {
    /// Edge rows for the diagnostic dump, with node ids mapped through
    /// `labels` (original frame indices).
    pub fn edge_rows(&self, labels: &[usize]) -> Vec<EdgeRow> {
        self.edges
            .iter()
            .map(|e| EdgeRow {
                src: labels[e.src],
                dst: labels[e.dst],
                translation: e.translation,
                weight: e.weight,
                stage: self.stage.name(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    /// Neighborhood radius in frame widths.
    pub radius_factor: f64,
    /// Half-width of the windowed search around the prior, in pixels.
    pub search_radius: usize,
    /// L-infinity distance under which candidate translations are merged.
    pub translation_merge_tol: f64,
    pub min_weight: f64,
    pub consistency_tol: f64,
    pub min_edges_per_node: usize,
    /// Extra weight demanded of an edge measured in one direction only.
    pub solo_margin: f64,
    /// Retry a failed windowed match over the whole destination frame.
    pub full_search_fallback: bool,
    /// Parabolic sub-pixel refinement of match peaks.
    pub subpixel: bool,
    pub template_corners: usize,
    pub template_corner_spacing: f64,
    pub corner_quality: f32,
    pub dilation_radius: usize,
    pub max_templates: usize,
    pub template_min_size: usize,
    pub template_max_size: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            radius_factor: 2.0,
            search_radius: 40,
            translation_merge_tol: 3.0,
            min_weight: 0.65,
            consistency_tol: 4.0,
            min_edges_per_node: 1,
            solo_margin: 0.15,
            full_search_fallback: true,
            subpixel: true,
            template_corners: 24,
            template_corner_spacing: 72.0,
            corner_quality: 0.01,
            dilation_radius: 32,
            max_templates: 8,
            template_min_size: 16,
            template_max_size: 128,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("radius_factor", self.radius_factor),
            ("translation_merge_tol", self.translation_merge_tol),
            ("consistency_tol", self.consistency_tol),
            ("template_corner_spacing", self.template_corner_spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.min_weight > 0.0 && self.min_weight <= 1.0) {
            return Err(Error::validation(format!(
                "min_weight must be in (0, 1], got {}",
                self.min_weight
            )));
        }
        if self.solo_margin.is_nan() || self.solo_margin < 0.0 {
            return Err(Error::validation("solo_margin must be non-negative"));
        }
        if self.search_radius == 0 || self.template_corners == 0 || self.max_templates == 0 {
            return Err(Error::validation(
                "search_radius, template_corners and max_templates must be positive",
            ));
        }
        if self.template_min_size == 0 || self.template_min_size > self.template_max_size {
            return Err(Error::validation("template size bounds are inverted or zero"));
        }
        if !(self.corner_quality > 0.0 && self.corner_quality <= 1.0) {
            return Err(Error::validation("corner_quality must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Final coordinates and the consistent graph they were solved from.
#[derive(Debug, Clone)]
pub struct StageTwoOutput {
    pub coords: CoordinateSet,
    pub graph: AlignmentGraph,
    /// Edge counts after matching, pruning and the consistency check.
    pub edge_counts: [usize; 3],
}

fn check_frames(frames: &[&GrayImage]) -> Result<()> {
    if frames.len() < 2 {
        return Err(Error::validation("stage two needs at least 2 frames"));
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    if frames.iter().any(|f| f.width() != w || f.height() != h) {
        return Err(Error::validation("all frames must share one size"));
    }
    Ok(())
}

fn refine(
    frames: &[&GrayImage],
    graph: &NeighborhoodGraph,
    prior: Option<&CoordinateSet>,
    fallback: &CoordinateSet,
    cfg: &GraphConfig,
) -> Result<StageTwoOutput> {
    let mg = propose_candidates(frames, graph, cfg, prior)?;
    let n_mg = mg.edges.len();
    let dg = prune_multigraph(&mg, cfg)?;
    let n_dg = dg.edges.len();
    let ug = enforce_consistency(&dg, cfg)?;
    log::info!(
        "stage two: {} comparisons, {n_mg} candidates, {n_dg} directed, {} consistent edges",
        ug.comparisons_made,
        ug.edges.len()
    );
    let coords = solve_coordinates(&ug, frames.len(), fallback)?;
    Ok(StageTwoOutput {
        coords,
        edge_counts: [n_mg, n_dg, ug.edges.len()],
        graph: ug,
    })
}

/// Refines `approx` over the frames it retained. `frames` is the full
/// sequence; `approx.retained` selects the nodes.
pub fn run_stage_two(frames: &[GrayImage], approx: &ApproxStitch, cfg: &GraphConfig) -> Result<StageTwoOutput> {
    cfg.validate()?;
    if approx.retained.len() != approx.coords.len() {
        return Err(Error::LengthMismatch {
            what: "retained frame indices",
            expected: approx.coords.len(),
            found: approx.retained.len(),
        });
    }
    let nodes = approx
        .retained
        .iter()
        .map(|&i| {
            frames
                .get(i)
                .ok_or_else(|| Error::validation(format!("retained frame {i} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    check_frames(&nodes)?;
    let graph = build_neighborhood(&approx.coords, nodes[0].width(), cfg)?;
    refine(&nodes, &graph, Some(&approx.coords), &approx.coords, cfg)
}

/// All-pairs baseline: every ordered pair is matched by exhaustive search,
/// with no prior. Isolated frames fall back to the origin.
pub fn run_pure_graph(frames: &[&GrayImage], cfg: &GraphConfig) -> Result<StageTwoOutput> {
    cfg.validate()?;
    check_frames(frames)?;
    let graph = NeighborhoodGraph::complete(frames.len());
    refine(frames, &graph, None, &CoordinateSet::zeros(frames.len()), cfg)
}
