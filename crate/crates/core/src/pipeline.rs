//! End-to-end runs of the five compared methods.

use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::graph::{run_pure_graph, run_stage_two, AlignmentGraph, GraphConfig};
use crate::metrics::{evaluate, MetricReport, StepPair};
use crate::pairwise::{retained_indices, run_stage_one, ApproxStitch, LkPairParams, PairEstimate, PairwiseEstimator};
use crate::simulator::{plan_scan, render_scan, ScanPlan, SimConfig};
use crate::types::{CoordinateSet, FrameSequence, GrayImage, Translation2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lk,
    External,
    PureGraph,
    GloflowLk,
    GloflowExternal,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Lk,
        Method::External,
        Method::PureGraph,
        Method::GloflowLk,
        Method::GloflowExternal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lk => "lk",
            Method::External => "external",
            Method::PureGraph => "pure-graph",
            Method::GloflowLk => "gloflow-lk",
            Method::GloflowExternal => "gloflow-external",
        }
    }

    /// Whether the method produces per-pair steps (and so a pairwise EPE).
    pub fn is_pairwise(self) -> bool {
        matches!(self, Method::Lk | Method::External)
    }

    pub fn needs_flows(self) -> bool {
        matches!(self, Method::External | Method::GloflowExternal)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub method: Method,
    /// Original frame index of every output coordinate.
    pub retained: Vec<usize>,
    pub coords: CoordinateSet,
    /// Stage-one steps, present for pairwise methods.
    pub steps: Option<Vec<Translation2D>>,
    pub graph: Option<AlignmentGraph>,
    pub comparisons_made: u64,
    pub wall_time_s: f64,
}

impl MethodOutput {
    /// Scores the output against full-sequence ground truth.
    pub fn evaluate(&self, truth_coords: &CoordinateSet) -> Result<MetricReport> {
        if let Some(&last) = self.retained.last() {
            if last >= truth_coords.len() {
                return Err(Error::LengthMismatch {
                    what: "truth coordinates",
                    expected: last + 1,
                    found: truth_coords.len(),
                });
            }
        }
        let truth = truth_coords.select(&self.retained);
        let truth_steps = truth.steps();
        let steps = self.steps.as_deref().map(|pred| StepPair {
            pred,
            truth: &truth_steps,
        });
        evaluate(
            self.method.name(),
            &self.coords,
            &truth,
            steps,
            self.comparisons_made,
            self.wall_time_s,
        )
    }
}

/// Inputs shared by every method.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub stride: usize,
    pub lk: LkPairParams,
    pub graph: GraphConfig,
    /// Flow predictions for the external methods, one per retained pair.
    pub flows: Option<Vec<PairEstimate>>,
}

fn stage_one(frames: &[GrayImage], method: Method, opts: &RunOptions) -> Result<ApproxStitch> {
    let estimator = if method.needs_flows() {
        PairwiseEstimator::External(
            opts.flows
                .clone()
                .ok_or_else(|| Error::validation(format!("method {method} needs a flow file")))?,
        )
    } else {
        PairwiseEstimator::Lk(opts.lk)
    };
    run_stage_one(frames, &estimator, opts.stride)
}

pub fn run_method(frames: &[GrayImage], method: Method, opts: &RunOptions) -> Result<MethodOutput> {
    let start = Instant::now();
    let (retained, coords, steps, graph) = match method {
        Method::Lk | Method::External => {
            let a = stage_one(frames, method, opts)?;
            (a.retained, a.coords, Some(a.steps), None)
        }
        Method::GloflowLk | Method::GloflowExternal => {
            let a = stage_one(frames, method, opts)?;
            let out = run_stage_two(frames, &a, &opts.graph)?;
            (a.retained, out.coords, None, Some(out.graph))
        }
        Method::PureGraph => {
            if opts.stride == 0 {
                return Err(Error::validation("stride must be at least 1"));
            }
            let retained = retained_indices(frames.len(), opts.stride);
            let nodes: Vec<&GrayImage> = retained.iter().map(|&i| &frames[i]).collect();
            let out = run_pure_graph(&nodes, &opts.graph)?;
            (retained, out.coords, None, Some(out.graph))
        }
    };
    let comparisons_made = match (&graph, &steps) {
        (Some(g), _) => g.comparisons_made,
        (None, Some(s)) => s.len() as u64,
        (None, None) => 0,
    };
    Ok(MethodOutput {
        method,
        retained,
        coords,
        steps,
        graph,
        comparisons_made,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Plans and renders one scan over `source`.
pub fn simulate(source: &GrayImage, source_id: &str, cfg: &SimConfig) -> Result<(FrameSequence, ScanPlan)> {
    let plan = plan_scan(source.width(), source.height(), cfg)?;
    let seq = render_scan(source, &plan.steps, cfg, source_id)?;
    Ok((seq, plan))
}

/// Area fraction shared by two `w x h` frames offset by `t`.
pub fn overlap_fraction(t: Translation2D, w: usize, h: usize) -> f64 {
    let ox = (w as f64 - t.dx.abs()).max(0.0);
    let oy = (h as f64 - t.dy.abs()).max(0.0);
    ox * oy / (w * h) as f64
}

/// Largest stride up to `max_stride` at which every consecutive pair of
/// retained frames still overlaps by at least `min_overlap`.
pub fn choose_stride(truth: &CoordinateSet, w: usize, h: usize, max_stride: usize, min_overlap: f64) -> usize {
    (1..=max_stride.max(1))
        .rev()
        .find(|&s| {
            let r = retained_indices(truth.len(), s);
            r.len() >= 2
                && r.windows(2)
                    .all(|p| overlap_fraction(truth[p[1]] - truth[p[0]], w, h) >= min_overlap)
        })
        .unwrap_or(1)
}
