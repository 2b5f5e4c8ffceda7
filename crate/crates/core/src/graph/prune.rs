use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{AlignmentGraph, CandidateEdge, GraphConfig, GraphStage};
use crate::types::Translation2D;

fn expect_stage(g: &AlignmentGraph, stage: GraphStage) -> Result<()> {
    if g.stage != stage {
        return Err(Error::validation(format!(
            "expected a {} graph, got {}",
            stage.name(),
            g.stage.name()
        )));
    }
    Ok(())
}

/// Seeds a cluster with the strongest candidate, absorbs every candidate
/// within `tol` (L-infinity) of it, and returns the cluster's weighted mean
/// translation and maximum weight.
fn best_cluster(cands: &mut [CandidateEdge], tol: f64) -> (Translation2D, f64) {
    cands.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.translation.dx.total_cmp(&b.translation.dx))
            .then(a.translation.dy.total_cmp(&b.translation.dy))
    });
    let seed = cands[0];
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for c in cands.iter() {
        if (c.translation - seed.translation).max_abs() <= tol {
            // Non-positive scores cannot pull the mean.
            let w = c.weight.max(1e-9);
            let d = c.translation - seed.translation;
            sx += w * d.dx;
            sy += w * d.dy;
            sw += w;
        }
    }
    // Offsets from the seed keep a lone candidate bit-identical.
    (seed.translation + Translation2D::new(sx / sw, sy / sw), seed.weight)
}

/// Reduces the candidates of each ordered pair to the representative of its
/// strongest cluster, dropping pairs whose best weight is below `min_weight`.
pub fn prune_multigraph(mg: &AlignmentGraph, cfg: &GraphConfig) -> Result<AlignmentGraph> {
    expect_stage(mg, GraphStage::Multigraph)?;
    let mut groups: BTreeMap<(usize, usize), Vec<CandidateEdge>> = BTreeMap::new();
    for e in &mg.edges {
        groups.entry((e.src, e.dst)).or_default().push(*e);
    }
    let edges = groups
        .into_iter()
        .filter_map(|((src, dst), mut cands)| {
            let (translation, weight) = best_cluster(&mut cands, cfg.translation_merge_tol);
            (weight >= cfg.min_weight).then_some(CandidateEdge {
                src,
                dst,
                translation,
                weight,
            })
        })
        .collect();
    Ok(AlignmentGraph {
        stage: GraphStage::DirectedPruned,
        n_nodes: mg.n_nodes,
        edges,
        comparisons_made: mg.comparisons_made,
    })
}

/// Merges forward and backward measurements into undirected edges stored
/// as `src < dst`.
///
/// A pair measured both ways is kept when the two translations cancel to
/// within `consistency_tol`, as their antisymmetric mean with the smaller
/// weight. A pair measured one way only needs `min_weight + solo_margin`.
/// Afterwards any node with fewer than `min_edges_per_node` edges gets its
/// strongest remaining one-way edges back, provided they clear `min_weight`.
pub fn enforce_consistency(dg: &AlignmentGraph, cfg: &GraphConfig) -> Result<AlignmentGraph> {
    expect_stage(dg, GraphStage::DirectedPruned)?;
    let mut directed: BTreeMap<(usize, usize), CandidateEdge> = BTreeMap::new();
    for e in &dg.edges {
        if directed.insert((e.src, e.dst), *e).is_some() {
            return Err(Error::validation(format!(
                "duplicate directed edge {}->{}",
                e.src, e.dst
            )));
        }
    }
    let mut kept = Vec::new();
    let mut solo_rejects = Vec::new();
    for (&(u, v), &e) in &directed {
        if u == v {
            continue;
        }
        match directed.get(&(v, u)) {
            Some(&r) => {
                if u > v {
                    continue;
                }
                if (e.translation + r.translation).norm() <= cfg.consistency_tol {
                    kept.push(CandidateEdge {
                        src: u,
                        dst: v,
                        translation: (e.translation - r.translation).scale(0.5),
                        weight: e.weight.min(r.weight),
                    });
                }
            }
            None => {
                let oriented = if u < v {
                    e
                } else {
                    CandidateEdge {
                        src: v,
                        dst: u,
                        translation: -e.translation,
                        weight: e.weight,
                    }
                };
                if e.weight >= cfg.min_weight + cfg.solo_margin {
                    kept.push(oriented);
                } else {
                    solo_rejects.push(oriented);
                }
            }
        }
    }

    if cfg.min_edges_per_node > 0 && !solo_rejects.is_empty() {
        let mut degree = vec![0usize; dg.n_nodes];
        for e in &kept {
            degree[e.src] += 1;
            degree[e.dst] += 1;
        }
        solo_rejects.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        for e in solo_rejects {
            let needy = degree[e.src] < cfg.min_edges_per_node || degree[e.dst] < cfg.min_edges_per_node;
            if needy && e.weight >= cfg.min_weight {
                degree[e.src] += 1;
                degree[e.dst] += 1;
                kept.push(e);
            }
        }
        kept.sort_by_key(|e| (e.src, e.dst));
    }

    Ok(AlignmentGraph {
        stage: GraphStage::UndirectedConsistent,
        n_nodes: dg.n_nodes,
        edges: kept,
        comparisons_made: dg.comparisons_made,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(src: usize, dst: usize, dx: f64, dy: f64, w: f64) -> CandidateEdge {
        CandidateEdge {
            src,
            dst,
            translation: Translation2D::new(dx, dy),
            weight: w,
        }
    }

    fn graph(stage: GraphStage, n: usize, edges: Vec<CandidateEdge>) -> AlignmentGraph {
        AlignmentGraph {
            stage,
            n_nodes: n,
            edges,
            comparisons_made: 0,
        }
    }

    #[test]
    fn clusters_greedily_from_strongest() {
        let mg = graph(
            GraphStage::Multigraph,
            2,
            vec![e(0, 1, 40.0, 0.0, 0.7), e(0, 1, 10.0, 5.0, 0.9), e(0, 1, 10.5, 5.2, 0.8)],
        );
        let dg = prune_multigraph(&mg, &GraphConfig::default()).unwrap();
        assert_eq!(dg.edges.len(), 1);
        let t = dg.edges[0].translation;
        assert!((t.dx - (0.9 * 10.0 + 0.8 * 10.5) / 1.7).abs() < 1e-12);
        assert!((t.dy - (0.9 * 5.0 + 0.8 * 5.2) / 1.7).abs() < 1e-12);
        assert!((t.dx - 10.2).abs() < 0.1 && (t.dy - 5.1).abs() < 0.1);
        assert_eq!(dg.edges[0].weight, 0.9);
    }

    #[test]
    fn weak_pairs_dropped_single_passes() {
        let mg = graph(
            GraphStage::Multigraph,
            3,
            vec![e(0, 1, 1.0, 1.0, 0.5), e(0, 1, 30.0, 1.0, 0.5), e(1, 2, 7.0, -3.0, 0.8)],
        );
        let dg = prune_multigraph(&mg, &GraphConfig::default()).unwrap();
        assert_eq!(dg.edges, vec![e(1, 2, 7.0, -3.0, 0.8)]);
        assert!(prune_multigraph(&dg, &GraphConfig::default()).is_err());
    }

    #[test]
    fn consistency_examples() {
        let cfg = GraphConfig::default();
        let dg = graph(
            GraphStage::DirectedPruned,
            2,
            vec![e(0, 1, 10.0, 5.0, 0.9), e(1, 0, -10.5, -4.8, 0.7)],
        );
        let ug = enforce_consistency(&dg, &cfg).unwrap();
        assert_eq!(ug.edges.len(), 1);
        assert!((ug.edges[0].translation - Translation2D::new(10.25, 4.9)).max_abs() < 1e-12);
        assert_eq!(ug.edges[0].weight, 0.7);

        let dg = graph(
            GraphStage::DirectedPruned,
            2,
            vec![e(0, 1, 10.0, 5.0, 0.9), e(1, 0, -30.0, -5.0, 0.9)],
        );
        assert!(enforce_consistency(&dg, &cfg).unwrap().edges.is_empty());
    }

    #[test]
    fn solo_edges_need_margin_unless_node_is_isolated() {
        let strict = GraphConfig {
            min_edges_per_node: 0,
            ..Default::default()
        };
        let dg = graph(
            GraphStage::DirectedPruned,
            4,
            vec![e(2, 1, 3.0, 4.0, 0.85), e(0, 3, 1.0, 1.0, 0.7), e(0, 1, 2.0, 0.0, 0.95), e(1, 0, -2.0, 0.0, 0.95)],
        );
        let ug = enforce_consistency(&dg, &strict).unwrap();
        assert_eq!(ug.edges.len(), 2);
        assert!(ug.edges.contains(&e(1, 2, -3.0, -4.0, 0.85)));
        // Node 3 would be isolated; the default config readmits its edge.
        let ug = enforce_consistency(&dg, &GraphConfig::default()).unwrap();
        assert_eq!(ug.edges.len(), 3);
        assert!(ug.edges.contains(&e(0, 3, 1.0, 1.0, 0.7)));
    }

    #[test]
    fn perfect_matches_drop_nothing() {
        let pos = [(0.0, 0.0), (15.5, 1.0), (31.0, -2.0), (20.0, 300.0)];
        let mut edges = Vec::new();
        for u in 0..4 {
            for v in 0..4 {
                if u != v {
                    edges.push(e(u, v, pos[v].0 - pos[u].0, pos[v].1 - pos[u].1, 0.9));
                }
            }
        }
        let dg = prune_multigraph(&graph(GraphStage::Multigraph, 4, edges), &GraphConfig::default()).unwrap();
        assert_eq!(dg.edges.len(), 12);
        let ug = enforce_consistency(&dg, &GraphConfig::default()).unwrap();
        assert_eq!(ug.edges.len(), 6);
    }

    proptest! {
        #[test]
        fn pruned_weight_is_chosen_cluster_max(
            cands in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, 0.0f64..1.0), 1..30)
        ) {
            let mg = graph(GraphStage::Multigraph, 2, cands.iter().map(|&(x, y, w)| e(0, 1, x, y, w)).collect());
            let cfg = GraphConfig { min_weight: 1e-9, ..Default::default() };
            let dg = prune_multigraph(&mg, &cfg).unwrap();
            let max = cands.iter().map(|c| c.2).fold(f64::MIN, f64::max);
            if max >= cfg.min_weight {
                prop_assert_eq!(dg.edges.len(), 1);
                prop_assert_eq!(dg.edges[0].weight, max);
            }
        }

        #[test]
        fn swapping_direction_negates_exactly(a in (-100.0f64..100.0, -100.0f64..100.0), d in (-2.0f64..2.0, -2.0f64..2.0)) {
            let fwd = e(0, 1, a.0, a.1, 0.9);
            let bwd = e(1, 0, -a.0 + d.0, -a.1 + d.1, 0.8);
            let ug = enforce_consistency(&graph(GraphStage::DirectedPruned, 2, vec![fwd, bwd]), &GraphConfig::default()).unwrap();
            let t = ug.edges[0].translation;
            prop_assert_eq!(t, (fwd.translation - bwd.translation).scale(0.5));
            prop_assert_eq!(-t, (bwd.translation - fwd.translation).scale(0.5));
        }
    }
}
