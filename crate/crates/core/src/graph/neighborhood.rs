use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::types::CoordinateSet;

/// Symmetric, irreflexive adjacency; each list is sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodGraph {
    adjacency: Vec<Vec<usize>>,
}

impl NeighborhoodGraph {
    pub fn from_adjacency(adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        for (u, nb) in adjacency.iter().enumerate() {
            for &v in nb {
                if v >= n || v == u || !adjacency[v].contains(&u) {
                    return Err(Error::validation(format!("adjacency {u}-{v} is not symmetric")));
                }
            }
        }
        let adjacency = adjacency
            .into_iter()
            .map(|mut nb| {
                nb.sort_unstable();
                nb.dedup();
                nb
            })
            .collect();
        Ok(Self { adjacency })
    }

    pub fn complete(n: usize) -> Self {
        Self {
            adjacency: (0..n).map(|u| (0..n).filter(|&v| v != u).collect()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Ordered pairs `(u, v)` with `v` adjacent to `u`, sorted.
    pub fn directed_pairs(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, nb)| nb.iter().map(move |&v| (u, v)))
            .collect()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Links frames whose approximate upper-left corners lie within
/// `radius_factor * frame_width` of each other (boundary inclusive).
/// Uses a uniform grid of cell size equal to the radius, so only the 3x3
/// block of cells around each frame is examined.
pub fn build_neighborhood(approx: &CoordinateSet, frame_width: usize, cfg: &GraphConfig) -> Result<NeighborhoodGraph> {
    let n = approx.len();
    if n < 2 {
        return Err(Error::validation("a neighborhood needs at least 2 frames"));
    }
    let r = cfg.radius_factor * frame_width as f64;
    if r.is_nan() || r <= 0.0 {
        return Err(Error::validation("neighborhood radius must be positive"));
    }
    let cell = |v: f64| (v / r).floor() as i64;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in approx.coords.iter().enumerate() {
        grid.entry((cell(p.x), cell(p.y))).or_default().push(i);
    }
    let r2 = r * r;
    let adjacency = approx
        .coords
        .iter()
        .enumerate()
        .map(|(u, p)| {
            let (cx, cy) = (cell(p.x), cell(p.y));
            let mut nb = Vec::new();
            for gx in cx - 1..=cx + 1 {
                for gy in cy - 1..=cy + 1 {
                    let Some(bucket) = grid.get(&(gx, gy)) else {
                        continue;
                    };
                    for &v in bucket {
                        let q = approx.coords[v];
                        let d2 = (q.x - p.x).powi(2) + (q.y - p.y).powi(2);
                        if v != u && d2 <= r2 {
                            nb.push(v);
                        }
                    }
                }
            }
            nb.sort_unstable();
            nb
        })
        .collect();
    Ok(NeighborhoodGraph { adjacency })
}
