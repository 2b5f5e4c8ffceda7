use log::warn;

use crate::error::{Error, Result};
use crate::graph::{AlignmentGraph, GraphStage};
use crate::types::{CoordinateSet, Point2};

/// Relative residual at which conjugate gradient stops.
pub const CG_TOLERANCE: f64 = 1e-12;

/// Symmetric sparse matrix in compressed rows.
struct Csr {
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl Csr {
    fn n(&self) -> usize {
        self.diag.len()
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_start[i]..self.row_start[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *o = s;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient from a zero start.
fn pcg(a: &Csr, b: &[f64], tol: f64) -> Vec<f64> {
    let n = a.n();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return x;
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&a.diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..(4 * n + 100) {
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= tol * b_norm {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / a.diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Weighted least-squares coordinates from consistent edges.
///
/// Each connected component is solved on its own with its lowest-index node
/// pinned; the x and y systems are the component's graph Laplacian with that
/// node's row and column removed. Components are positioned by the fallback
/// coordinate of their pinned node, and the result is shifted so frame 0 is
/// at the origin. With no edges at all the fallback is returned unchanged.
pub fn solve_coordinates(ug: &AlignmentGraph, n_frames: usize, fallback: &CoordinateSet) -> Result<CoordinateSet> {
    if ug.stage != GraphStage::UndirectedConsistent {
        return Err(Error::validation(format!(
            "coordinates are solved from a consistent graph, got {}",
            ug.stage.name()
        )));
    }
    if fallback.len() != n_frames {
        return Err(Error::LengthMismatch {
            what: "fallback coordinates",
            expected: n_frames,
            found: fallback.len(),
        });
    }
    if let Some(e) = ug
        .edges
        .iter()
        .find(|e| e.src >= n_frames || e.dst >= n_frames || e.src == e.dst || !e.translation.is_finite())
    {
        return Err(Error::validation(format!("bad edge {}->{}", e.src, e.dst)));
    }
    if ug.edges.is_empty() {
        warn!("no consistent edges; keeping the fallback coordinates");
        return Ok(fallback.clone());
    }

    let mut parent: Vec<usize> = (0..n_frames).collect();
    for e in &ug.edges {
        let (a, b) = (find(&mut parent, e.src), find(&mut parent, e.dst));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    // Component root is always its lowest index, which is the anchor.
    let roots: Vec<usize> = (0..n_frames).map(|i| find(&mut parent, i)).collect();

    // Unknown index inside each component, with the anchor excluded.
    let mut local = vec![usize::MAX; n_frames];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_frames];
    for i in 0..n_frames {
        if roots[i] != i {
            local[i] = members[roots[i]].len();
            members[roots[i]].push(i);
        }
    }

    let mut out = fallback.coords.clone();
    for anchor in 0..n_frames {
        let m = &members[anchor];
        if roots[anchor] != anchor || m.is_empty() {
            continue;
        }
        let k = m.len();
        let mut diag = vec![0.0; k];
        let mut off: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        let mut bx = vec![0.0; k];
        let mut by = vec![0.0; k];
        for e in ug.edges.iter().filter(|e| roots[e.src] == anchor) {
            let w = e.weight.max(1e-9);
            let (t, s, d) = (e.translation, e.src, e.dst);
            // Residual p_d - p_s - t; normal equations per endpoint.
            if s != anchor {
                let i = local[s];
                diag[i] += w;
                bx[i] -= w * t.dx;
                by[i] -= w * t.dy;
            }
            if d != anchor {
                let j = local[d];
                diag[j] += w;
                bx[j] += w * t.dx;
                by[j] += w * t.dy;
            }
            if s != anchor && d != anchor {
                off[local[s]].push((local[d], -w));
                off[local[d]].push((local[s], -w));
            }
        }
        let mut row_start = Vec::with_capacity(k + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_start.push(0);
        for (i, row) in off.iter_mut().enumerate() {
            row.sort_unstable_by_key(|&(j, _)| j);
            cols.push(i);
            vals.push(diag[i]);
            for &(j, v) in row.iter() {
                cols.push(j);
                vals.push(v);
            }
            row_start.push(cols.len());
        }
        let a = Csr {
            row_start,
            cols,
            vals,
            diag,
        };
        let (x, y) = rayon::join(|| pcg(&a, &bx, CG_TOLERANCE), || pcg(&a, &by, CG_TOLERANCE));
        let base = fallback[anchor];
        out[anchor] = base;
        for (i, &node) in m.iter().enumerate() {
            out[node] = Point2::new(base.x + x[i], base.y + y[i]);
        }
    }
    CoordinateSet::new(out).map(|c| c.rebased())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CandidateEdge;
    use crate::types::Translation2D;

    fn ug(n: usize, edges: &[(usize, usize, f64, f64, f64)]) -> AlignmentGraph {
        AlignmentGraph {
            stage: GraphStage::UndirectedConsistent,
            n_nodes: n,
            edges: edges
                .iter()
                .map(|&(src, dst, dx, dy, weight)| CandidateEdge {
                    src,
                    dst,
                    translation: Translation2D::new(dx, dy),
                    weight,
                })
                .collect(),
            comparisons_made: 0,
        }
    }

    #[test]
    fn chain_is_prefix_sum() {
        let g = ug(4, &[(0, 1, 10.0, 1.0, 0.9), (1, 2, 12.5, -2.0, 0.7), (2, 3, 9.0, 0.5, 0.8)]);
        let c = solve_coordinates(&g, 4, &CoordinateSet::zeros(4)).unwrap();
        let expect = [(0.0, 0.0), (10.0, 1.0), (22.5, -1.0), (31.5, -0.5)];
        for (p, e) in c.coords.iter().zip(expect) {
            assert!((p.x - e.0).abs() < 1e-9 && (p.y - e.1).abs() < 1e-9, "{p:?}");
        }
    }

    #[test]
    fn three_cycle_spreads_residual() {
        // Translations around the loop sum to (3, 0).
        let g = ug(3, &[(0, 1, 11.0, 0.0, 1.0), (1, 2, 11.0, 5.0, 1.0), (2, 0, -19.0, -5.0, 1.0)]);
        let c = solve_coordinates(&g, 3, &CoordinateSet::zeros(3)).unwrap();
        for e in &g.edges {
            let r = c[e.dst] - c[e.src] - e.translation;
            assert!((r.dx + 1.0).abs() < 1e-9 && r.dy.abs() < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn components_use_fallback_offsets() {
        let g = ug(5, &[(0, 1, 5.0, 0.0, 1.0), (3, 4, 0.0, 7.0, 1.0)]);
        let fb = CoordinateSet::new(vec![
            Point2::new(100.0, 100.0),
            Point2::new(0.0, 0.0),
            Point2::new(40.0, 40.0),
            Point2::new(300.0, 100.0),
            Point2::new(0.0, 0.0),
        ])
        .unwrap();
        let c = solve_coordinates(&g, 5, &fb).unwrap();
        let expect = [(0.0, 0.0), (5.0, 0.0), (-60.0, -60.0), (200.0, 0.0), (200.0, 7.0)];
        for (p, e) in c.coords.iter().zip(expect) {
            assert!((p.x - e.0).abs() < 1e-9 && (p.y - e.1).abs() < 1e-9, "{p:?}");
        }
    }

    #[test]
    fn empty_graph_returns_fallback_verbatim() {
        let fb = CoordinateSet::new(vec![Point2::new(3.0, 4.0), Point2::new(1.0, 1.0)]).unwrap();
        assert_eq!(solve_coordinates(&ug(2, &[]), 2, &fb).unwrap(), fb);
    }

    #[test]
    fn rejects_wrong_stage_and_bad_edges() {
        let mut g = ug(2, &[(0, 1, 1.0, 1.0, 1.0)]);
        assert!(solve_coordinates(&g, 3, &CoordinateSet::zeros(2)).is_err());
        assert!(solve_coordinates(&ug(2, &[(0, 2, 1.0, 1.0, 1.0)]), 2, &CoordinateSet::zeros(2)).is_err());
        g.stage = GraphStage::DirectedPruned;
        assert!(solve_coordinates(&g, 2, &CoordinateSet::zeros(2)).is_err());
    }
}
