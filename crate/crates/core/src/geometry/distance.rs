//! Shortest-path distances on metric slices.
//!
//! Grids use Dijkstra over the primitive lattice offsets in `{-2..2}^n`
//! (16 directions in two dimensions). Each edge costs its flat length times
//! the mean of `e^u` at its endpoints. Against the true metric the path
//! length overestimates by at most the stencil anisotropy factor
//! [`STENCIL_OVERESTIMATE`]. Zonal spheres measure polar-angle separation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Mesh, Payload, PointSet, SliceGeom};

/// Worst-case ratio between stencil path length and true flat distance.
pub const STENCIL_OVERESTIMATE: f64 = 1.03;

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Primitive lattice offsets with entries in `-2..=2` (just `±1` in 1-D).
pub fn stencil(dim: usize) -> Vec<Vec<isize>> {
    if dim == 1 {
        return vec![vec![1], vec![-1]];
    }
    let mut out = Vec::new();
    let total = 5usize.pow(dim as u32);
    for code in 0..total {
        let mut rest = code;
        let mut off = Vec::with_capacity(dim);
        for _ in 0..dim {
            off.push((rest % 5) as isize - 2);
            rest /= 5;
        }
        let g = off.iter().fold(0, |acc, &v| gcd(acc, v.unsigned_abs()));
        if g == 1 {
            out.push(off);
        }
    }
    out
}

/// Distance from a source set to every node of the slice.
pub fn geodesic_distances_from(geom: &SliceGeom, sources: &[usize]) -> Vec<f64> {
    match (geom.mesh, &geom.slice.payload) {
        (Mesh::Sphere(s), Payload::Round { radius }) => {
            let theta = s.theta();
            theta
                .iter()
                .map(|t| {
                    sources
                        .iter()
                        .map(|&a| (t - theta[a]).abs())
                        .fold(f64::INFINITY, f64::min)
                        * radius
                })
                .collect()
        }
        (Mesh::Grid(g), payload) => {
            let scale: Vec<f64> = match payload {
                Payload::Conformal(u) => u.iter().map(|v| v.exp()).collect(),
                _ => vec![1.0; g.len()],
            };
            let h = g.spacing();
            let offsets: Vec<(Vec<isize>, f64)> = stencil(g.dim())
                .into_iter()
                .map(|o| {
                    let len = o.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt() * h;
                    (o, len)
                })
                .collect();
            let mut dist = vec![f64::INFINITY; g.len()];
            let mut heap = BinaryHeap::new();
            for &s in sources {
                dist[s] = 0.0;
                heap.push(Entry { dist: 0.0, node: s });
            }
            while let Some(Entry { dist: d, node }) = heap.pop() {
                if d > dist[node] {
                    continue;
                }
                for (off, len) in &offsets {
                    let next = g.offset_node(node, off);
                    let nd = d + len * 0.5 * (scale[node] + scale[next]);
                    if nd < dist[next] {
                        dist[next] = nd;
                        heap.push(Entry { dist: nd, node: next });
                    }
                }
            }
            dist
        }
        _ => unreachable!("validated in SliceGeom::new"),
    }
}

/// Set distance `dist(A, B)` on the slice; zero when the sets share a node.
pub fn geodesic_distance(geom: &SliceGeom, a: &PointSet, b: &PointSet) -> f64 {
    if a.intersects(b) {
        return 0.0;
    }
    let from_a = geodesic_distances_from(geom, a.nodes());
    b.nodes()
        .iter()
        .map(|&j| from_a[j])
        .fold(f64::INFINITY, f64::min)
}
