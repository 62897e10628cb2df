//! Meshes, metric slices and the geometric primitives evaluated on them.

pub mod distance;
pub mod grid;
pub mod spectral;
pub mod sphere;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
pub use distance::{geodesic_distance, geodesic_distances_from, STENCIL_OVERESTIMATE};
pub use grid::GridMesh;
pub use sphere::SphereMesh;

/// Spatial discretization shared by every slice of a flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Mesh {
    /// Periodic box.
    Grid(GridMesh),
    /// Zonal spectral sphere (unit radius tables; the radius lives in the slice).
    Sphere(SphereMesh),
}

impl Mesh {
    pub fn len(&self) -> usize {
        match self {
            Mesh::Grid(g) => g.len(),
            Mesh::Sphere(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        match self {
            Mesh::Grid(g) => g.dim(),
            Mesh::Sphere(_) => 2,
        }
    }

    pub fn as_grid(&self) -> Option<&GridMesh> {
        match self {
            Mesh::Grid(g) => Some(g),
            Mesh::Sphere(_) => None,
        }
    }

    pub fn as_sphere(&self) -> Option<&SphereMesh> {
        match self {
            Mesh::Sphere(s) => Some(s),
            Mesh::Grid(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    FlatTorus,
    ShrinkingSphere,
    ConformalTorus,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::FlatTorus => "flat-torus",
            Backend::ShrinkingSphere => "shrinking-sphere",
            Backend::ConformalTorus => "conformal-torus",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flat-torus" => Some(Backend::FlatTorus),
            "shrinking-sphere" => Some(Backend::ShrinkingSphere),
            "conformal-torus" => Some(Backend::ConformalTorus),
            _ => None,
        }
    }

    /// Whether slices are known in closed form at every time.
    pub fn is_analytic(self) -> bool {
        !matches!(self, Backend::ConformalTorus)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// The flat metric of the grid itself.
    Flat,
    /// Round sphere of the given radius.
    Round { radius: f64 },
    /// `g = e^{2u} g_flat` with `u` sampled at the grid nodes.
    Conformal(Arc<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSlice {
    pub time: f64,
    pub payload: Payload,
}

impl MetricSlice {
    pub fn flat(time: f64) -> Self {
        Self {
            time,
            payload: Payload::Flat,
        }
    }

    pub fn round(time: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(LabError::InvalidParameter(format!(
                "sphere radius must be positive (got {radius})"
            )));
        }
        Ok(Self {
            time,
            payload: Payload::Round { radius },
        })
    }

    pub fn conformal(time: f64, u: Vec<f64>) -> Result<Self> {
        if let Some(bad) = u.iter().position(|v| !v.is_finite()) {
            return Err(LabError::InvalidParameter(format!(
                "conformal factor is not finite at node {bad}"
            )));
        }
        Ok(Self {
            time,
            payload: Payload::Conformal(Arc::new(u)),
        })
    }

    pub fn conformal_factor(&self) -> Option<&[f64]> {
        match &self.payload {
            Payload::Conformal(u) => Some(u),
            _ => None,
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match self.payload {
            Payload::Round { radius } => Some(radius),
            _ => None,
        }
    }
}

/// A non-empty set of mesh nodes on one time slice.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    nodes: Vec<usize>,
    time: f64,
}

impl PointSet {
    pub fn new(mut nodes: Vec<usize>, time: f64, mesh: &Mesh) -> Result<Self> {
        if nodes.is_empty() {
            return Err(LabError::InvalidParameter("point set is empty".into()));
        }
        if let Some(&bad) = nodes.iter().find(|&&i| i >= mesh.len()) {
            return Err(LabError::InvalidParameter(format!(
                "node {bad} is outside a mesh of {} nodes",
                mesh.len()
            )));
        }
        nodes.sort_unstable();
        nodes.dedup();
        Ok(Self { nodes, time })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn intersects(&self, other: &PointSet) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.nodes.len() && j < other.nodes.len() {
            match self.nodes[i].cmp(&other.nodes[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

/// A metric slice paired with its mesh; all geometric primitives live here.
#[derive(Clone, Copy, Debug)]
pub struct SliceGeom<'a> {
    pub mesh: &'a Mesh,
    pub slice: &'a MetricSlice,
}

impl<'a> SliceGeom<'a> {
    pub fn new(mesh: &'a Mesh, slice: &'a MetricSlice) -> Result<Self> {
        match (mesh, &slice.payload) {
            (Mesh::Grid(_), Payload::Flat) | (Mesh::Sphere(_), Payload::Round { .. }) => {}
            (Mesh::Grid(g), Payload::Conformal(u)) => {
                if g.dim() != 2 {
                    return Err(LabError::Unsupported(
                        "conformal metrics are only implemented in dimension 2".into(),
                    ));
                }
                if u.len() != g.len() {
                    return Err(LabError::InvalidParameter(format!(
                        "conformal factor has {} values for a mesh of {} nodes",
                        u.len(),
                        g.len()
                    )));
                }
            }
            _ => {
                return Err(LabError::InvalidParameter(
                    "metric payload does not match the mesh type".into(),
                ))
            }
        }
        Ok(Self { mesh, slice })
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn len(&self) -> usize {
        self.mesh.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self) -> f64 {
        self.slice.time
    }

    /// Typical node spacing in the metric, used to scale tolerances.
    pub fn resolution_length(&self) -> f64 {
        match (self.mesh, &self.slice.payload) {
            (Mesh::Grid(g), Payload::Conformal(u)) => {
                let umax = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                g.spacing() * umax.exp()
            }
            (Mesh::Grid(g), _) => g.spacing(),
            (Mesh::Sphere(s), Payload::Round { radius }) => {
                std::f64::consts::PI * radius / s.degree() as f64
            }
            _ => unreachable!("validated in SliceGeom::new"),
        }
    }

    /// Riemannian volume carried by each node.
    pub fn volume_weights(&self) -> Vec<f64> {
        match (self.mesh, &self.slice.payload) {
            (Mesh::Grid(g), Payload::Flat) => vec![g.cell_volume(); g.len()],
            (Mesh::Grid(g), Payload::Conformal(u)) => {
                let cell = g.cell_volume();
                u.iter().map(|v| cell * (2.0 * v).exp()).collect()
            }
            (Mesh::Sphere(s), Payload::Round { radius }) => {
                let c = 2.0 * std::f64::consts::PI * radius * radius;
                s.weights().iter().map(|w| c * w).collect()
            }
            _ => unreachable!("validated in SliceGeom::new"),
        }
    }

    pub fn total_volume(&self) -> f64 {
        self.volume_weights().iter().sum()
    }

    /// `∫ φ dvol` by nodal quadrature.
    pub fn integrate(&self, phi: &[f64]) -> f64 {
        self.volume_weights().iter().zip(phi).map(|(w, p)| w * p).sum()
    }

    pub fn scalar_curvature(&self) -> Vec<f64> {
        match (self.mesh, &self.slice.payload) {
            (Mesh::Grid(g), Payload::Flat) => vec![0.0; g.len()],
            (Mesh::Grid(g), Payload::Conformal(u)) => {
                let mut lap = vec![0.0; g.len()];
                grid::laplacian(g, u, &mut lap);
                lap.iter()
                    .zip(u.iter())
                    .map(|(l, v)| -2.0 * (-2.0 * v).exp() * l)
                    .collect()
            }
            (Mesh::Sphere(s), Payload::Round { radius }) => vec![2.0 / (radius * radius); s.len()],
            _ => unreachable!("validated in SliceGeom::new"),
        }
    }

    /// Curvature norm with the surface convention `|Rm| = |R| / 2`; zero on flat slices.
    pub fn curvature_norm(&self) -> Vec<f64> {
        self.scalar_curvature().iter().map(|r| 0.5 * r.abs()).collect()
    }

    /// `Ric = k g` factor per node when the slice is a surface or flat.
    pub fn ricci_factor(&self) -> Vec<f64> {
        self.scalar_curvature().iter().map(|r| 0.5 * r).collect()
    }

    pub fn laplacian(&self, phi: &[f64]) -> Vec<f64> {
        match (self.mesh, &self.slice.payload) {
            (Mesh::Grid(g), Payload::Flat) => {
                let mut out = vec![0.0; g.len()];
                grid::laplacian(g, phi, &mut out);
                out
            }
            (Mesh::Grid(g), Payload::Conformal(u)) => {
                let mut out = vec![0.0; g.len()];
                grid::laplacian(g, phi, &mut out);
                for (o, v) in out.iter_mut().zip(u.iter()) {
                    *o *= (-2.0 * v).exp();
                }
                out
            }
            (Mesh::Sphere(s), Payload::Round { radius }) => {
                let c = s.analyze(phi);
                let inv = 1.0 / (radius * radius);
                s.synthesize_laplacian(&c).iter().map(|v| v * inv).collect()
            }
            _ => unreachable!("validated in SliceGeom::new"),
        }
    }

    /// Gradient in an orthonormal frame, `dim` components per node.
    pub fn gradient(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * self.len()];
        match (self.mesh, &self.slice.payload) {
            (Mesh::Grid(g), payload) => {
                for axis in 0..n {
                    let d = grid::centered_diff(g, phi, axis);
                    for (i, v) in d.iter().enumerate() {
                        out[i * n + axis] = *v;
                    }
                }
                if let Payload::Conformal(u) = payload {
                    for (i, v) in u.iter().enumerate() {
                        let e = (-v).exp();
                        out[i * n] *= e;
                        out[i * n + 1] *= e;
                    }
                }
            }
            (Mesh::Sphere(s), Payload::Round { radius }) => {
                let d = s.synthesize_dtheta(&s.analyze(phi));
                for (i, v) in d.iter().enumerate() {
                    out[i * 2] = v / radius;
                }
            }
            _ => unreachable!("validated in SliceGeom::new"),
        }
        out
    }

    /// Like [`SliceGeom::gradient`] but with sixth-order differences on grids.
    pub fn gradient_high_order(&self, phi: &[f64]) -> Vec<f64> {
        let (g, payload) = match (self.mesh, &self.slice.payload) {
            (Mesh::Grid(g), payload) => (g, payload),
            _ => return self.gradient(phi),
        };
        let n = self.dim();
        let mut out = vec![0.0; n * self.len()];
        for axis in 0..n {
            for (i, v) in grid::centered_diff6(g, phi, axis).iter().enumerate() {
                out[i * n + axis] = *v;
            }
        }
        if let Payload::Conformal(u) = payload {
            for (i, v) in u.iter().enumerate() {
                let e = (-v).exp();
                out[i * n] *= e;
                out[i * n + 1] *= e;
            }
        }
        out
    }

    /// Carré du champ `Γ(φ) = ½(Δφ² − 2φΔφ)` of the discrete Laplacian: on grids
    /// the mean of the squared one-sided differences, elsewhere `|∇φ|²`.
    pub fn carre_du_champ(&self, phi: &[f64]) -> Vec<f64> {
        let (g, payload) = match (self.mesh, &self.slice.payload) {
            (Mesh::Grid(g), payload) => (g, payload),
            _ => return self.grad_sq(phi),
        };
        let inv = 0.5 / (g.spacing() * g.spacing());
        (0..phi.len())
            .map(|i| {
                let mut acc = 0.0;
                for axis in 0..g.dim() {
                    let a = phi[g.neighbor(i, axis, 1)] - phi[i];
                    let b = phi[g.neighbor(i, axis, -1)] - phi[i];
                    acc += a * a + b * b;
                }
                match payload {
                    Payload::Conformal(u) => acc * inv * (-2.0 * u[i]).exp(),
                    _ => acc * inv,
                }
            })
            .collect()
    }

    /// Nodewise `|∇φ|²` from [`SliceGeom::gradient`].
    pub fn grad_sq(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.dim();
        self.gradient(phi)
            .chunks(n)
            .map(|c| c.iter().map(|v| v * v).sum())
            .collect()
    }

    /// Hessian in an orthonormal frame, `dim²` row-major entries per node.
    pub fn hessian(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n * self.len()];
        match (self.mesh, &self.slice.payload) {
            (Mesh::Grid(g), Payload::Flat) => {
                for a in 0..n {
                    for b in a..n {
                        let d = grid::second_diff(g, phi, a, b);
                        for (i, v) in d.iter().enumerate() {
                            out[i * n * n + a * n + b] = *v;
                            out[i * n * n + b * n + a] = *v;
                        }
                    }
                }
            }
            (Mesh::Grid(g), Payload::Conformal(u)) => {
                let fx = grid::centered_diff(g, phi, 0);
                let fy = grid::centered_diff(g, phi, 1);
                let ux = grid::centered_diff(g, u, 0);
                let uy = grid::centered_diff(g, u, 1);
                let fxx = grid::second_diff(g, phi, 0, 0);
                let fyy = grid::second_diff(g, phi, 1, 1);
                let fxy = grid::second_diff(g, phi, 0, 1);
                for i in 0..g.len() {
                    let dot = ux[i] * fx[i] + uy[i] * fy[i];
                    let e = (-2.0 * u[i]).exp();
                    let hxx = fxx[i] - 2.0 * ux[i] * fx[i] + dot;
                    let hyy = fyy[i] - 2.0 * uy[i] * fy[i] + dot;
                    let hxy = fxy[i] - ux[i] * fy[i] - uy[i] * fx[i];
                    out[i * 4] = hxx * e;
                    out[i * 4 + 1] = hxy * e;
                    out[i * 4 + 2] = hxy * e;
                    out[i * 4 + 3] = hyy * e;
                }
            }
            (Mesh::Sphere(s), Payload::Round { radius }) => {
                let c = s.analyze(phi);
                let tt = s.synthesize_dtheta2(&c);
                let pp = s.synthesize_cot_dtheta(&c);
                let inv = 1.0 / (radius * radius);
                for i in 0..s.len() {
                    out[i * 4] = tt[i] * inv;
                    out[i * 4 + 3] = pp[i] * inv;
                }
            }
            _ => unreachable!("validated in SliceGeom::new"),
        }
        out
    }

    /// [`SliceGeom::hessian`] from composed sixth-order differences on grids.
    pub fn hessian_high_order(&self, phi: &[f64]) -> Vec<f64> {
        let (g, payload) = match (self.mesh, &self.slice.payload) {
            (Mesh::Grid(g), payload) => (g, payload),
            _ => return self.hessian(phi),
        };
        let n = self.dim();
        let first: Vec<Vec<f64>> = (0..n).map(|a| grid::centered_diff6(g, phi, a)).collect();
        let mut out = vec![0.0; n * n * self.len()];
        for a in 0..n {
            for b in a..n {
                let d = grid::centered_diff6(g, &first[a], b);
                for (i, v) in d.iter().enumerate() {
                    out[i * n * n + a * n + b] = *v;
                    out[i * n * n + b * n + a] = *v;
                }
            }
        }
        if let Payload::Conformal(u) = payload {
            let ux = grid::centered_diff6(g, u, 0);
            let uy = grid::centered_diff6(g, u, 1);
            let (fx, fy) = (&first[0], &first[1]);
            for i in 0..g.len() {
                let dot = ux[i] * fx[i] + uy[i] * fy[i];
                let e = (-2.0 * u[i]).exp();
                let h = &mut out[i * 4..i * 4 + 4];
                h[0] = (h[0] - 2.0 * ux[i] * fx[i] + dot) * e;
                h[3] = (h[3] - 2.0 * uy[i] * fy[i] + dot) * e;
                let hxy = (h[1] - ux[i] * fy[i] - uy[i] * fx[i]) * e;
                h[1] = hxy;
                h[2] = hxy;
            }
        }
        out
    }

    /// `∫ w |∇φ|² dvol`. On grids this is the edge form that pairs exactly with
    /// the 5-point Laplacian (`∫|∇φ|² = -∫ φ Δφ`); `w` is averaged onto edges.
    pub fn dirichlet(&self, phi: &[f64], weight: Option<&[f64]>) -> f64 {
        match (self.mesh, &self.slice.payload) {
            (Mesh::Grid(g), _) => {
                // In two dimensions the conformal factor cancels between
                // |∇φ|²_g and dvol; flat grids have none.
                let cell = g.cell_volume();
                let e = match weight {
                    Some(w) => grid::edge_sum(g, phi, |a, b| 0.5 * (w[a] + w[b])),
                    None => grid::edge_sum(g, phi, |_, _| 1.0),
                };
                e * cell
            }
            (Mesh::Sphere(_), _) => {
                let vol = self.volume_weights();
                let gsq = self.grad_sq(phi);
                (0..phi.len())
                    .map(|i| gsq[i] * vol[i] * weight.map_or(1.0, |w| w[i]))
                    .sum()
            }
        }
    }

    /// Fisher information `∫ |∇H|² / H dvol` of a nonnegative density.
    ///
    /// Grids use the edge form `Σ (H_b - H_a)(log H_b - log H_a)`, which is the
    /// exact dissipation of `∫ H log H` under the discrete heat flow.
    pub fn fisher_information(&self, density: &[f64]) -> f64 {
        match (self.mesh, &self.slice.payload) {
            (Mesh::Grid(g), _) => {
                let cell = g.cell_volume();
                let inv_h2 = 1.0 / (g.spacing() * g.spacing());
                let mut acc = 0.0;
                for axis in 0..g.dim() {
                    for i in 0..density.len() {
                        let j = g.neighbor(i, axis, 1);
                        let (a, b) = (density[i], density[j]);
                        if a <= 0.0 && b <= 0.0 {
                            continue;
                        }
                        let la = a.max(f64::MIN_POSITIVE).ln();
                        let lb = b.max(f64::MIN_POSITIVE).ln();
                        acc += (b - a) * (lb - la);
                    }
                }
                acc * inv_h2 * cell
            }
            (Mesh::Sphere(_), _) => {
                let vol = self.volume_weights();
                let gsq = self.grad_sq(density);
                (0..density.len())
                    .filter(|&i| density[i] > 0.0)
                    .map(|i| gsq[i] / density[i] * vol[i])
                    .sum()
            }
        }
    }
}
