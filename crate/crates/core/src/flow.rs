//! Flow histories: exact model flows, the explicit conformal Ricci flow on
//! the 2-torus, and parabolic rescaling.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{grid, Backend, GridMesh, Mesh, MetricSlice, Payload, SliceGeom, SphereMesh};

/// Slices of a Ricci flow on `[-T, 0]` over a fixed mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowHistory {
    mesh: Mesh,
    backend: Backend,
    slices: Vec<MetricSlice>,
}

/// Per-slice monitoring quantities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub times: Vec<f64>,
    pub min_scalar_curvature: Vec<f64>,
    pub area: Vec<f64>,
    pub max_abs_conformal: Vec<f64>,
}

impl FlowHistory {
    /// Assemble a history from slices, checking ordering and mesh compatibility.
    pub fn from_parts(mesh: Mesh, backend: Backend, slices: Vec<MetricSlice>) -> Result<Self> {
        if slices.len() < 2 {
            return Err(LabError::InvalidParameter(
                "a flow history needs at least two slices".into(),
            ));
        }
        if slices.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(LabError::InvalidParameter(
                "slice times must be strictly increasing".into(),
            ));
        }
        if slices.last().map(|s| s.time) != Some(0.0) {
            return Err(LabError::InvalidParameter("the last slice must sit at t = 0".into()));
        }
        for s in &slices {
            let ok = matches!(
                (backend, &s.payload),
                (Backend::FlatTorus, Payload::Flat)
                    | (Backend::ShrinkingSphere, Payload::Round { .. })
                    | (Backend::ConformalTorus, Payload::Conformal(_))
            );
            if !ok {
                return Err(LabError::InvalidParameter(format!(
                    "slice at t = {} does not match backend {}",
                    s.time,
                    backend.name()
                )));
            }
            SliceGeom::new(&mesh, s)?;
        }
        Ok(Self {
            mesh,
            backend,
            slices,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn slices(&self) -> &[MetricSlice] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.time).collect()
    }

    /// `T`, the length of the time interval.
    pub fn horizon(&self) -> f64 {
        -self.slices[0].time
    }

    pub fn geom(&self, k: usize) -> SliceGeom<'_> {
        SliceGeom {
            mesh: &self.mesh,
            slice: &self.slices[k],
        }
    }

    /// Index of the stored slice at time `t` (within a relative 1e-12).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * self.horizon().max(1.0);
        self.slices
            .iter()
            .position(|s| (s.time - t).abs() <= tol)
            .ok_or(LabError::OffGrid(t))
    }

    /// Stored slice closest in time to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, s) in self.slices.iter().enumerate() {
            if (s.time - t).abs() < (self.slices[best].time - t).abs() {
                best = k;
            }
        }
        best
    }

    /// Metric at an arbitrary time for analytic backends, or at a stored time.
    pub fn metric_at(&self, t: f64) -> Result<MetricSlice> {
        if !(t >= -self.horizon() * (1.0 + 1e-12) && t <= 0.0) {
            return Err(LabError::InvalidParameter(format!(
                "time {t} is outside [{}, 0]",
                -self.horizon()
            )));
        }
        match self.backend {
            Backend::FlatTorus => Ok(MetricSlice::flat(t)),
            Backend::ShrinkingSphere => {
                let r0 = self.final_radius().expect("sphere history carries radii");
                MetricSlice::round(t, (r0 * r0 - 2.0 * t).sqrt())
            }
            Backend::ConformalTorus => Ok(self.slices[self.index_of(t)?].clone()),
        }
    }

    /// Radius at `t = 0` for sphere histories.
    pub fn final_radius(&self) -> Option<f64> {
        self.slices.last().and_then(|s| s.radius())
    }

    pub fn diagnostics(&self) -> FlowDiagnostics {
        let mut d = FlowDiagnostics {
            times: Vec::with_capacity(self.len()),
            min_scalar_curvature: Vec::with_capacity(self.len()),
            area: Vec::with_capacity(self.len()),
            max_abs_conformal: Vec::with_capacity(self.len()),
        };
        for k in 0..self.len() {
            let g = self.geom(k);
            d.times.push(g.time());
            d.min_scalar_curvature
                .push(g.scalar_curvature().iter().cloned().fold(f64::INFINITY, f64::min));
            d.area.push(g.total_volume());
            d.max_abs_conformal.push(
                g.slice
                    .conformal_factor()
                    .map_or(0.0, |u| u.iter().fold(0.0, |m: f64, v| m.max(v.abs()))),
            );
        }
        d
    }

    /// `g̃(t) = λ⁻² g(λ² t)` on `[-T/λ², 0]`. Grids shrink their side by `λ`,
    /// spheres their radius; conformal factors are shared unchanged.
    pub fn parabolic_rescale(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(LabError::InvalidParameter(format!(
                "rescaling factor must be positive (got {lambda})"
            )));
        }
        let mesh = match &self.mesh {
            Mesh::Grid(g) => Mesh::Grid(g.scaled(1.0 / lambda)),
            Mesh::Sphere(s) => Mesh::Sphere(s.clone()),
        };
        let l2 = lambda * lambda;
        let slices = self
            .slices
            .iter()
            .map(|s| MetricSlice {
                time: s.time / l2,
                payload: match &s.payload {
                    Payload::Round { radius } => Payload::Round {
                        radius: radius / lambda,
                    },
                    other => other.clone(),
                },
            })
            .collect();
        Ok(Self {
            mesh,
            backend: self.backend,
            slices,
        })
    }
}

/// Static flat torus `(R/side Z)^n` on `[-T, 0]`; only the end slices are stored.
pub fn make_flat_torus(dim: usize, side: f64, res: usize, horizon: f64) -> Result<FlowHistory> {
    check_horizon(horizon)?;
    let mesh = Mesh::Grid(GridMesh::new(dim, res, side)?);
    FlowHistory::from_parts(
        mesh,
        Backend::FlatTorus,
        vec![MetricSlice::flat(-horizon), MetricSlice::flat(0.0)],
    )
}

/// Round sphere with `r(t)² = r0² − 2t`, stored on `slices + 1` uniform times.
pub fn make_shrinking_sphere(r0: f64, horizon: f64, degree: usize, slices: usize) -> Result<FlowHistory> {
    check_horizon(horizon)?;
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(LabError::InvalidParameter(format!("radius must be positive (got {r0})")));
    }
    if r0 * r0 <= 2.0 * horizon {
        return Err(LabError::InvalidParameter(format!(
            "flow singular before t=0: need r0^2 > 2T (r0^2 = {}, 2T = {})",
            r0 * r0,
            2.0 * horizon
        )));
    }
    let slices = slices.max(1);
    let mesh = Mesh::Sphere(SphereMesh::new(degree)?);
    let list = (0..=slices)
        .map(|k| {
            let t = if k == slices {
                0.0
            } else {
                -horizon + horizon * k as f64 / slices as f64
            };
            MetricSlice::round(t, (r0 * r0 - 2.0 * t).sqrt())
        })
        .collect::<Result<Vec<_>>>()?;
    FlowHistory::from_parts(mesh, Backend::ShrinkingSphere, list)
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(LabError::InvalidParameter(format!(
            "time horizon must be positive (got {horizon})"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConformalFlowOptions {
    /// Upper bound on the step; the CFL bound usually binds first.
    pub dt_max: Option<f64>,
    /// Fraction of the positivity limit `h² min e^{2u} / (2n)`.
    pub cfl_fraction: f64,
    /// Abort when `max |u|` exceeds this.
    pub blowup_cap: f64,
    /// Abort when the adaptive step falls below this.
    pub min_dt: f64,
    pub max_steps: usize,
}

impl Default for ConformalFlowOptions {
    fn default() -> Self {
        Self {
            dt_max: None,
            cfl_fraction: 0.8,
            blowup_cap: 20.0,
            min_dt: 1e-12,
            max_steps: 100_000,
        }
    }
}

/// Largest stable explicit step on a grid with conformal factor `u`.
pub fn cfl_step(mesh: &GridMesh, u: Option<&[f64]>, cfl_fraction: f64) -> f64 {
    let h = mesh.spacing();
    let min_u = u.map_or(0.0, |u| u.iter().cloned().fold(f64::INFINITY, f64::min));
    cfl_fraction * h * h / (2.0 * mesh.dim() as f64) * (2.0 * min_u).exp()
}

/// Integrate `∂t u = e^{-2u} Δ₀ u` from `u(-T) = u0` to `t = 0` by explicit
/// Euler with an adaptive CFL step, storing every accepted step.
pub fn evolve_conformal_torus(
    mesh: &GridMesh,
    u0: &[f64],
    horizon: f64,
    opts: &ConformalFlowOptions,
) -> Result<FlowHistory> {
    check_horizon(horizon)?;
    if mesh.dim() != 2 {
        return Err(LabError::Unsupported("the conformal flow is two-dimensional".into()));
    }
    if u0.len() != mesh.len() {
        return Err(LabError::InvalidParameter(format!(
            "initial data has {} values for {} nodes",
            u0.len(),
            mesh.len()
        )));
    }
    let mut u = u0.to_vec();
    let mut t = -horizon;
    let mut slices = vec![MetricSlice::conformal(t, u.clone())?];
    let mut lap = vec![0.0; u.len()];
    while t < 0.0 {
        if slices.len() > opts.max_steps {
            return Err(LabError::InvalidParameter(format!(
                "flow needs more than {} steps",
                opts.max_steps
            )));
        }
        let mut dt = cfl_step(mesh, Some(&u), opts.cfl_fraction);
        if let Some(m) = opts.dt_max {
            dt = dt.min(m);
        }
        if dt < opts.min_dt {
            return Err(LabError::CflViolation {
                time: t,
                dt,
                min_dt: opts.min_dt,
            });
        }
        // Land exactly on t = 0, avoiding a sliver of a final step.
        let remaining = -t;
        if remaining <= dt * (1.0 + 1e-9) {
            dt = remaining;
        } else if remaining < 2.0 * dt {
            dt = 0.5 * remaining;
        }
        grid::laplacian(mesh, &u, &mut lap);
        for (v, l) in u.iter_mut().zip(&lap) {
            *v += dt * (-2.0 * *v).exp() * l;
        }
        t = if dt == remaining { 0.0 } else { t + dt };
        let max_abs = u.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if !(max_abs <= opts.blowup_cap) {
            return Err(LabError::BlowUp {
                time: t,
                max_abs,
                cap: opts.blowup_cap,
            });
        }
        slices.push(MetricSlice {
            time: t,
            payload: Payload::Conformal(Arc::new(u.clone())),
        });
    }
    FlowHistory::from_parts(Mesh::Grid(mesh.clone()), Backend::ConformalTorus, slices)
}
