//! No-local-collapsing and the unweighted log-Sobolev inequality along the flow.

use std::f64::consts::PI;

use crate::error::Result;
use crate::flow::FlowHistory;
use crate::geometry::distance::geodesic_distances_from;
use crate::geometry::SliceGeom;
use crate::report::Report;

use super::mu::{default_tau_min, MuOptions, MuTable};

/// `|B_r(x)|` as the volume of nodes within stencil distance `r`.
pub fn ball_volume(geom: &SliceGeom, x: usize, r: f64) -> f64 {
    let d = geodesic_distances_from(geom, &[x]);
    geom.volume_weights()
        .iter()
        .zip(&d)
        .filter(|(_, &dist)| dist <= r)
        .map(|(v, _)| v)
        .sum()
}

#[derive(Clone, Debug)]
pub struct NoCollapseOptions {
    pub mu: MuOptions,
    /// `τ` samples per `μ` table.
    pub mu_points: usize,
}

impl Default for NoCollapseOptions {
    fn default() -> Self {
        Self {
            mu: MuOptions::default(),
            mu_points: 8,
        }
    }
}

/// `μ(g(−T), τ)` on `τ ∈ [τ_min, t + T + r_max²]`, shared by a battery of
/// balls at time `t`.
pub fn collapse_mu_table(flow: &FlowHistory, t: f64, r_max: f64, opts: &NoCollapseOptions) -> Result<MuTable> {
    let geom = flow.geom(0);
    let tau_min = default_tau_min(&geom);
    let tau_max = (t + flow.horizon() + r_max * r_max).max(2.0 * tau_min);
    MuTable::geometric(&geom, tau_min, tau_max, opts.mu_points, &opts.mu)
}

/// `|B_r(x, t)| ≥ κ rⁿ` with `κ = exp(−(2^{n+4} + 2C))`, provided
/// `sup_{B_r} R ≤ C r⁻²` and `inf μ(g(−T), t + T + ρ²) ≥ −C` over `ρ ∈ (0, r)`.
pub fn no_local_collapse_check(flow: &FlowHistory, t: f64, x: usize, r: f64, c: f64, table: &MuTable) -> Result<Report> {
    let metric = flow.metric_at(t)?;
    let geom = SliceGeom::new(flow.mesh(), &metric)?;
    let n = geom.dim() as i32;
    let kappa = (-(2f64.powi(n + 4) + 2.0 * c)).exp();
    let volume = ball_volume(&geom, x, r);
    let dist = geodesic_distances_from(&geom, &[x]);
    let sup_r = geom
        .scalar_curvature()
        .iter()
        .zip(&dist)
        .filter(|(_, &d)| d <= r)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = t + flow.horizon();
    let report = Report::upper("no-local-collapsing", kappa * r.powi(n), volume, 0.0)
        .at(t)
        .based_at(x)
        .with("kappa", kappa)
        .with("C", c)
        .with("r", r)
        .with("ratio", volume / r.powi(n))
        .with("sup_R_r2", sup_r * r * r);
    if sup_r * r * r > c {
        return Ok(report.hypothesis_failed("curvature_hypothesis", sup_r * r * r));
    }
    match table.infimum(lo, lo + r * r) {
        Some((lower, _)) if lower >= -c => Ok(report.with("mu_lower", lower)),
        Some((lower, _)) => Ok(report.hypothesis_failed("mu_lower", lower)),
        None => Ok(report.hypothesis_failed("mu_unavailable", lo + r * r)),
    }
}

/// `∫φ² log φ² ≤ τ∫(4|∇φ|² + Rφ²) − (n/2) log 4πτ − n − μ0` at time `t`
/// with `τ = t0 − t` and `φ` normalized in `g(t)`.
pub fn log_sobolev_unweighted_check(geom: &SliceGeom, tau: f64, phi: &[f64], mu0: f64, tolerance: f64) -> Result<Report> {
    let vol = geom.volume_weights();
    let norm: f64 = phi.iter().zip(&vol).map(|(p, w)| p * p * w).sum::<f64>().sqrt();
    let phi: Vec<f64> = phi.iter().map(|p| p / norm).collect();
    let n = geom.dim() as f64;
    let r = geom.scalar_curvature();
    let lhs: f64 = phi
        .iter()
        .zip(&vol)
        .map(|(p, w)| {
            let p2 = p * p;
            if p2 > 0.0 {
                p2 * p2.ln() * w
            } else {
                0.0
            }
        })
        .sum();
    let potential: f64 = phi.iter().zip(&vol).zip(&r).map(|((p, w), k)| k * p * p * w).sum();
    let rhs = tau * (4.0 * geom.dirichlet(&phi, None) + potential)
        - 0.5 * n * (4.0 * PI * tau).ln()
        - n
        - mu0;
    Ok(Report::upper("log-sobolev-unweighted", lhs, rhs, tolerance)
        .at(geom.time())
        .with("tau", tau)
        .with("mu0", mu0))
}
