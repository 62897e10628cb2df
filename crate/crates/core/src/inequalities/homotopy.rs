//! The heat-kernel homotopy behind the sharp inequalities:
//! `∫φ(u) dν − φ(∫u dν) = ∫_s^{t_b} ∫ φ''(u_t)|∇u_t|² dν_t dt` with
//! `u_t = P_{st}u`, and the gradient interpolation
//! `|∇P_{st}u|² = P_{st}|∇u|² − 2∫_s^t P_{rt}|∇²P_{sr}u|² dr`.
//! Both sides are computed independently by quadrature. The homotopy uses the
//! carré du champ of the discrete Laplacian that drives the solver; the
//! interpolation uses sixth-order derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::FlowHistory;
use crate::geometry::SliceGeom;
use crate::heatkernel::{forward_evolve, forward_solve, KernelHistory};
use crate::numerics::integrate_samples;
use crate::par;
use crate::report::Report;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Homotopy {
    /// `φ(x) = x²`.
    Square,
    /// `φ(x) = x log x`, for positive `u`.
    XLogX,
}

impl Homotopy {
    fn phi(self, x: f64) -> f64 {
        match self {
            Homotopy::Square => x * x,
            Homotopy::XLogX => x * x.ln(),
        }
    }

    fn phi2(self, x: f64) -> f64 {
        match self {
            Homotopy::Square => 2.0,
            Homotopy::XLogX => 1.0 / x,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Homotopy::Square => "homotopy-square",
            Homotopy::XLogX => "homotopy-xlogx",
        }
    }
}

/// Both sides of the homotopy identity for `u` given at the kernel sample
/// time `s`. The time integral runs over the kernel samples in `[s, t_b)` and
/// closes with the pointwise value at the basepoint at `t_b`, where `ν` is a
/// point mass. Passes when the relative gap is at most `tolerance`.
pub fn homotopy_identity_check(
    flow: &FlowHistory,
    k: &KernelHistory,
    u: &[f64],
    s: f64,
    variant: Homotopy,
    cfl_fraction: f64,
    tolerance: f64,
) -> Result<Report> {
    if variant == Homotopy::XLogX && u.iter().any(|&v| !(v > 0.0)) {
        return Err(LabError::InvalidParameter("the x log x homotopy needs u > 0".into()));
    }
    let j0 = k.index_of(s)?;
    let s = k.samples[j0].s;
    let mut times: Vec<f64> = k.samples[j0..].iter().map(|smp| smp.s).collect();
    times.push(k.base_time);
    let field = forward_solve(flow, u, s, &times, cfl_fraction)?;
    let integrand: Vec<f64> = par::map_range(times.len(), |j| -> Result<f64> {
        let ut = &field.values[j];
        if j + 1 == times.len() {
            let metric = flow.metric_at(k.base_time)?;
            let geom = SliceGeom::new(flow.mesh(), &metric)?;
            let x = k.basepoint;
            return Ok(variant.phi2(ut[x]) * geom.carre_du_champ(ut)[x]);
        }
        let ks = k.view(flow, j0 + j)?;
        let gsq = ks.geom().carre_du_champ(ut);
        Ok(ks
            .measure()
            .iter()
            .zip(ut.iter().zip(&gsq))
            .map(|(w, (v, g))| w * variant.phi2(*v) * g)
            .sum())
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let rhs = integrate_samples(&field.times, &integrand);
    let ks = k.view(flow, j0)?;
    let m = ks.measure();
    let mean: f64 = m.iter().zip(u).map(|(w, v)| w * v).sum();
    let lhs = m.iter().zip(u).map(|(w, v)| w * variant.phi(*v)).sum::<f64>() - variant.phi(mean);
    let scale = lhs.abs().max(rhs.abs());
    let rel = if scale > 0.0 { (lhs - rhs).abs() / scale } else { 0.0 };
    Ok(Report::equal(variant.name(), lhs, rhs, tolerance * scale)
        .at(s)
        .based_at(k.basepoint)
        .with("relative_error", rel))
}

/// Both sides of the gradient interpolation at time `t`, nodewise.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientInterpolation {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `‖lhs − rhs‖ / max(‖lhs‖, ‖rhs‖)` in `L²(g(t))`.
    pub relative_error: f64,
}

impl GradientInterpolation {
    pub fn report(&self, s: f64, tolerance: f64) -> Report {
        Report::upper("gradient-interpolation", self.relative_error, 0.0, tolerance).at(s)
    }
}

/// `|∇P_{st}u|²` against `P_{st}|∇u|² − 2∫_s^t P_{rt}|∇²P_{sr}u|² dr`, with the
/// `r` integral on `intervals + 1` equispaced nodes.
pub fn gradient_interpolation_check(
    flow: &FlowHistory,
    u: &[f64],
    s: f64,
    t: f64,
    intervals: usize,
    cfl_fraction: f64,
) -> Result<GradientInterpolation> {
    if !(s < t) || intervals < 2 {
        return Err(LabError::InvalidParameter(format!(
            "need s < t and at least two intervals (s = {s}, t = {t}, {intervals})"
        )));
    }
    let geom_at = |time: f64| flow.metric_at(time);
    let rs: Vec<f64> = (0..=intervals)
        .map(|i| if i == intervals { t } else { s + (t - s) * i as f64 / intervals as f64 })
        .collect();
    let path = forward_solve(flow, u, s, &rs, cfl_fraction)?;
    let ut = path.last();
    let n = flow.mesh().dim();
    let metric_t = geom_at(t)?;
    let gt = SliceGeom::new(flow.mesh(), &metric_t)?;
    let lhs = sq_norm(&gt.gradient_high_order(ut), n);
    let metric_s = geom_at(s)?;
    let grad_s = sq_norm(&SliceGeom::new(flow.mesh(), &metric_s)?.gradient_high_order(u), n);
    let transported = forward_evolve(flow, &grad_s, s, t, cfl_fraction)?;
    let terms: Vec<Vec<f64>> = par::map_range(rs.len(), |i| -> Result<Vec<f64>> {
        let r = path.times[i];
        let metric = geom_at(r)?;
        let hess = SliceGeom::new(flow.mesh(), &metric)?.hessian_high_order(&path.values[i]);
        let sq = sq_norm(&hess, n * n);
        if i + 1 == rs.len() {
            Ok(sq)
        } else {
            forward_evolve(flow, &sq, r, t, cfl_fraction)
        }
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let len = lhs.len();
    let mut rhs = vec![0.0; len];
    let mut column = vec![0.0; rs.len()];
    for i in 0..len {
        for (c, term) in column.iter_mut().zip(&terms) {
            *c = term[i];
        }
        rhs[i] = transported[i] - 2.0 * integrate_samples(&path.times, &column);
    }
    let vol = gt.volume_weights();
    let num: f64 = (0..len).map(|i| (lhs[i] - rhs[i]).powi(2) * vol[i]).sum();
    let norm = |v: &[f64]| (0..len).map(|i| v[i] * v[i] * vol[i]).sum::<f64>();
    let den = norm(&lhs).max(norm(&rhs));
    let relative_error = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(GradientInterpolation {
        lhs,
        rhs,
        relative_error,
    })
}

fn sq_norm(v: &[f64], chunk: usize) -> Vec<f64> {
    v.chunks(chunk).map(|c| c.iter().map(|x| x * x).sum()).collect()
}
