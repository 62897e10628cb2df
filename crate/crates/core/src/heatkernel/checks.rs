//! Structural identities of the heat operators: duality of forward and
//! conjugate kernels, mass growth, the parabolic Bochner formula, the
//! space-time integration by parts and the semigroup law.

use crate::error::{LabError, Result};
use crate::flow::FlowHistory;
use crate::geometry::SliceGeom;
use crate::report::Report;

use super::solver::{forward_evolve, forward_kernel, solve_conjugate_kernel, ForwardKernel, KernelOptions};
use super::HeatField;

/// Compare `H(x, t | y, s)` from the conjugate solve based at `(x, t)` with
/// the forward solve from the pole `(y, s)`. On spheres `x` is the north
/// pole and `y` a ring.
pub fn duality_check(
    flow: &FlowHistory,
    x: usize,
    t: f64,
    y: usize,
    s: f64,
    opts: &KernelOptions,
    tolerance: f64,
) -> Result<Report> {
    if !(s < t) {
        return Err(LabError::InvalidParameter(format!("need s < t (s = {s}, t = {t})")));
    }
    let sphere = flow.mesh().as_sphere().is_some();
    let back_opts = KernelOptions {
        base_time: t,
        extra_times: vec![s],
        ..opts.clone()
    };
    let back = solve_conjugate_kernel(flow, if sphere { 0 } else { x }, &back_opts)?;
    let k = back.nearest(s);
    let backward = back.samples[k].density[y];
    let fwd = forward_kernel(flow, if sphere { 0 } else { y }, back.samples[k].s, &[back.base_time], opts)?;
    let forward = fwd.field.last()[if sphere { y } else { x }];
    let scale = backward.abs().max(forward.abs());
    let rel = (backward - forward).abs() / scale;
    Ok(Report::equal("duality", backward, forward, tolerance * scale)
        .with("relative_discrepancy", rel)
        .with("t", back.base_time)
        .with("y", y as f64)
        .at(back.samples[k].s)
        .based_at(x))
}

/// `ρ = ‖R[g(−T)]⁻‖∞`.
pub fn initial_curvature_deficit(flow: &FlowHistory) -> f64 {
    let r = flow.geom(0).scalar_curvature();
    r.iter().fold(0.0, |m: f64, v| m.max(-v))
}

/// `∫ H(x, t | y, s) dvol_t(x) ≤ exp(ρ(t − s))`, worst ratio over the samples.
pub fn mass_growth_check(flow: &FlowHistory, fk: &ForwardKernel, tolerance: f64) -> Result<Report> {
    let rho = initial_curvature_deficit(flow);
    let mut worst: Option<(f64, f64, f64)> = None;
    for (t, u) in fk.field.times.iter().zip(&fk.field.values) {
        let metric = flow.metric_at(*t)?;
        let mass = SliceGeom::new(flow.mesh(), &metric)?.integrate(u);
        let bound = (rho * (t - fk.pole_time)).exp();
        if worst.map_or(true, |w| mass - bound > w.1 - w.2) {
            worst = Some((*t, mass, bound));
        }
    }
    let (t, mass, bound) =
        worst.ok_or_else(|| LabError::InvalidParameter("forward kernel has no samples".into()))?;
    Ok(Report::upper("mass-growth", mass, bound, tolerance)
        .with("rho", rho)
        .with("t", t)
        .at(fk.pole_time)
        .based_at(fk.pole))
}

/// Residual of `□ ½|∇u|² + |∇²u|²` at interior samples of a forward solution.
#[derive(Clone, Debug)]
pub struct ResidualHistory {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// `(∫ r² dvol)^{1/2}` per time.
    pub l2: Vec<f64>,
}

impl ResidualHistory {
    pub fn max_l2(&self) -> f64 {
        self.l2.iter().cloned().fold(0.0, f64::max)
    }
}

/// Discrete parabolic Bochner residual with a centered time difference; the
/// samples should be consecutive solver steps.
pub fn bochner_residual(flow: &FlowHistory, u: &HeatField) -> Result<ResidualHistory> {
    if u.times.len() < 3 {
        return Err(LabError::InvalidParameter(
            "the Bochner residual needs at least three samples".into(),
        ));
    }
    let metrics = u
        .times
        .iter()
        .map(|&t| flow.metric_at(t))
        .collect::<Result<Vec<_>>>()?;
    let half_sq: Vec<Vec<f64>> = metrics
        .iter()
        .zip(&u.values)
        .map(|(m, v)| {
            let g = SliceGeom::new(flow.mesh(), m)?;
            Ok(g.grad_sq(v).iter().map(|x| 0.5 * x).collect())
        })
        .collect::<Result<_>>()?;
    let mut out = ResidualHistory {
        times: Vec::new(),
        values: Vec::new(),
        l2: Vec::new(),
    };
    for k in 1..u.times.len() - 1 {
        let g = SliceGeom::new(flow.mesh(), &metrics[k])?;
        let dt = u.times[k + 1] - u.times[k - 1];
        let lap = g.laplacian(&half_sq[k]);
        let n = g.dim();
        let hess = g.hessian(&u.values[k]);
        let r: Vec<f64> = (0..g.len())
            .map(|i| {
                let hs: f64 = hess[i * n * n..(i + 1) * n * n].iter().map(|x| x * x).sum();
                (half_sq[k + 1][i] - half_sq[k - 1][i]) / dt - lap[i] + hs
            })
            .collect();
        let sq: Vec<f64> = r.iter().map(|x| x * x).collect();
        out.l2.push(g.integrate(&sq).sqrt());
        out.times.push(u.times[k]);
        out.values.push(r);
    }
    Ok(out)
}

/// `∫∫ (□u)v − (□*v)u dvol dt = [∫uv dvol]_{t1}^{t2}` over the samples of
/// `u` and `v` in `[t1, t2]` (both sampled at the same times).
///
/// Time derivatives are differenced per interval, so the `∂t(uv)` part is
/// integrated exactly against the midpoint volume; spatial terms use the
/// trapezoid rule. `tolerance` is relative to `max_t ∫|uv| dvol`.
pub fn ibp_identity_check(
    flow: &FlowHistory,
    u: &HeatField,
    v: &HeatField,
    t1: f64,
    t2: f64,
    tolerance: f64,
) -> Result<Report> {
    if u.times != v.times {
        return Err(LabError::InvalidParameter("u and v must share sample times".into()));
    }
    let idx: Vec<usize> = (0..u.times.len())
        .filter(|&k| u.times[k] >= t1 - 1e-12 && u.times[k] <= t2 + 1e-12)
        .collect();
    if idx.len() < 2 {
        return Err(LabError::InvalidParameter("need two samples in [t1, t2]".into()));
    }
    struct Slice {
        vol: Vec<f64>,
        uv: Vec<f64>,
        spatial: f64,
    }
    let slices = idx
        .iter()
        .map(|&k| {
            let metric = flow.metric_at(u.times[k])?;
            let g = SliceGeom::new(flow.mesh(), &metric)?;
            let (a, b) = (&u.values[k], &v.values[k]);
            let la = g.laplacian(a);
            let lb = g.laplacian(b);
            let r = g.scalar_curvature();
            let integrand: Vec<f64> = (0..a.len())
                .map(|i| a[i] * lb[i] - b[i] * la[i] - r[i] * a[i] * b[i])
                .collect();
            Ok(Slice {
                vol: g.volume_weights(),
                uv: a.iter().zip(b).map(|(x, y)| x * y).collect(),
                spatial: g.integrate(&integrand),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut lhs = 0.0;
    for w in 0..slices.len() - 1 {
        let (p, q) = (&slices[w], &slices[w + 1]);
        let dt = u.times[idx[w + 1]] - u.times[idx[w]];
        let time_part: f64 = (0..p.uv.len())
            .map(|i| (q.uv[i] - p.uv[i]) * 0.5 * (p.vol[i] + q.vol[i]))
            .sum();
        lhs += time_part + 0.5 * dt * (p.spatial + q.spatial);
    }
    let pair = |s: &Slice| s.uv.iter().zip(&s.vol).map(|(a, b)| a * b).sum::<f64>();
    let first = &slices[0];
    let last = &slices[slices.len() - 1];
    let rhs = pair(last) - pair(first);
    let scale = slices
        .iter()
        .map(|s| s.uv.iter().zip(&s.vol).map(|(a, b)| a.abs() * b).sum::<f64>())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    Ok(Report::equal("ibp-identity", lhs, rhs, tolerance * scale)
        .with("scale", scale)
        .at(u.times[idx[0]]))
}

/// `P_{rt}(P_{sr}u) = P_{st}u`; the LHS is the relative sup-norm gap.
pub fn semigroup_check(
    flow: &FlowHistory,
    u: &[f64],
    s: f64,
    r: f64,
    t: f64,
    cfl_fraction: f64,
    tolerance: f64,
) -> Result<Report> {
    let direct = forward_evolve(flow, u, s, t, cfl_fraction)?;
    let mid = forward_evolve(flow, u, s, r, cfl_fraction)?;
    let two = forward_evolve(flow, &mid, r, t, cfl_fraction)?;
    let scale = direct.iter().fold(0.0, |m: f64, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let gap = direct
        .iter()
        .zip(&two)
        .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
    Ok(Report::upper("semigroup", gap / scale, 0.0, tolerance).at(s).with("r", r).with("t", t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{evolve_conformal_torus, make_flat_torus, make_shrinking_sphere};
    use crate::geometry::GridMesh;
    use crate::heatkernel::solver::{backward_solve, forward_solve, Stepper};
    use std::f64::consts::PI;

    fn conformal(res: usize, eps: f64, horizon: f64) -> FlowHistory {
        let mesh = GridMesh::new(2, res, 2.0 * PI).unwrap();
        let u0: Vec<f64> = (0..mesh.len())
            .map(|i| {
                let p = mesh.position(i);
                eps * (p[0].cos() + 0.5 * (p[1] + 0.3).sin() + 0.3 * (p[0] + p[1]).cos())
            })
            .collect();
        evolve_conformal_torus(&mesh, &u0, horizon, &Default::default()).unwrap()
    }

    #[test]
    fn flat_duality_is_symmetric() {
        let flow = make_flat_torus(2, 2.0 * PI, 32, 1.0).unwrap();
        let r = duality_check(&flow, 37, 0.0, 400, -0.5, &KernelOptions::default(), 1e-3).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.details["relative_discrepancy"] < 1e-10);
    }

    #[test]
    fn sphere_duality_is_exact() {
        let flow = make_shrinking_sphere(1.5, 1.0, 64, 1).unwrap();
        let r = duality_check(&flow, 0, -0.2, 7, -0.8, &KernelOptions::default(), 1e-10).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn conformal_mass_growth() {
        let flow = conformal(24, 0.3, 0.5);
        let rho = initial_curvature_deficit(&flow);
        assert!(rho > 0.0);
        let times: Vec<f64> = flow.times().iter().cloned().filter(|&t| t > -0.3).step_by(20).collect();
        let fk = forward_kernel(&flow, 11, -0.4, &times, &KernelOptions::default()).unwrap();
        let r = mass_growth_check(&flow, &fk, 1e-9).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    fn fourier_bochner(res: usize) -> (f64, f64) {
        let flow = make_flat_torus(2, 2.0 * PI, res, 0.2).unwrap();
        let mesh = flow.mesh().as_grid().unwrap().clone();
        let u: Vec<f64> = (0..mesh.len()).map(|i| mesh.position(i)[0].sin()).collect();
        let st = Stepper::new(&flow, &[-0.2], 0.8).unwrap();
        let times: Vec<f64> = st.times()[..20].to_vec();
        let field = forward_solve(&flow, &u, -0.2, &times, 0.8).unwrap();
        let res = bochner_residual(&flow, &field).unwrap();
        (res.max_l2(), mesh.spacing())
    }

    #[test]
    fn bochner_residual_of_fourier_mode_is_second_order() {
        let (coarse, h) = fourier_bochner(32);
        let (fine, _) = fourier_bochner(64);
        assert!(coarse < 3.0 * h * h, "{coarse}");
        assert!(coarse / fine > 3.5, "{coarse} {fine}");
        let flow = make_flat_torus(2, 2.0 * PI, 16, 0.2).unwrap();
        let st = Stepper::new(&flow, &[-0.2], 0.8).unwrap();
        let times: Vec<f64> = st.times()[..5].to_vec();
        let constant = forward_solve(&flow, &vec![3.0; 256], -0.2, &times, 0.8).unwrap();
        assert!(bochner_residual(&flow, &constant).unwrap().max_l2() < 1e-12);
    }

    #[test]
    fn ibp_with_constants_tracks_volume() {
        let flow = conformal(16, 0.3, 0.2);
        let times = flow.times();
        let ones = HeatField {
            direction: crate::heatkernel::Direction::Forward,
            times: times.clone(),
            values: vec![vec![1.0; 256]; times.len()],
        };
        let r = ibp_identity_check(&flow, &ones, &ones, -0.2, 0.0, 1e-3).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn ibp_caloric_pair() {
        let flow = conformal(16, 0.3, 0.2);
        let times = flow.times();
        let mesh = flow.mesh().as_grid().unwrap().clone();
        let a: Vec<f64> = (0..mesh.len()).map(|i| 1.0 + 0.5 * mesh.position(i)[1].cos()).collect();
        let u = forward_solve(&flow, &a, -0.2, &times, 0.8).unwrap();
        let v = backward_solve(&flow, &a, 0.0, &times, 0.8).unwrap();
        let r = ibp_identity_check(&flow, &u, &v, -0.2, 0.0, 1e-3).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.rhs.abs() < 1e-12 * r.details["scale"]);
    }

    #[test]
    fn semigroup_on_conformal_flow() {
        let flow = conformal(16, 0.2, 0.2);
        let mesh = flow.mesh().as_grid().unwrap().clone();
        let u: Vec<f64> = (0..mesh.len()).map(|i| mesh.position(i)[0].sin()).collect();
        let times = flow.times();
        let r = semigroup_check(&flow, &u, -0.2, times[times.len() / 2], 0.0, 0.8, 1e-12).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
