//! Explicit grid solvers for `□u = 0` and `□*v = 0`, and exact modal solvers
//! on the shrinking sphere.
//!
//! Backward steps advance the density `m = v dvol`, for which the conjugate
//! equation reads `-∂s m = Δ₀v · h^n` on both flat and conformal grids. This
//! conserves `Σ m` exactly and stays positive under the CFL bound. Forward
//! steps use the adjoint update, so `Σ u m` is preserved step by step.

use crate::error::{LabError, Result};
use crate::flow::{cfl_step, FlowHistory};
use crate::geometry::{grid, Backend, GridMesh, Mesh, SphereMesh};

use super::{Direction, HeatField, KernelHistory, KernelOrigin, KernelSample};

#[derive(Clone, Debug)]
pub struct KernelOptions {
    /// Mollification time; defaults to `max(4 dt, h²)`.
    pub epsilon0: Option<f64>,
    /// Stored samples per doubling of `t_b − s`.
    pub per_doubling: usize,
    /// Times that must be stored (snapped to the step grid on conformal flows).
    pub extra_times: Vec<f64>,
    /// Allowed drift of `∫H dvol` per unit time.
    pub mass_tolerance: f64,
    pub cfl_fraction: f64,
    pub base_time: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            epsilon0: None,
            per_doubling: 32,
            extra_times: Vec::new(),
            mass_tolerance: 1e-6,
            cfl_fraction: 0.8,
            base_time: 0.0,
        }
    }
}

/// Step grid along a grid-backed flow.
///
/// Flat tori get a piecewise uniform grid hitting every breakpoint exactly;
/// conformal flows reuse the stored flow steps.
pub struct Stepper<'a> {
    flow: &'a FlowHistory,
    mesh: &'a GridMesh,
    times: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(flow: &'a FlowHistory, breakpoints: &[f64], cfl_fraction: f64) -> Result<Self> {
        let mesh = flow
            .mesh()
            .as_grid()
            .ok_or_else(|| LabError::Unsupported("explicit stepping needs a grid mesh".into()))?;
        let horizon = flow.horizon();
        for &t in breakpoints {
            if !(t >= -horizon * (1.0 + 1e-12) && t <= 0.0) {
                return Err(LabError::InvalidParameter(format!(
                    "time {t} is outside [{}, 0]",
                    -horizon
                )));
            }
        }
        let times = match flow.backend() {
            Backend::FlatTorus => {
                let dt = cfl_step(mesh, None, cfl_fraction);
                let mut bp: Vec<f64> = breakpoints.iter().map(|t| t.max(-horizon)).collect();
                bp.push(-horizon);
                bp.push(0.0);
                bp.sort_by(f64::total_cmp);
                bp.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * horizon);
                let mut times = Vec::new();
                for w in bp.windows(2) {
                    let steps = ((w[1] - w[0]) / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                    for j in 0..steps {
                        times.push(w[0] + (w[1] - w[0]) * j as f64 / steps as f64);
                    }
                }
                times.push(0.0);
                times
            }
            Backend::ConformalTorus => flow.times(),
            Backend::ShrinkingSphere => unreachable!("sphere meshes are not grids"),
        };
        Ok(Self { flow, mesh, times })
    }

    pub fn mesh(&self) -> &GridMesh {
        self.mesh
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest step on the grid.
    pub fn max_step(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Index of the step time nearest `t`, if within half a local step.
    pub fn index_near(&self, t: f64) -> Result<usize> {
        let k = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => k,
            Err(k) => {
                if k == 0 {
                    0
                } else if k == self.times.len() {
                    k - 1
                } else if (self.times[k] - t).abs() < (t - self.times[k - 1]).abs() {
                    k
                } else {
                    k - 1
                }
            }
        };
        let local = [k.checked_sub(1), Some(k + 1)]
            .iter()
            .flatten()
            .filter(|&&j| j < self.times.len())
            .map(|&j| (self.times[j] - self.times[k]).abs())
            .fold(0.0, f64::max);
        if (self.times[k] - t).abs() <= 0.5 * local + 1e-12 * self.flow.horizon() {
            Ok(k)
        } else {
            Err(LabError::OffGrid(t))
        }
    }

    /// Conformal factor at step `k`, if any.
    pub fn factor(&self, k: usize) -> Option<&[f64]> {
        match self.flow.backend() {
            Backend::ConformalTorus => self.flow.slices()[k].conformal_factor(),
            _ => None,
        }
    }

    pub fn volume(&self, k: usize) -> Vec<f64> {
        let cell = self.mesh.cell_volume();
        match self.factor(k) {
            Some(u) => u.iter().map(|v| cell * (2.0 * v).exp()).collect(),
            None => vec![cell; self.mesh.len()],
        }
    }

    /// `u_{k+1} = u_k + dt e^{-2w_{k+1}} Δ₀ u_k`.
    pub fn forward_step(&self, k: usize, u: &[f64], out: &mut [f64], lap: &mut [f64]) {
        let dt = self.times[k + 1] - self.times[k];
        grid::laplacian(self.mesh, u, lap);
        match self.factor(k + 1) {
            Some(w) => {
                for i in 0..u.len() {
                    out[i] = u[i] + dt * (-2.0 * w[i]).exp() * lap[i];
                }
            }
            None => {
                for i in 0..u.len() {
                    out[i] = u[i] + dt * lap[i];
                }
            }
        }
    }

    /// `v_k = (v_{k+1} e^{2w_{k+1}} + dt Δ₀ v_{k+1}) e^{-2w_k}`.
    pub fn backward_step(&self, k: usize, v_next: &[f64], out: &mut [f64], lap: &mut [f64]) {
        let dt = self.times[k + 1] - self.times[k];
        grid::laplacian(self.mesh, v_next, lap);
        match (self.factor(k), self.factor(k + 1)) {
            (Some(w0), Some(w1)) => {
                for i in 0..v_next.len() {
                    out[i] = (v_next[i] * (2.0 * w1[i]).exp() + dt * lap[i]) * (-2.0 * w0[i]).exp();
                }
            }
            _ => {
                for i in 0..v_next.len() {
                    out[i] = v_next[i] + dt * lap[i];
                }
            }
        }
    }
}

/// Times `s = t_b − σ` with `σ` geometric from `eps` up to `horizon + t_b`,
/// `per_doubling` per factor two, plus `extra`; ascending and deduplicated.
/// Geometric samples within half a step of an extra time are dropped, so
/// neighbouring gaps stay comparable.
pub fn sample_times(base_time: f64, eps: f64, horizon: f64, per_doubling: usize, extra: &[f64]) -> Vec<f64> {
    let sigma_max = horizon + base_time;
    let ratio = 2f64.powf(1.0 / per_doubling.max(1) as f64);
    let extra: Vec<f64> = extra
        .iter()
        .cloned()
        .filter(|&s| s < base_time && s >= base_time - sigma_max)
        .collect();
    let crowded = |sigma: f64| {
        extra
            .iter()
            .any(|&s| ((base_time - s) / sigma).ln().abs() < 0.5 * ratio.ln())
    };
    let mut out = vec![base_time - sigma_max];
    let mut sigma = eps;
    while sigma < sigma_max * (1.0 - 1e-9) {
        if !crowded(sigma) {
            out.push(base_time - sigma);
        }
        sigma *= ratio;
    }
    out.extend(extra);
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * sigma_max);
    out
}

/// Frozen-metric Gaussian `(4πε)^{-n/2} exp(-e^{2u₀}|y − x0|²/(4ε))`,
/// renormalized to unit mass against `vol`.
fn mollified_delta(mesh: &GridMesh, x0: usize, eps: f64, u0: f64, vol: &[f64]) -> Result<Vec<f64>> {
    let n = mesh.dim();
    let scale = (2.0 * u0).exp() / (4.0 * eps);
    let mut h: Vec<f64> = (0..mesh.len())
        .map(|i| {
            let d = mesh.displacement(x0, i);
            let r2: f64 = d[..n].iter().map(|v| v * v).sum();
            (-scale * r2).exp()
        })
        .collect();
    let mass: f64 = h.iter().zip(vol).map(|(a, b)| a * b).sum();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(LabError::NotNormalizable(mass));
    }
    h.iter_mut().for_each(|v| *v /= mass);
    Ok(h)
}

/// Conjugate heat kernel `H(x0, t_b | ·, s)`. Grids integrate the density
/// form from a mollified delta; spheres use the exact zonal series (based at
/// the north pole, `x0 = 0`).
pub fn solve_conjugate_kernel(flow: &FlowHistory, x0: usize, opts: &KernelOptions) -> Result<KernelHistory> {
    if x0 >= flow.mesh().len() {
        return Err(LabError::InvalidParameter(format!("basepoint {x0} is not a mesh node")));
    }
    let mesh = match flow.mesh() {
        Mesh::Sphere(_) => {
            if x0 != 0 {
                return Err(LabError::Unsupported(
                    "sphere kernels are based at the north pole (basepoint 0)".into(),
                ));
            }
            let eps = super::analytic::series_min_sigma(flow);
            let times = sample_times(opts.base_time, eps, flow.horizon(), opts.per_doubling, &opts.extra_times);
            return super::analytic::series_kernel(flow, opts.base_time, &times);
        }
        Mesh::Grid(g) => g,
    };
    let h = mesh.spacing();
    let coarse = Stepper::new(flow, &[opts.base_time], opts.cfl_fraction)?;
    let eps_target = opts
        .epsilon0
        .unwrap_or_else(|| (4.0 * coarse.max_step()).max(h * h));
    if !(eps_target > 0.0) || opts.base_time - eps_target <= -flow.horizon() {
        return Err(LabError::InvalidParameter(format!(
            "mollification time {eps_target} does not fit in the flow interval"
        )));
    }
    let mut breaks = vec![opts.base_time, opts.base_time - eps_target];
    breaks.extend(opts.extra_times.iter().filter(|&&s| s < opts.base_time - eps_target));
    let st = Stepper::new(flow, &breaks, opts.cfl_fraction)?;
    let kb = st.index_near(opts.base_time)?;
    let tb = st.times()[kb];
    let k0 = st.times()[..kb]
        .iter()
        .rposition(|&t| t <= tb - eps_target + 1e-12 * flow.horizon())
        .ok_or_else(|| LabError::InvalidParameter("base time too close to -T".into()))?;
    let eps = tb - st.times()[k0];
    let extra: Vec<usize> = opts
        .extra_times
        .iter()
        .filter(|&&s| s <= st.times()[k0])
        .map(|&s| st.index_near(s))
        .collect::<Result<_>>()?;

    let u_base = st.factor(kb).map_or(0.0, |u| u[x0]);
    let mut cur = mollified_delta(mesh, x0, eps, u_base, &st.volume(k0))?;
    let mut next = vec![0.0; cur.len()];
    let mut lap = vec![0.0; cur.len()];
    let ratio = 2f64.powf(1.0 / opts.per_doubling.max(1) as f64);
    let mut samples = Vec::new();
    let mut last_sigma = eps;
    samples.push(KernelSample {
        s: st.times()[k0],
        density: cur.clone(),
        channels: None,
    });
    for k in (0..k0).rev() {
        st.backward_step(k, &cur, &mut next, &mut lap);
        std::mem::swap(&mut cur, &mut next);
        let s = st.times()[k];
        let sigma = tb - s;
        if k == 0 || extra.contains(&k) || sigma >= last_sigma * ratio {
            let min = cur.iter().cloned().fold(f64::INFINITY, f64::min);
            if min < 0.0 {
                return Err(LabError::Negativity { s, value: min });
            }
            let mass: f64 = cur.iter().zip(st.volume(k)).map(|(a, b)| a * b).sum();
            let tol = opts.mass_tolerance * sigma.max(1.0);
            if (mass - 1.0).abs() > tol {
                return Err(LabError::MassDrift {
                    s,
                    drift: mass - 1.0,
                    tol,
                });
            }
            samples.push(KernelSample {
                s,
                density: cur.clone(),
                channels: None,
            });
            last_sigma = sigma;
        }
    }
    samples.reverse();
    Ok(KernelHistory {
        basepoint: x0,
        base_time: tb,
        dim: mesh.dim(),
        epsilon0: eps,
        origin: KernelOrigin::Solved,
        samples,
    })
}

fn check_order(s: f64, times: &[f64], forward: bool) -> Result<()> {
    let ok = times
        .iter()
        .all(|&t| if forward { t >= s } else { t <= s });
    if ok {
        Ok(())
    } else {
        Err(LabError::InvalidParameter(format!(
            "sample times must lie {} {s}",
            if forward { "after" } else { "before" }
        )))
    }
}

/// Solution of `□u = 0` from `u(s) = u_s`, sampled at `times` (all `≥ s`).
pub fn forward_solve(flow: &FlowHistory, u_s: &[f64], s: f64, times: &[f64], cfl_fraction: f64) -> Result<HeatField> {
    check_order(s, times, true)?;
    check_len(flow, u_s)?;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    match flow.mesh() {
        Mesh::Sphere(sph) => {
            let values = sorted
                .iter()
                .map(|&t| sphere_modal(flow, sph, u_s, s, t, 0.0))
                .collect();
            Ok(HeatField {
                direction: Direction::Forward,
                times: sorted,
                values,
            })
        }
        Mesh::Grid(_) => {
            let mut bp = sorted.clone();
            bp.push(s);
            let st = Stepper::new(flow, &bp, cfl_fraction)?;
            let ks = st.index_near(s)?;
            let targets: Vec<usize> = sorted.iter().map(|&t| st.index_near(t)).collect::<Result<_>>()?;
            let field = march_forward(&st, ks, u_s.to_vec(), &targets);
            Ok(field)
        }
    }
}

fn march_forward(st: &Stepper, ks: usize, start: Vec<f64>, targets: &[usize]) -> HeatField {
    let mut cur = start;
    let mut next = vec![0.0; cur.len()];
    let mut lap = vec![0.0; cur.len()];
    let mut times = Vec::new();
    let mut values = Vec::new();
    let end = targets.iter().cloned().max().unwrap_or(ks);
    let mut k = ks;
    loop {
        for _ in targets.iter().filter(|&&j| j == k) {
            times.push(st.times()[k]);
            values.push(cur.clone());
        }
        if k >= end {
            break;
        }
        st.forward_step(k, &cur, &mut next, &mut lap);
        std::mem::swap(&mut cur, &mut next);
        k += 1;
    }
    HeatField {
        direction: Direction::Forward,
        times,
        values,
    }
}

/// `P_{st} u`.
pub fn forward_evolve(flow: &FlowHistory, u_s: &[f64], s: f64, t: f64, cfl_fraction: f64) -> Result<Vec<f64>> {
    let mut f = forward_solve(flow, u_s, s, &[t], cfl_fraction)?;
    Ok(f.values.pop().expect("one sample"))
}

/// Solution of `□*v = 0` backward from `v(t) = v_t`, sampled at `times`
/// (all `≤ t`), stored in ascending time order.
pub fn backward_solve(flow: &FlowHistory, v_t: &[f64], t: f64, times: &[f64], cfl_fraction: f64) -> Result<HeatField> {
    check_order(t, times, false)?;
    check_len(flow, v_t)?;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    match flow.mesh() {
        Mesh::Sphere(sph) => {
            let values = sorted
                .iter()
                .map(|&s| sphere_modal(flow, sph, v_t, t, s, 2.0))
                .collect();
            Ok(HeatField {
                direction: Direction::Backward,
                times: sorted,
                values,
            })
        }
        Mesh::Grid(_) => {
            let mut bp = sorted.clone();
            bp.push(t);
            let st = Stepper::new(flow, &bp, cfl_fraction)?;
            let kt = st.index_near(t)?;
            let targets: Vec<usize> = sorted.iter().map(|&s| st.index_near(s)).collect::<Result<_>>()?;
            let start = targets.iter().cloned().min().unwrap_or(kt);
            let mut cur = v_t.to_vec();
            let mut next = vec![0.0; cur.len()];
            let mut lap = vec![0.0; cur.len()];
            let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
            let mut k = kt;
            loop {
                for _ in targets.iter().filter(|&&j| j == k) {
                    out.push((st.times()[k], cur.clone()));
                }
                if k <= start {
                    break;
                }
                st.backward_step(k - 1, &cur, &mut next, &mut lap);
                std::mem::swap(&mut cur, &mut next);
                k -= 1;
            }
            out.reverse();
            Ok(HeatField {
                direction: Direction::Backward,
                times: out.iter().map(|p| p.0).collect(),
                values: out.into_iter().map(|p| p.1).collect(),
            })
        }
    }
}

fn check_len(flow: &FlowHistory, field: &[f64]) -> Result<()> {
    if field.len() != flow.mesh().len() {
        return Err(LabError::InvalidParameter(format!(
            "field has {} values for {} nodes",
            field.len(),
            flow.mesh().len()
        )));
    }
    Ok(())
}

/// Zonal modes evolve by `(r(later)²/r(earlier)²)^{(l(l+1) + shift)/2}`:
/// `shift = 0` for `□`, `2` for `□*` (the `R = 2/r²` term).
fn sphere_modal(flow: &FlowHistory, sph: &SphereMesh, data: &[f64], from: f64, to: f64, shift: f64) -> Vec<f64> {
    let r0 = flow.final_radius().expect("sphere history");
    let r2 = |t: f64| r0 * r0 - 2.0 * t;
    let (early, late) = if from <= to { (from, to) } else { (to, from) };
    let ln_ratio = (r2(late) / r2(early)).ln();
    let mut c = sph.analyze(data);
    for (l, a) in c.iter_mut().enumerate() {
        let p = (l * (l + 1)) as f64 + shift;
        *a *= (0.5 * p * ln_ratio).exp();
    }
    sph.synthesize(&c)
}

/// `H(·, t | y, s)` as a function of the first argument, from a mollified
/// delta at `(y, s)`.
#[derive(Clone, Debug)]
pub struct ForwardKernel {
    pub pole: usize,
    pub pole_time: f64,
    pub epsilon0: f64,
    pub field: HeatField,
}

/// Forward kernel with pole `(y, s)`, sampled at `times > s`. On spheres the
/// pole is the north pole (`y = 0`) and the series is exact.
pub fn forward_kernel(flow: &FlowHistory, y: usize, s: f64, times: &[f64], opts: &KernelOptions) -> Result<ForwardKernel> {
    check_order(s, times, true)?;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    match flow.mesh() {
        Mesh::Sphere(sph) => {
            if y != 0 {
                return Err(LabError::Unsupported(
                    "sphere kernels are based at the north pole (basepoint 0)".into(),
                ));
            }
            let r0 = flow.final_radius().expect("sphere history");
            let r2 = |t: f64| r0 * r0 - 2.0 * t;
            let values = sorted
                .iter()
                .map(|&t| {
                    let ln_ratio = (r2(t) / r2(s)).ln();
                    let c: Vec<f64> = (0..=sph.degree())
                        .map(|l| {
                            let p = (l * (l + 1)) as f64;
                            (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI * r2(s))
                                * (0.5 * p * ln_ratio).exp()
                        })
                        .collect();
                    sph.synthesize(&c)
                })
                .collect();
            Ok(ForwardKernel {
                pole: 0,
                pole_time: s,
                epsilon0: super::analytic::series_min_sigma(flow),
                field: HeatField {
                    direction: Direction::Forward,
                    times: sorted,
                    values,
                },
            })
        }
        Mesh::Grid(mesh) => {
            if y >= mesh.len() {
                return Err(LabError::InvalidParameter(format!("pole {y} is not a mesh node")));
            }
            let h = mesh.spacing();
            let coarse = Stepper::new(flow, &[s], opts.cfl_fraction)?;
            let eps_target = opts
                .epsilon0
                .unwrap_or_else(|| (4.0 * coarse.max_step()).max(h * h));
            let mut bp = sorted.clone();
            bp.push(s);
            bp.push((s + eps_target).min(0.0));
            let st = Stepper::new(flow, &bp, opts.cfl_fraction)?;
            let ks = st.index_near(s)?;
            let ts = st.times()[ks];
            let k1 = st
                .times()
                .iter()
                .position(|&t| t >= ts + eps_target - 1e-12 * flow.horizon())
                .ok_or_else(|| LabError::InvalidParameter("pole time too close to 0".into()))?;
            let eps = st.times()[k1] - ts;
            let targets: Vec<usize> = sorted.iter().map(|&t| st.index_near(t)).collect::<Result<_>>()?;
            if targets.iter().any(|&k| k < k1) {
                return Err(LabError::InvalidParameter(format!(
                    "sample times must be at least {eps} after the pole"
                )));
            }
            let u_pole = st.factor(ks).map_or(0.0, |u| u[y]);
            let start = mollified_delta(mesh, y, eps, u_pole, &st.volume(k1))?;
            let field = march_forward(&st, k1, start, &targets);
            Ok(ForwardKernel {
                pole: y,
                pole_time: ts,
                epsilon0: eps,
                field,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{evolve_conformal_torus, make_flat_torus, make_shrinking_sphere};
    use crate::geometry::SliceGeom;
    use std::f64::consts::PI;

    #[test]
    fn flat_steps_hit_breakpoints() {
        let flow = make_flat_torus(2, 2.0 * PI, 16, 1.0).unwrap();
        let st = Stepper::new(&flow, &[-0.5, -0.1234], 0.8).unwrap();
        assert_eq!(st.times()[0], -1.0);
        assert_eq!(*st.times().last().unwrap(), 0.0);
        for t in [-0.5, -0.1234] {
            let k = st.index_near(t).unwrap();
            assert!((st.times()[k] - t).abs() < 1e-15);
        }
        assert!(st.max_step() <= cfl_step(st.mesh(), None, 0.8) * (1.0 + 1e-9));
    }

    #[test]
    fn constants_are_caloric() {
        let flow = make_flat_torus(2, 2.0 * PI, 16, 1.0).unwrap();
        let u = forward_evolve(&flow, &vec![1.0; 256], -1.0, 0.0, 0.8).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn fourier_mode_decays() {
        let flow = make_flat_torus(1, 2.0 * PI, 64, 1.0).unwrap();
        let mesh = flow.mesh().as_grid().unwrap().clone();
        let u: Vec<f64> = (0..64).map(|i| mesh.position(i)[0].sin()).collect();
        let out = forward_evolve(&flow, &u, -1.0, -0.5, 0.8).unwrap();
        for i in 0..64 {
            let exact = (-0.5f64).exp() * u[i];
            assert!((out[i] - exact).abs() < 2e-3);
        }
    }

    #[test]
    fn forward_backward_pairing_is_exact() {
        let mesh = GridMesh::new(2, 16, 2.0 * PI).unwrap();
        let u0: Vec<f64> = (0..mesh.len())
            .map(|i| 0.2 * mesh.position(i)[0].cos() + 0.1 * mesh.position(i)[1].sin())
            .collect();
        let flow = evolve_conformal_torus(&mesh, &u0, 0.3, &Default::default()).unwrap();
        let times = flow.times();
        let (s, t) = (times[3], times[times.len() - 5]);
        let a: Vec<f64> = (0..mesh.len()).map(|i| 1.0 + mesh.position(i)[1].cos()).collect();
        let b: Vec<f64> = (0..mesh.len()).map(|i| 2.0 + mesh.position(i)[0].sin()).collect();
        let u = forward_evolve(&flow, &a, s, t, 0.8).unwrap();
        let v = backward_solve(&flow, &b, t, &[s], 0.8).unwrap();
        let g_t = SliceGeom::new(flow.mesh(), &flow.slices()[times.len() - 5]).unwrap();
        let g_s = SliceGeom::new(flow.mesh(), &flow.slices()[3]).unwrap();
        let lhs: f64 = g_t.integrate(&u.iter().zip(&b).map(|(x, y)| x * y).collect::<Vec<_>>());
        let rhs: f64 = g_s.integrate(&a.iter().zip(&v.values[0]).map(|(x, y)| x * y).collect::<Vec<_>>());
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs());
    }

    #[test]
    fn conformal_kernel_conserves_mass() {
        let mesh = GridMesh::new(2, 16, 2.0 * PI).unwrap();
        let u0: Vec<f64> = (0..mesh.len()).map(|i| 0.2 * mesh.position(i)[0].cos()).collect();
        let flow = evolve_conformal_torus(&mesh, &u0, 0.5, &Default::default()).unwrap();
        let k = solve_conjugate_kernel(&flow, 5, &KernelOptions::default()).unwrap();
        assert_eq!(k.samples[0].s, -0.5);
        for (j, smp) in k.samples.iter().enumerate() {
            let view = k.view(&flow, j).unwrap();
            assert!((view.mass() - 1.0).abs() < 1e-12);
            assert!(smp.density.iter().all(|&h| h >= 0.0));
        }
    }

    #[test]
    fn sphere_modal_solutions() {
        let flow = make_shrinking_sphere(1.5, 1.0, 16, 1).unwrap();
        let sph = flow.mesh().as_sphere().unwrap().clone();
        let one = vec![1.0; sph.len()];
        let u = forward_evolve(&flow, &one, -1.0, 0.0, 0.8).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-12));
        // □*1 = R ≠ 0, so v = r(t)²/r(s)² decays backward.
        let v = backward_solve(&flow, &one, 0.0, &[-1.0], 0.8).unwrap();
        let expected = 1.5f64.powi(2) / (1.5f64.powi(2) + 2.0);
        assert!(v.values[0].iter().all(|x| (x - expected).abs() < 1e-12));
    }

    #[test]
    fn sample_schedule_contains_extras() {
        let t = sample_times(0.0, 0.01, 1.0, 4, &[-0.3]);
        assert_eq!(t[0], -1.0);
        assert!(t.contains(&-0.3));
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!((t.last().unwrap() + 0.01).abs() < 1e-15);
    }
}
