//! Pointwise and integral kernel estimates: Zhang's spatial Harnack bound,
//! the on-diagonal upper and Gaussian lower kernel bounds, the average
//! Gaussian upper bound, the moment bounds on the kernel potential and the
//! Lipschitz dependence of the Nash entropy on the basepoint.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::entropy::mu::{default_tau_min, MuOptions, MuTable};
use crate::error::{LabError, Result};
use crate::flow::FlowHistory;
use crate::geometry::distance::{geodesic_distance, geodesic_distances_from};
use crate::geometry::{Backend, Mesh, Payload, PointSet, SliceGeom};
use crate::heatkernel::{
    image_sum_kernel, initial_curvature_deficit, series_kernel, solve_conjugate_kernel, HeatField,
    KernelHistory, KernelOptions, KernelSlice, POTENTIAL_CAP,
};
use crate::par;
use crate::report::Report;

/// `|∇ √log(sup u / u)| ≤ 1/√(t − t1)` at every stored time in `(t1, t2]`,
/// with the sup over the stored samples in `[t1, t2]`.
pub fn zhang_gradient_check(flow: &FlowHistory, u: &HeatField, t1: f64, t2: f64, tolerance: f64) -> Result<Report> {
    let inside = |t: f64| t >= t1 - 1e-12 * t1.abs().max(1.0) && t <= t2 + 1e-12 * t2.abs().max(1.0);
    let mut sup = f64::NEG_INFINITY;
    for (t, v) in u.times.iter().zip(&u.values) {
        if inside(*t) {
            if let Some(bad) = v.iter().find(|&&x| !(x > 0.0)) {
                return Err(LabError::InvalidParameter(format!(
                    "Zhang's estimate needs a positive solution (found {bad} at t = {t})"
                )));
            }
            sup = v.iter().cloned().fold(sup, f64::max);
        }
    }
    let mut worst = (0.0f64, f64::NAN, 0usize);
    for (t, v) in u.times.iter().zip(&u.values) {
        if !inside(*t) || *t <= t1 {
            continue;
        }
        let metric = flow.metric_at(*t)?;
        let geom = SliceGeom::new(flow.mesh(), &metric)?;
        let g: Vec<f64> = v.iter().map(|x| (sup / x).ln().max(0.0).sqrt()).collect();
        let scale = (t - t1).sqrt();
        for (i, grad) in geom.gradient(&g).chunks(geom.dim()).enumerate() {
            let val = grad.iter().map(|c| c * c).sum::<f64>().sqrt() * scale;
            if val > worst.0 {
                worst = (val, *t, i);
            }
        }
    }
    if worst.1.is_nan() {
        return Err(LabError::InvalidParameter(format!("no samples in ({t1}, {t2}]")));
    }
    Ok(Report::upper("zhang-gradient", worst.0, 1.0, tolerance)
        .at(worst.1)
        .with("node", worst.2 as f64)
        .with("sup_u", sup)
        .with("t1", t1))
}

/// `μ(g(−T), τ)` over `τ ∈ [τ_min, 2T]`, the constant in both kernel bounds.
pub fn kernel_bound_mu_table(flow: &FlowHistory, count: usize, opts: &MuOptions) -> Result<MuTable> {
    let geom = flow.geom(0);
    let lo = default_tau_min(&geom);
    MuTable::geometric(&geom, lo, (2.0 * flow.horizon()).max(2.0 * lo), count, opts)
}

/// `∫_0^τ √σ R(y, t_b − σ) dσ` at each requested `τ` (ascending), per node.
fn curvature_integrals(flow: &FlowHistory, base_time: f64, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
    let len = flow.mesh().len();
    let tau_max = taus.last().cloned().unwrap_or(0.0);
    // Quadrature nodes in σ: stored slices where the metric changes
    // per step, a uniform grid otherwise.
    let sigmas: Vec<f64> = match flow.backend() {
        Backend::ConformalTorus => {
            let mut v: Vec<f64> = flow
                .times()
                .iter()
                .filter(|&&t| t <= base_time + 1e-12 && base_time - t <= tau_max * (1.0 + 1e-12) + 1e-12)
                .map(|&t| (base_time - t).max(0.0))
                .collect();
            v.reverse();
            v
        }
        _ => (0..=256).map(|j| tau_max * j as f64 / 256.0).collect(),
    };
    let curv: Vec<Vec<f64>> = par::map_slice(&sigmas, |&sg| {
        let t = match flow.backend() {
            Backend::ConformalTorus => flow.times()[flow.nearest_index(base_time - sg)],
            _ => base_time - sg,
        };
        let metric = flow.metric_at(t)?;
        Ok(SliceGeom::new(flow.mesh(), &metric)?.scalar_curvature())
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(taus.len());
    let mut acc = vec![0.0; len];
    let mut k = 0;
    for &tau in taus {
        while k + 1 < sigmas.len() && sigmas[k + 1] <= tau {
            let (a, b) = (sigmas[k], sigmas[k + 1]);
            for i in 0..len {
                acc[i] += 0.5 * (b - a) * (a.sqrt() * curv[k][i] + b.sqrt() * curv[k + 1][i]);
            }
            k += 1;
        }
        let mut row = acc.clone();
        if tau > sigmas[k] && k + 1 < sigmas.len() {
            // Partial interval, linear in σ.
            let (a, b) = (sigmas[k], sigmas[k + 1]);
            let w = (tau - a) / (b - a);
            for i in 0..len {
                let rt = curv[k][i] + w * (curv[k + 1][i] - curv[k][i]);
                row[i] += 0.5 * (tau - a) * (a.sqrt() * curv[k][i] + tau.sqrt() * rt);
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Densities below this fraction of the sample maximum are not resolved.
const DENSITY_FLOOR: f64 = 1e-13;

/// On-diagonal upper bound `H ≤ (4πτ)^{−n/2} e^{ρτ − μ}` and Gaussian lower bound
/// `H ≥ (8πτ)^{−n/2} exp(−4d²/τ − τ^{−1/2}∫_0^τ √σ R dσ − ρτ + μ)` over every
/// sample of `k` and every node. A verdict that flips across the μ interval
/// is reported as a failed hypothesis.
/// Lower bounds under the resolvable density floor are skipped.
pub fn kernel_bounds_check(flow: &FlowHistory, k: &KernelHistory, table: &MuTable, tolerance: f64) -> Result<[Report; 2]> {
    let n = k.dim as f64;
    let rho = initial_curvature_deficit(flow);
    let (mu_lo, mu_hi) = table
        .infimum(0.0, 2.0 * flow.horizon())
        .unwrap_or((f64::NEG_INFINITY, f64::NEG_INFINITY));
    let base = flow.metric_at(k.base_time)?;
    let base_geom = SliceGeom::new(flow.mesh(), &base)?;
    let dist = geodesic_distances_from(&base_geom, &[k.basepoint]);
    let taus: Vec<f64> = k.samples.iter().rev().map(|smp| k.base_time - smp.s).collect();
    let integrals = curvature_integrals(flow, k.base_time, &taus)?;
    // (log-ratio, lhs, rhs, s, node) of the tightest case of each bound.
    let mut up = (f64::NEG_INFINITY, 0.0, 0.0, 0.0, 0usize);
    let mut low = (f64::NEG_INFINITY, 0.0, 0.0, 0.0, 0usize);
    for (j, smp) in k.samples.iter().rev().enumerate() {
        let tau = taus[j];
        // Below this the density is roundoff (series truncation, solver noise).
        let floor = (DENSITY_FLOOR * smp.density.iter().cloned().fold(0.0, f64::max)).ln();
        let ln_up = -0.5 * n * (4.0 * PI * tau).ln() + rho * tau - mu_hi;
        let ln_low_base = -0.5 * n * (8.0 * PI * tau).ln() - rho * tau + mu_hi;
        for (i, &h) in smp.density.iter().enumerate() {
            let lh = if h > 0.0 { h.ln() } else { f64::NEG_INFINITY };
            if lh - ln_up > up.0 {
                up = (lh - ln_up, h, ln_up.exp(), smp.s, i);
            }
            let ln_low = ln_low_base - 4.0 * dist[i] * dist[i] / tau - integrals[j][i] / tau.sqrt();
            if ln_low < floor {
                continue;
            }
            if ln_low - lh > low.0 {
                low = (ln_low - lh, ln_low.exp(), h, smp.s, i);
            }
        }
    }
    let width = mu_hi - mu_lo;
    let upper = Report::upper("kernel-upper", up.1, up.2, tolerance * up.2)
        .at(up.3)
        .based_at(k.basepoint)
        .with("node", up.4 as f64)
        .with("rho", rho)
        .with("mu", mu_hi)
        .with("mu_lower", mu_lo);
    let lower = Report::upper("kernel-lower", low.1, low.2, tolerance * low.2)
        .at(low.3)
        .based_at(k.basepoint)
        .with("node", low.4 as f64)
        .with("rho", rho)
        .with("mu", mu_hi)
        .with("mu_lower", mu_lo);
    let settle = |r: Report, log_gap: f64| {
        if !mu_hi.is_finite() {
            r.hypothesis_failed("mu_unavailable", 0.0)
        } else if !r.passed() && log_gap <= width + (1.0 + tolerance).ln() {
            // Would pass with the lower end of the μ interval.
            r.hypothesis_failed("mu_interval", width)
        } else {
            r
        }
    };
    Ok([settle(upper, up.0), settle(lower, low.0)])
}

/// Average Gaussian upper bound for the kernel `k` based at `x2` (time 0):
/// `⨍_{B_r(x1,0)} H_{x2}(s) dvol_s ≤ C′ τ^{−n/2} exp(−D²/(C′τ))` with `r² = τ`,
/// `D = dist_{g(s)}(B_r(x1,0), B_r(x2,0))`. Passes at the smallest `C′` of the
/// sweep that works; the exact minimal `C′` and the distance distortion
/// constant `D / d_{g(0)}(x1, x2)` are reported alongside.
pub fn avg_gaussian_upper_check(flow: &FlowHistory, k: &KernelHistory, x1: usize, s: f64, sweep: &[f64]) -> Result<Report> {
    let j = k.index_of(s)?;
    let ks = k.view(flow, j)?;
    let tau = ks.tau;
    let n = k.dim as i32;
    let r = tau.sqrt();
    let g0_metric = flow.metric_at(k.base_time)?;
    let g0 = SliceGeom::new(flow.mesh(), &g0_metric)?;
    let ball = |x: usize| -> Result<PointSet> {
        let d = geodesic_distances_from(&g0, &[x]);
        let nodes: Vec<usize> = (0..d.len()).filter(|&i| d[i] <= r).collect();
        PointSet::new(nodes, k.base_time, flow.mesh())
    };
    let (b1, b2) = (ball(x1)?, ball(k.basepoint)?);
    let geom = ks.geom();
    let vol = geom.volume_weights();
    let h = ks.density();
    let vol_b1: f64 = b1.nodes().iter().map(|&i| vol[i]).sum();
    let avg = b1.nodes().iter().map(|&i| h[i] * vol[i]).sum::<f64>() / vol_b1;
    let big_d = geodesic_distance(&geom, &b1, &b2);
    let d0 = geodesic_distances_from(&g0, &[k.basepoint])[x1];
    let bound = |c: f64| c * tau.powi(-n).sqrt() * (-big_d * big_d / (c * tau)).exp();
    // The bound increases with C′, so bisect in log C′.
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bound(mid.exp()) >= avg {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let c_min = hi.exp();
    let mut sorted = sweep.to_vec();
    sorted.sort_by(f64::total_cmp);
    let chosen = sorted
        .iter()
        .cloned()
        .find(|&c| bound(c) >= avg)
        .or_else(|| sorted.last().cloned())
        .ok_or_else(|| LabError::InvalidParameter("empty C′ sweep".into()))?;
    let nu = crate::inequalities::probability(&ks);
    let near = geodesic_distances_from(&geom, &[k.basepoint]);
    let nu_ball: f64 = (0..nu.len()).filter(|&i| near[i] <= r).map(|i| nu[i]).sum();
    Ok(Report::upper("average-gaussian-upper", avg, bound(chosen), 0.0)
        .at(ks.sample.s)
        .based_at(k.basepoint)
        .with("x1", x1 as f64)
        .with("c_prime", chosen)
        .with("min_c_prime", c_min)
        .with("ball_distance", big_d)
        .with("distortion_c_prime", if d0 > 0.0 { big_d / d0 } else { 0.0 })
        .with("nu_x2_ball_s", nu_ball))
}

/// `μ(g(s), τ)` over `τ ∈ [τ_min, 2|s|]`, the entropy hypothesis of the moment
/// bounds and of the kernel gradient estimate.
pub fn moment_mu_table(flow: &FlowHistory, s: f64, base_time: f64, count: usize, opts: &MuOptions) -> Result<MuTable> {
    let metric = flow.metric_at(s)?;
    let geom = SliceGeom::new(flow.mesh(), &metric)?;
    let lo = default_tau_min(&geom);
    MuTable::geometric(&geom, lo, (2.0 * (base_time - s)).max(2.0 * lo), count, opts)
}

/// Moment bounds on the kernel potential under `R|s| ≥ −C`, `μ ≥ −C`:
/// `∫f dν ∈ [n/2 − C, n/2]`, `∫|∇f|² dν ≤ (n/2 + C)/|s|`, `∫f² dν ≤ 2(n + 2C)²`,
/// and the Poincaré chain `∫f² dν ≤ 2|s|∫|∇f|² dν + (∫f dν)²`.
pub fn moment_bounds_check(ks: &KernelSlice, c: f64, table: &MuTable, tolerance: f64) -> Vec<Report> {
    let n = ks.dim as f64;
    let tau = ks.tau;
    let geom = ks.geom();
    let m = ks.measure();
    let mass: f64 = m.iter().sum();
    let f = ks.potential();
    let f1 = m.iter().zip(&f).map(|(w, v)| w * v).sum::<f64>() / mass;
    let f2 = m.iter().zip(&f).map(|(w, v)| w * v * v).sum::<f64>() / mass;
    let grad = ks.fisher() / mass;
    let r_min = geom.scalar_curvature().iter().cloned().fold(f64::INFINITY, f64::min);
    let c_r = -r_min * tau;
    let mu = table.infimum(0.0, 2.0 * tau);
    let s = ks.sample.s;
    let reports = vec![
        Report::upper("moment-f-upper", f1, 0.5 * n, tolerance),
        Report::upper("moment-f-lower", 0.5 * n - c, f1, tolerance),
        Report::upper("moment-gradient", grad, (0.5 * n + c) / tau, tolerance / tau),
        Report::upper("moment-f-square", f2, 2.0 * (n + 2.0 * c).powi(2), tolerance),
        Report::upper("moment-poincare-chain", f2, 2.0 * tau * grad + f1 * f1, tolerance),
    ];
    reports
        .into_iter()
        .map(|r| {
            let r = r.at(s).with("C", c).with("C_R", c_r);
            match mu {
                None => r.hypothesis_failed("mu_unavailable", 0.0),
                Some((lower, upper)) => {
                    let r = r.with("mu_lower", lower).with("mu", upper);
                    if c_r > c {
                        r.hypothesis_failed("curvature_hypothesis", c_r)
                    } else if lower < -c {
                        r.hypothesis_failed("mu_hypothesis", lower)
                    } else {
                        r
                    }
                }
            }
        })
        .collect()
}

/// How kernels are produced for a batch of basepoints.
#[derive(Clone, Debug)]
pub enum KernelSource {
    /// Image sums on flat tori, the Legendre series on spheres.
    Analytic,
    Solved(KernelOptions),
}

impl KernelSource {
    /// Kernel based at `(x, 0)` with a sample at each of `times`.
    pub fn kernel(&self, flow: &FlowHistory, x: usize, times: &[f64]) -> Result<KernelHistory> {
        match self {
            KernelSource::Analytic => match flow.backend() {
                Backend::FlatTorus => image_sum_kernel(flow, x, 0.0, times),
                Backend::ShrinkingSphere => {
                    if x != 0 {
                        return Err(LabError::Unsupported(
                            "sphere kernels are based at the north pole (basepoint 0)".into(),
                        ));
                    }
                    series_kernel(flow, 0.0, times)
                }
                Backend::ConformalTorus => Err(LabError::Unsupported(
                    "conformal flows have no closed-form kernel".into(),
                )),
            },
            KernelSource::Solved(opts) => {
                let opts = KernelOptions {
                    base_time: 0.0,
                    extra_times: times.to_vec(),
                    ..opts.clone()
                };
                solve_conjugate_kernel(flow, x, &opts)
            }
        }
    }
}

/// Basepoint dependence of the kernel at time `s` over the sub-lattice of
/// every `stride`-th node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashLipschitz {
    pub s: f64,
    pub stride: usize,
    pub basepoints: Vec<usize>,
    pub nash: Vec<f64>,
    /// `I(x)·|s|^{1/2}` with `I = ∫ |∇_x(f_x H_x)| dvol_s`.
    pub integral: Vec<f64>,
    /// Smallest `C′` with `|∇_x f_x|² ≤ C′(C′ + f_x)/|s|`, per basepoint.
    pub gradient_constant: Vec<f64>,
    /// `max |N_{x1} − N_{x2}| |s|^{1/2} / d_{g(0)}(x1, x2)` over lattice neighbours.
    pub nash_constant: f64,
    /// `max ‖f_{x1}H_{x1} − f_{x2}H_{x2}‖_{L¹} |s|^{1/2} / d_{g(0)}(x1, x2)`.
    pub l1_constant: f64,
}

impl NashLipschitz {
    pub fn integral_constant(&self) -> f64 {
        self.integral.iter().cloned().fold(0.0, f64::max)
    }

    pub fn gradient_constant_max(&self) -> f64 {
        self.gradient_constant.iter().cloned().fold(0.0, f64::max)
    }

    /// The Nash difference quotient is bounded by the `L¹` quotient of
    /// `f_x H_x` (triangle inequality); the constants are reported alongside.
    pub fn reports(&self) -> Vec<Report> {
        vec![Report::upper("nash-lipschitz", self.nash_constant, self.l1_constant, 1e-12 * self.l1_constant.max(1e-300))
            .at(self.s)
            .with("integral_constant", self.integral_constant())
            .with("gradient_c_prime", self.gradient_constant_max())
            .with("stride", self.stride as f64)]
    }
}

/// Empirical Lipschitz constants of `x ↦ f_x(s) H_x(s)` and `x ↦ N_x(s)` from
/// one kernel per basepoint, with centered differences over the basepoint
/// lattice measured in `g(0)`. Grids only: zonal spheres are symmetric in the
/// basepoint.
pub fn nash_lipschitz_estimate(flow: &FlowHistory, stride: usize, s: f64, source: &KernelSource) -> Result<NashLipschitz> {
    let g = match flow.mesh() {
        Mesh::Grid(g) => g,
        Mesh::Sphere(_) => {
            return Err(LabError::Unsupported(
                "zonal kernels cannot move the basepoint".into(),
            ))
        }
    };
    if stride == 0 || g.res() % stride != 0 || g.res() / stride < 3 {
        return Err(LabError::InvalidParameter(format!(
            "stride {stride} must divide the resolution {} at least three times",
            g.res()
        )));
    }
    let dim = g.dim();
    let basepoints: Vec<usize> = (0..g.len())
        .filter(|&i| g.coords(i)[..dim].iter().all(|c| c % stride == 0))
        .collect();
    let lattice_index = |i: usize| basepoints.binary_search(&i).expect("lattice node");
    // (f·H, f, H, N) per basepoint.
    let fields: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> = par::map_slice(&basepoints, |&x| {
        let k = source.kernel(flow, x, &[s])?;
        let ks = k.view(flow, k.index_of(s)?)?;
        let f = ks.potential();
        let h = ks.density().to_vec();
        let m = ks.measure();
        let nash = m.iter().zip(&f).map(|(w, v)| w * v).sum::<f64>() - 0.5 * dim as f64 * m.iter().sum::<f64>();
        let fh = f.iter().zip(&h).map(|(a, b)| if *b > 0.0 { a * b } else { 0.0 }).collect();
        Ok((fh, f, h, nash))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let metric_s = flow.metric_at(s)?;
    let vol = SliceGeom::new(flow.mesh(), &metric_s)?.volume_weights();
    let metric0 = flow.metric_at(0.0)?;
    let g0 = SliceGeom::new(flow.mesh(), &metric0)?;
    let conformal0 = match &metric0.payload {
        Payload::Conformal(u) => Some(u.clone()),
        _ => None,
    };
    let tau = -s;
    let step = stride as isize;
    let per_basepoint: Vec<(f64, f64, f64, f64)> = par::map_range(basepoints.len(), |b| {
        let x = basepoints[b];
        let spacing = 2.0 * stride as f64 * g.spacing() * conformal0.as_ref().map_or(1.0, |u| u[x].exp());
        let len = g.len();
        let mut grad_fh = vec![0.0; len];
        let mut grad_f = vec![0.0; len];
        let mut valid = vec![true; len];
        for axis in 0..dim {
            let p = lattice_index(g.neighbor(x, axis, step));
            let m = lattice_index(g.neighbor(x, axis, -step));
            for y in 0..len {
                let dfh = (fields[p].0[y] - fields[m].0[y]) / spacing;
                let df = (fields[p].1[y] - fields[m].1[y]) / spacing;
                grad_fh[y] += dfh * dfh;
                grad_f[y] += df * df;
                valid[y] &= fields[p].2[y] > 0.0
                    && fields[m].2[y] > 0.0
                    && fields[p].1[y] < POTENTIAL_CAP
                    && fields[m].1[y] < POTENTIAL_CAP;
            }
        }
        let integral: f64 = (0..len).map(|y| grad_fh[y].sqrt() * vol[y]).sum::<f64>() * tau.sqrt();
        let own = &fields[b];
        let c_prime = (0..len)
            .filter(|&y| valid[y] && own.2[y] > 0.0 && own.1[y] < POTENTIAL_CAP)
            .map(|y| {
                let f = own.1[y];
                0.5 * (-f + (f * f + 4.0 * tau * grad_f[y]).sqrt())
            })
            .fold(0.0, f64::max);
        // Forward neighbours only, so each pair is counted once.
        let d0 = geodesic_distances_from(&g0, &[x]);
        let mut nash_q = 0.0f64;
        let mut l1_q = 0.0f64;
        for axis in 0..dim {
            let q = g.neighbor(x, axis, step);
            let other = &fields[lattice_index(q)];
            let d = d0[q];
            nash_q = nash_q.max((own.3 - other.3).abs() * tau.sqrt() / d);
            let l1: f64 = (0..len).map(|y| (own.0[y] - other.0[y]).abs() * vol[y]).sum();
            l1_q = l1_q.max(l1 * tau.sqrt() / d);
        }
        (integral, c_prime, nash_q, l1_q)
    });
    Ok(NashLipschitz {
        s,
        stride,
        nash: fields.iter().map(|f| f.3).collect(),
        basepoints,
        integral: per_basepoint.iter().map(|p| p.0).collect(),
        gradient_constant: per_basepoint.iter().map(|p| p.1).collect(),
        nash_constant: per_basepoint.iter().map(|p| p.2).fold(0.0, f64::max),
        l1_constant: per_basepoint.iter().map(|p| p.3).fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::make_flat_torus;

    #[test]
    fn flat_gradient_constant_is_one() {
        let flow = make_flat_torus(2, 12.0, 48, 1.0).unwrap();
        let est = nash_lipschitz_estimate(&flow, 4, -0.5, &KernelSource::Analytic).unwrap();
        // The wrap leaves N ~ e^{-18}.
        assert!(est.nash.iter().all(|v| v.abs() < 1e-7));
        assert!(est.nash_constant < 1e-7);
        let c = est.gradient_constant_max();
        assert!(c < 1.0 && c > 0.9, "{c}");
        assert!(est.reports()[0].passed());
    }
}
