//! Closed-form kernels: the image sum on static flat tori and the zonal
//! Legendre series on the shrinking sphere. Both carry exact potential
//! derivatives.

use std::f64::consts::PI;

use crate::error::{LabError, Result};
use crate::flow::FlowHistory;
use crate::geometry::{Backend, Mesh};

use super::{Channels, KernelHistory, KernelOrigin, KernelSample, POTENTIAL_CAP};

/// Per-axis log image sum: `(−log g, ∂ log-derivative pieces)` with
/// `g(x) = Σ_m exp(−(x + mL)²/(4τ))`. Returns `(f_a, ∂f_a, ∂²f_a)`.
fn axis_terms(x: f64, side: f64, tau: f64) -> (f64, f64, f64) {
    let images = ((160.0 * tau).sqrt() / side).ceil() as i64 + 1;
    let mut e = Vec::with_capacity((2 * images + 1) as usize);
    for m in -images..=images {
        let y = x + m as f64 * side;
        e.push((y, -y * y / (4.0 * tau)));
    }
    let max = e.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &(y, ex) in &e {
        let w = (ex - max).exp();
        let q = y / (2.0 * tau);
        z += w;
        s1 += w * -q;
        s2 += w * (q * q - 1.0 / (2.0 * tau));
    }
    let g1 = s1 / z;
    let g2 = s2 / z;
    (-(max + z.ln()), -g1, -(g2 - g1 * g1))
}

/// Heat kernel of a static flat torus at the given times, `x0` at `t_b`.
pub fn image_sum_kernel(flow: &FlowHistory, x0: usize, base_time: f64, times: &[f64]) -> Result<KernelHistory> {
    if flow.backend() != Backend::FlatTorus {
        return Err(LabError::Unsupported("the image sum needs a flat torus".into()));
    }
    let mesh = flow.mesh().as_grid().expect("flat tori live on grids");
    if x0 >= mesh.len() {
        return Err(LabError::InvalidParameter(format!("basepoint {x0} is not a mesh node")));
    }
    let n = mesh.dim();
    let res = mesh.res();
    let side = mesh.side();
    let h = mesh.spacing();
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.iter().any(|&s| !(s < base_time && s >= -flow.horizon() * (1.0 + 1e-12))) {
        return Err(LabError::InvalidParameter(
            "kernel times must lie in [-T, t_b)".into(),
        ));
    }
    let c0 = mesh.coords(x0);
    let samples = sorted
        .iter()
        .map(|&s| {
            let tau = base_time - s;
            // One table per axis offset: the kernel factorizes over axes.
            let table: Vec<(f64, f64, f64)> = (0..res)
                .map(|j| {
                    let mut d = j as f64 * h;
                    if d > 0.5 * side {
                        d -= side;
                    }
                    axis_terms(d, side, tau)
                })
                .collect();
            let shift = 0.5 * n as f64 * (4.0 * PI * tau).ln();
            let len = mesh.len();
            let mut potential = vec![0.0; len];
            let mut gradient = vec![0.0; len * n];
            let mut hessian = vec![0.0; len * n * n];
            let mut density = vec![0.0; len];
            for i in 0..len {
                let c = mesh.coords(i);
                let mut f = 0.0;
                for a in 0..n {
                    let off = (c[a] + res - c0[a]) % res;
                    let (fa, da, dda) = table[off];
                    f += fa;
                    gradient[i * n + a] = da;
                    hessian[i * n * n + a * n + a] = dda;
                }
                potential[i] = f;
                density[i] = (-f - shift).exp();
            }
            KernelSample {
                s,
                density,
                channels: Some(Channels {
                    potential,
                    gradient,
                    hessian,
                }),
            }
        })
        .collect();
    Ok(KernelHistory {
        basepoint: x0,
        base_time,
        dim: n,
        epsilon0: sorted.iter().map(|s| base_time - s).fold(f64::INFINITY, f64::min),
        origin: KernelOrigin::ImageSum,
        samples,
    })
}

/// Smallest `t_b − s` the truncated series resolves (`40 r(−T)²/degree²`).
pub fn series_min_sigma(flow: &FlowHistory) -> f64 {
    let r = flow.slices()[0].radius().expect("sphere history");
    let d = flow.mesh().as_sphere().expect("sphere mesh").degree() as f64;
    40.0 * r * r / (d * d)
}

/// Conjugate heat kernel of the shrinking sphere based at the north pole at
/// time `t_b`, from
/// `H = Σ_l (2l+1)/(4π r(t_b)²) (r(t_b)²/r(s)²)^{(l(l+1)+2)/2} P_l(cos θ)`.
pub fn series_kernel(flow: &FlowHistory, base_time: f64, times: &[f64]) -> Result<KernelHistory> {
    let sph = match flow.mesh() {
        Mesh::Sphere(s) => s,
        Mesh::Grid(_) => return Err(LabError::Unsupported("the series kernel needs a sphere".into())),
    };
    let r0 = flow.final_radius().expect("sphere history");
    let r2 = |t: f64| r0 * r0 - 2.0 * t;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.iter().any(|&s| !(s < base_time && s >= -flow.horizon() * (1.0 + 1e-12))) {
        return Err(LabError::InvalidParameter(
            "kernel times must lie in [-T, t_b)".into(),
        ));
    }
    let samples = sorted
        .iter()
        .map(|&s| {
            let tau = base_time - s;
            let rs = r2(s).sqrt();
            let ln_ratio = (r2(base_time) / r2(s)).ln();
            let c: Vec<f64> = (0..=sph.degree())
                .map(|l| {
                    let p = (l * (l + 1)) as f64 + 2.0;
                    (2 * l + 1) as f64 / (4.0 * PI * r2(base_time)) * (0.5 * p * ln_ratio).exp()
                })
                .collect();
            let h = sph.synthesize(&c);
            let ht = sph.synthesize_dtheta(&c);
            let htt = sph.synthesize_dtheta2(&c);
            let hc = sph.synthesize_cot_dtheta(&c);
            let hmax = h.iter().cloned().fold(0.0, f64::max);
            let shift = (4.0 * PI * tau).ln();
            let len = h.len();
            let mut density = vec![0.0; len];
            let mut potential = vec![POTENTIAL_CAP; len];
            let mut gradient = vec![0.0; 2 * len];
            let mut hessian = vec![0.0; 4 * len];
            for i in 0..len {
                if !(h[i] > 1e-12 * hmax) {
                    continue;
                }
                density[i] = h[i];
                potential[i] = -h[i].ln() - shift;
                let ft = -ht[i] / h[i];
                let ftt = -htt[i] / h[i] + ft * ft;
                let fc = -hc[i] / h[i];
                gradient[2 * i] = ft / rs;
                hessian[4 * i] = ftt / (rs * rs);
                hessian[4 * i + 3] = fc / (rs * rs);
            }
            KernelSample {
                s,
                density,
                channels: Some(Channels {
                    potential,
                    gradient,
                    hessian,
                }),
            }
        })
        .collect();
    Ok(KernelHistory {
        basepoint: 0,
        base_time,
        dim: 2,
        epsilon0: series_min_sigma(flow),
        origin: KernelOrigin::Series,
        samples,
    })
}
