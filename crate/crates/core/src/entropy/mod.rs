//! Entropy functionals along a flow: `W`, `μ`, the pointed entropy, the Nash
//! entropy and the soliton defect, with their monotonicity checks.

pub mod collapse;
pub mod mu;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::FlowHistory;
use crate::geometry::{Mesh, SliceGeom};
use crate::heatkernel::{KernelHistory, KernelSlice};
use crate::numerics::integrate_samples;
use crate::report::Report;

pub use collapse::{
    ball_volume, collapse_mu_table, log_sobolev_unweighted_check, no_local_collapse_check,
    NoCollapseOptions,
};
pub use mu::{default_tau_min, mu_entropy, mu_objective, MuEntry, MuOptions, MuResult, MuTable};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WValue {
    pub value: f64,
    /// Additive shift applied to `f` to reach unit mass.
    pub shift: f64,
}

/// `W(g, f, τ) = ∫ [τ(|∇f|² + R) + f − n] (4πτ)^{-n/2} e^{-f} dvol`.
///
/// `f` is first shifted so the measure has unit mass. On grids `∫|∇f|² dν`
/// uses the edge form `−Σ (H_b − H_a)(f_b − f_a)`, which equals the Fisher
/// information of the density when `f = −log H + c`.
pub fn w_functional(geom: &SliceGeom, f: &[f64], tau: f64) -> Result<WValue> {
    if !(tau > 0.0) {
        return Err(LabError::InvalidParameter(format!("τ must be positive (got {tau})")));
    }
    let n = geom.dim() as f64;
    let vol = geom.volume_weights();
    let norm = 0.5 * n * (4.0 * PI * tau).ln();
    let fmin = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let rel: f64 = f.iter().zip(&vol).map(|(v, w)| w * (fmin - v).exp()).sum();
    let shift = -fmin + rel.ln() - norm;
    if !shift.is_finite() {
        return Err(LabError::NotNormalizable(rel));
    }
    // H = (4πτ)^{-n/2} e^{-(f + shift)}
    let density: Vec<f64> = f.iter().map(|v| (-(v + shift) - norm).exp()).collect();
    let fisher = weighted_dirichlet(geom, f, &density);
    let r = geom.scalar_curvature();
    let value: f64 = (0..f.len())
        .map(|i| (tau * r[i] + f[i] + shift - n) * density[i] * vol[i])
        .sum::<f64>()
        + tau * fisher;
    Ok(WValue { value, shift })
}

/// `∫ |∇f|² H dvol` for `H ∝ e^{-f}`.
fn weighted_dirichlet(geom: &SliceGeom, f: &[f64], density: &[f64]) -> f64 {
    match geom.mesh {
        Mesh::Grid(g) => {
            let cell = g.cell_volume();
            let inv_h2 = 1.0 / (g.spacing() * g.spacing());
            let mut acc = 0.0;
            for axis in 0..g.dim() {
                for i in 0..f.len() {
                    let j = g.neighbor(i, axis, 1);
                    acc -= (density[j] - density[i]) * (f[j] - f[i]);
                }
            }
            acc * inv_h2 * cell
        }
        Mesh::Sphere(_) => {
            let vol = geom.volume_weights();
            let gsq = geom.grad_sq(f);
            (0..f.len()).map(|i| gsq[i] * density[i] * vol[i]).sum()
        }
    }
}

/// Pointed entropy `W`, Nash integral and soliton defect of one kernel sample.
pub fn slice_entropies(ks: &KernelSlice) -> (f64, f64, f64) {
    let n = ks.dim as f64;
    let tau = ks.tau;
    let geom = ks.geom();
    let measure = ks.measure();
    let f = ks.potential();
    let r = geom.scalar_curvature();
    let mass: f64 = measure.iter().sum();
    let f_int: f64 = measure.iter().zip(&f).map(|(m, v)| m * v).sum();
    let r_int: f64 = measure.iter().zip(&r).map(|(m, v)| m * v).sum();
    let w = tau * (ks.fisher() + r_int) + f_int - n * mass;
    let nash = f_int - 0.5 * n * mass;
    (w, nash, soliton_defect_slice(ks, &measure))
}

fn soliton_defect_slice(ks: &KernelSlice, measure: &[f64]) -> f64 {
    let n = ks.dim;
    let hess = ks.hessian_f();
    let k = ks.geom().ricci_factor();
    let shift = 0.5 / ks.tau;
    measure
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if *m == 0.0 {
                return 0.0;
            }
            let mut acc = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let mut v = hess[i * n * n + a * n + b];
                    if a == b {
                        v += k[i] - shift;
                    }
                    acc += v * v;
                }
            }
            acc * m
        })
        .sum()
}

/// `s ↦ (W_x(s), N_x(s), D_x(s))` over the samples of one kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyCurve {
    pub basepoint: usize,
    pub base_time: f64,
    /// Smallest trusted `t_b − s` of the kernel.
    pub epsilon0: f64,
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    /// `∫ f dν − n/2`.
    pub nash: Vec<f64>,
    pub defect: Vec<f64>,
}

impl EntropyCurve {
    pub fn tau(&self, j: usize) -> f64 {
        self.base_time - self.s[j]
    }

    pub fn index_of(&self, s: f64) -> Result<usize> {
        self.s
            .iter()
            .position(|&v| (v - s).abs() <= 1e-9 * s.abs().max(self.epsilon0))
            .ok_or(LabError::OffGrid(s))
    }

    /// Rows `s,W,N,D`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,W,N,D\n");
        for j in 0..self.s.len() {
            out.push_str(&format!(
                "{:?},{:?},{:?},{:?}\n",
                self.s[j], self.w[j], self.nash[j], self.defect[j]
            ));
        }
        out
    }

    /// Largest decrease of `W` and of `N` between consecutive samples as `s`
    /// increases; both should vanish.
    pub fn monotonicity_violations(&self) -> (f64, f64) {
        let worst = |v: &[f64]| {
            v.windows(2)
                .map(|w| (w[0] - w[1]).max(0.0))
                .fold(0.0, f64::max)
        };
        (worst(&self.w), worst(&self.nash))
    }
}

/// Entropy curve over all kernel samples, evaluated in parallel.
pub fn pointed_entropy_curve(flow: &FlowHistory, k: &KernelHistory) -> Result<EntropyCurve> {
    let rows = crate::par::map_range(k.samples.len(), |j| {
        k.view(flow, j).map(|v| slice_entropies(&v))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EntropyCurve {
        basepoint: k.basepoint,
        base_time: k.base_time,
        epsilon0: k.epsilon0,
        s: k.times(),
        w: rows.iter().map(|r| r.0).collect(),
        nash: rows.iter().map(|r| r.1).collect(),
        defect: rows.iter().map(|r| r.2).collect(),
    })
}

/// Both forms of the Nash entropy at one sample time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashPair {
    pub s: f64,
    /// `(1/τ) ∫_0^τ W dσ` from the entropy curve.
    pub time_average: f64,
    /// `∫ f dν − n/2`.
    pub integral: f64,
    pub gap: f64,
}

/// `N_x(s)` two ways. The curve is integrated in `σ = t_b − s` with
/// piecewise quadratics; on `[0, σ_first]` it is continued by the quadratic
/// through the origin and the first two samples (`W → 0` as `σ → 0`).
pub fn nash_entropy(curve: &EntropyCurve, s: f64) -> Result<NashPair> {
    let j = curve.index_of(s)?;
    let tau = curve.tau(j);
    // Samples with σ ≤ τ, in increasing σ.
    let mut sigma = Vec::new();
    let mut w = Vec::new();
    for i in (j..curve.s.len()).rev() {
        sigma.push(curve.tau(i));
        w.push(curve.w[i]);
    }
    let head = if sigma.len() >= 2 {
        let (s0, s1) = (sigma[0], sigma[1]);
        // W ≈ aσ + bσ² through both samples.
        let b = (w[1] / s1 - w[0] / s0) / (s1 - s0);
        let a = w[0] / s0 - b * s0;
        0.5 * a * s0 * s0 + b * s0 * s0 * s0 / 3.0
    } else {
        0.5 * sigma[0] * w[0]
    };
    let time_average = (head + integrate_samples(&sigma, &w)) / tau;
    let integral = curve.nash[j];
    Ok(NashPair {
        s: curve.s[j],
        time_average,
        integral,
        gap: (time_average - integral).abs(),
    })
}

/// `D_x` at a sample time.
pub fn soliton_defect(curve: &EntropyCurve, s: f64) -> Result<f64> {
    Ok(curve.defect[curve.index_of(s)?])
}

/// Monotonicity of `W` and `N` in `s` with violations up to `tolerance`.
pub fn monotonicity_checks(curve: &EntropyCurve, tolerance: f64) -> [Report; 2] {
    let (w, n) = curve.monotonicity_violations();
    [
        Report::upper("W-monotone", w, 0.0, tolerance).based_at(curve.basepoint),
        Report::upper("N-monotone", n, 0.0, tolerance).based_at(curve.basepoint),
    ]
}

/// `W ≤ N ≤ 0` at every sample, worst slack reported.
pub fn ordering_check(curve: &EntropyCurve, tolerance: f64) -> Report {
    let mut worst = (0.0f64, 0.0f64, f64::INFINITY, 0.0);
    for j in 0..curve.s.len() {
        let (w, n) = (curve.w[j], curve.nash[j]);
        let slack = (n - w).min(-n);
        if slack < worst.2 {
            worst = (w, n, slack, curve.s[j]);
        }
    }
    let mut r = Report::upper("W<=N<=0", worst.0, worst.1, tolerance)
        .at(worst.3)
        .based_at(curve.basepoint);
    r.slack = worst.2;
    if worst.2 < -tolerance {
        r.status = crate::report::Status::Fail;
    }
    r.with("N", worst.1)
}

/// `μ(g(−T), T) ≤ W_x(s)` using the lower end of the `μ` interval.
pub fn entropy_lower_bound_check(curve: &EntropyCurve, mu_lower: f64, tolerance: f64) -> Report {
    let (j, w) = curve
        .w
        .iter()
        .cloned()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    Report::upper("W>=mu", mu_lower, w, tolerance)
        .at(curve.s.get(j).cloned().unwrap_or(0.0))
        .based_at(curve.basepoint)
}

/// Default monotonicity tolerance `5(h² + dt)/|s|max`.
pub fn tol_mono(h: f64, dt: f64, s_max: f64) -> f64 {
    5.0 * (h * h + dt) / s_max.abs()
}
