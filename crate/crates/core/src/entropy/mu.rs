//! `μ(g, τ)` by preconditioned projected gradient descent.
//!
//! With `φ² = (4πτ)^{-n/2} e^{-f}` the functional becomes
//! `F(φ) = ∫ τ(4|∇φ|² + Rφ²) − φ² log φ² dvol − n − (n/2) log 4πτ` on the
//! unit sphere `∫ φ² dvol = 1`. Descent yields upper bounds; the dual norm of
//! the final projected gradient widens them into an interval.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::spectral::GridFft;
use crate::geometry::{Mesh, Payload, SliceGeom};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuOptions {
    pub max_iterations: usize,
    /// Stop once the preconditioned residual drops below this.
    pub residual_tolerance: f64,
    /// Width factor turning the residual into a lower bound.
    pub residual_scale: f64,
}

impl Default for MuOptions {
    fn default() -> Self {
        Self {
            max_iterations: 4000,
            residual_tolerance: 1e-12,
            residual_scale: 2.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MuResult {
    pub tau: f64,
    /// Minimizer, `∫ φ² dvol = 1`.
    pub phi: Vec<f64>,
    /// Best value found, an upper bound for `μ`.
    pub value: f64,
    /// `⟨G, P G⟩` of the projected gradient at the minimizer.
    pub residual: f64,
    /// `value − residual_scale · residual`.
    pub lower: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step of the winning start.
    pub trace: Vec<f64>,
}

struct Problem<'a> {
    geom: SliceGeom<'a>,
    tau: f64,
    vol: Vec<f64>,
    curvature: Vec<f64>,
    constant: f64,
    precond: Precond,
}

enum Precond {
    Grid {
        fft: GridFft,
        symbol: Vec<f64>,
        /// `e^{2u}` per node (1 on flat grids).
        weight: Vec<f64>,
    },
    Sphere {
        radius: f64,
    },
}

impl<'a> Problem<'a> {
    fn new(geom: SliceGeom<'a>, tau: f64) -> Self {
        let n = geom.dim() as f64;
        let precond = match (geom.mesh, &geom.slice.payload) {
            (Mesh::Grid(g), payload) => {
                let fft = GridFft::new(g);
                let weight = match payload {
                    Payload::Conformal(u) => u.iter().map(|v| (2.0 * v).exp()).collect(),
                    _ => vec![1.0; g.len()],
                };
                let mean = weight.iter().sum::<f64>() / weight.len() as f64;
                let symbol = fft
                    .laplacian_symbol()
                    .iter()
                    .map(|l| 1.0 / (mean + 4.0 * tau * l))
                    .collect();
                Precond::Grid {
                    fft,
                    symbol,
                    weight,
                }
            }
            (Mesh::Sphere(_), Payload::Round { radius }) => Precond::Sphere { radius: *radius },
            _ => unreachable!("validated slice"),
        };
        Self {
            vol: geom.volume_weights(),
            curvature: geom.scalar_curvature(),
            constant: -n - 0.5 * n * (4.0 * PI * tau).ln(),
            geom,
            tau,
            precond,
        }
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.vol).map(|((x, y), w)| x * y * w).sum()
    }

    fn normalize(&self, phi: &mut [f64]) -> Result<()> {
        let norm = self.dot(phi, phi).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(LabError::NotNormalizable(norm));
        }
        phi.iter_mut().for_each(|v| *v /= norm);
        Ok(())
    }

    fn value(&self, phi: &[f64]) -> f64 {
        let dirichlet = self.geom.dirichlet(phi, None);
        let mut rest = 0.0;
        for i in 0..phi.len() {
            let p2 = phi[i] * phi[i];
            let ent = if p2 > 0.0 { p2 * p2.ln() } else { 0.0 };
            rest += (self.tau * self.curvature[i] * p2 - ent) * self.vol[i];
        }
        4.0 * self.tau * dirichlet + rest + self.constant
    }

    /// `L²(dvol)` gradient `2[τ(−4Δφ + Rφ) − φ log φ² − φ]`.
    fn gradient(&self, phi: &[f64]) -> Vec<f64> {
        let lap = self.geom.laplacian(phi);
        (0..phi.len())
            .map(|i| {
                let p = phi[i];
                // 2 ln|φ| stays finite where φ² underflows.
                let lg = if p != 0.0 { 2.0 * p.abs().ln() } else { 0.0 };
                2.0 * (self.tau * (-4.0 * lap[i] + self.curvature[i] * p) - p * lg - p)
            })
            .collect()
    }

    /// Approximate inverse of `1 − 4τΔ`, symmetric in the volume pairing.
    fn precondition(&self, g: &[f64]) -> Vec<f64> {
        match &self.precond {
            Precond::Grid {
                fft,
                symbol,
                weight,
            } => {
                let weighted: Vec<f64> = g.iter().zip(weight).map(|(a, w)| a * w).collect();
                fft.apply_multiplier(&weighted, symbol)
            }
            Precond::Sphere { radius } => {
                let sph = self.geom.mesh.as_sphere().expect("sphere mesh");
                let mut c = sph.analyze(g);
                for (l, a) in c.iter_mut().enumerate() {
                    *a /= 1.0 + 4.0 * self.tau * (l * (l + 1)) as f64 / (radius * radius);
                }
                sph.synthesize(&c)
            }
        }
    }

    fn descend(&self, mut phi: Vec<f64>, opts: &MuOptions) -> Result<MuResult> {
        self.normalize(&mut phi)?;
        let mut value = self.value(&phi);
        let mut trace = vec![value];
        let mut step = 1.0;
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < opts.max_iterations {
            let mut g = self.gradient(&phi);
            let along = self.dot(&g, &phi);
            g.iter_mut().zip(&phi).for_each(|(a, p)| *a -= along * p);
            let mut d = self.precondition(&g);
            residual = self.dot(&g, &d);
            if residual < opts.residual_tolerance {
                converged = true;
                break;
            }
            let along = self.dot(&d, &phi);
            d.iter_mut().zip(&phi).for_each(|(a, p)| *a -= along * p);
            let slope = residual;
            let mut accepted = false;
            step *= 2.0;
            while step > 1e-16 {
                let mut trial: Vec<f64> = phi.iter().zip(&d).map(|(p, q)| p - step * q).collect();
                self.normalize(&mut trial)?;
                let v = self.value(&trial);
                if v <= value - 1e-4 * step * slope {
                    phi = trial;
                    value = v;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            iterations += 1;
            if !accepted {
                break;
            }
            trace.push(value);
        }
        let phi = phi.iter().map(|v| v.abs()).collect();
        Ok(MuResult {
            tau: self.tau,
            phi,
            value,
            residual,
            lower: value - opts.residual_scale * residual,
            iterations,
            converged,
            trace,
        })
    }

    /// Gaussian `φ² ∝ exp(−|y − y0|²_g/(4τ))` centred at the minimum of `R`.
    fn gaussian_start(&self) -> Vec<f64> {
        let y0 = self
            .curvature
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|p| p.0)
            .unwrap_or(0);
        match (self.geom.mesh, &self.geom.slice.payload) {
            (Mesh::Grid(g), payload) => {
                let e = match payload {
                    Payload::Conformal(u) => (2.0 * u[y0]).exp(),
                    _ => 1.0,
                };
                (0..g.len())
                    .map(|i| {
                        let d = g.displacement(y0, i);
                        let r2: f64 = d[..g.dim()].iter().map(|v| v * v).sum();
                        (-e * r2 / (8.0 * self.tau)).exp()
                    })
                    .collect()
            }
            (Mesh::Sphere(s), Payload::Round { radius }) => s
                .theta()
                .iter()
                .map(|t| (-(radius * t).powi(2) / (8.0 * self.tau)).exp())
                .collect(),
            _ => unreachable!("validated slice"),
        }
    }
}

/// `μ(g, τ)`: best of a constant and a Gaussian start.
pub fn mu_entropy(geom: &SliceGeom, tau: f64, opts: &MuOptions) -> Result<MuResult> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LabError::InvalidParameter(format!("τ must be positive (got {tau})")));
    }
    let p = Problem::new(*geom, tau);
    let flat = p.descend(vec![1.0; geom.len()], opts)?;
    let bump = p.descend(p.gaussian_start(), opts)?;
    Ok(if bump.value < flat.value { bump } else { flat })
}

/// `F(φ)` for a given (not necessarily normalized) `φ`; used by callers that
/// evaluate the log-Sobolev form directly.
pub fn mu_objective(geom: &SliceGeom, tau: f64, phi: &[f64]) -> Result<f64> {
    let p = Problem::new(*geom, tau);
    let mut phi = phi.to_vec();
    p.normalize(&mut phi)?;
    Ok(p.value(&phi))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuEntry {
    pub tau: f64,
    pub value: f64,
    pub lower: f64,
    pub converged: bool,
}

/// `μ(g, τ)` on a geometric grid of `τ`, computed in parallel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuTable {
    pub entries: Vec<MuEntry>,
}

impl MuTable {
    pub fn compute(geom: &SliceGeom, taus: &[f64], opts: &MuOptions) -> Result<Self> {
        let entries = crate::par::map_slice(taus, |&tau| {
            mu_entropy(geom, tau, opts).map(|r| MuEntry {
                tau,
                value: r.value,
                lower: r.lower,
                converged: r.converged,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    /// Table over `[tau_min, tau_max]` with `count` geometric points.
    pub fn geometric(geom: &SliceGeom, tau_min: f64, tau_max: f64, count: usize, opts: &MuOptions) -> Result<Self> {
        let count = count.max(2);
        let ratio = (tau_max / tau_min).powf(1.0 / (count - 1) as f64);
        let taus: Vec<f64> = (0..count).map(|j| tau_min * ratio.powi(j as i32)).collect();
        Self::compute(geom, &taus, opts)
    }

    /// `(lower, upper)` estimates of `inf μ` over the tabulated `τ ∈ [a, b]`.
    pub fn infimum(&self, a: f64, b: f64) -> Option<(f64, f64)> {
        let inside = self
            .entries
            .iter()
            .filter(|e| e.tau >= a * (1.0 - 1e-12) && e.tau <= b * (1.0 + 1e-12));
        inside.fold(None, |acc, e| match acc {
            None => Some((e.lower, e.value)),
            Some((l, u)) => Some((l.min(e.lower), u.min(e.value))),
        })
    }
}

/// Smallest `τ` worth tabulating: the squared resolution length.
pub fn default_tau_min(geom: &SliceGeom) -> f64 {
    let l = geom.resolution_length();
    l * l
}
