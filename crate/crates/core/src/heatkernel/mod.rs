//! Forward heat flow, conjugate heat kernels and their consistency checks.
//!
//! A kernel `H_{x0}(·, s) = H(x0, t_b | ·, s)` is stored as samples at times
//! `s < t_b` (base time `t_b`, normally 0). Solved kernels come from the
//! explicit grid solver; analytic ones from the image sum on flat tori and
//! the zonal Legendre series on shrinking spheres. Analytic kernels also
//! carry exact derivatives of the potential `f`.

pub mod analytic;
pub mod checks;
pub mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::FlowHistory;
use crate::geometry::{Mesh, MetricSlice, SliceGeom};

pub use analytic::{image_sum_kernel, series_kernel};
pub use checks::{
    bochner_residual, duality_check, ibp_identity_check, initial_curvature_deficit,
    mass_growth_check, semigroup_check, ResidualHistory,
};
pub use solver::{
    backward_solve, forward_evolve, forward_kernel, forward_solve, sample_times,
    solve_conjugate_kernel, ForwardKernel, KernelOptions, Stepper,
};

/// Potential assigned where the density underflows; such nodes carry no ν-mass.
pub const POTENTIAL_CAP: f64 = 745.0 * 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelOrigin {
    Solved,
    ImageSum,
    Series,
}

/// Exact derivatives of the potential, in an orthonormal frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Channels {
    pub potential: Vec<f64>,
    /// `dim` entries per node.
    pub gradient: Vec<f64>,
    /// `dim²` row-major entries per node.
    pub hessian: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSample {
    pub s: f64,
    pub density: Vec<f64>,
    pub channels: Option<Channels>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelHistory {
    pub basepoint: usize,
    pub base_time: f64,
    pub dim: usize,
    /// Mollification time (solved kernels) or smallest trusted `t_b − s`.
    pub epsilon0: f64,
    pub origin: KernelOrigin,
    /// Sorted by `s`, most negative first.
    pub samples: Vec<KernelSample>,
}

impl KernelHistory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.s).collect()
    }

    /// Index of the sample closest to `s`.
    pub fn nearest(&self, s: f64) -> usize {
        let mut best = 0;
        for (k, smp) in self.samples.iter().enumerate() {
            if (smp.s - s).abs() < (self.samples[best].s - s).abs() {
                best = k;
            }
        }
        best
    }

    /// Index of the sample at `s` (relative tolerance 1e-9 of `|s|`).
    pub fn index_of(&self, s: f64) -> Result<usize> {
        let k = self.nearest(s);
        let tol = 1e-9 * s.abs().max(self.epsilon0);
        if (self.samples[k].s - s).abs() <= tol {
            Ok(k)
        } else {
            Err(LabError::OffGrid(s))
        }
    }

    /// `H ↦ λ^n H(·, λ² s)`: the kernel of the parabolically rescaled flow.
    pub fn rescale(&self, lambda: f64) -> Self {
        let l2 = lambda * lambda;
        let ln = lambda.powi(self.dim as i32);
        let n = self.dim;
        Self {
            basepoint: self.basepoint,
            base_time: self.base_time / l2,
            dim: self.dim,
            epsilon0: self.epsilon0 / l2,
            origin: self.origin,
            samples: self
                .samples
                .iter()
                .map(|smp| KernelSample {
                    s: smp.s / l2,
                    density: smp.density.iter().map(|h| h * ln).collect(),
                    channels: smp.channels.as_ref().map(|c| Channels {
                        potential: c.potential.clone(),
                        gradient: c.gradient.iter().map(|g| g * lambda).collect(),
                        hessian: c.hessian.iter().map(|h| h * l2).collect(),
                    }),
                })
                .collect(),
        }
        .with_dim_check(n)
    }

    fn with_dim_check(self, n: usize) -> Self {
        debug_assert_eq!(self.dim, n);
        self
    }

    /// Sample `k` together with its metric slice.
    pub fn view<'a>(&'a self, flow: &'a FlowHistory, k: usize) -> Result<KernelSlice<'a>> {
        let smp = &self.samples[k];
        let metric = flow.metric_at(smp.s)?;
        Ok(KernelSlice {
            mesh: flow.mesh(),
            metric,
            sample: smp,
            tau: self.base_time - smp.s,
            dim: self.dim,
        })
    }
}

/// One kernel sample on its slice: the measure, potential and derivatives.
pub struct KernelSlice<'a> {
    pub mesh: &'a Mesh,
    pub metric: MetricSlice,
    pub sample: &'a KernelSample,
    /// `t_b − s > 0`.
    pub tau: f64,
    pub dim: usize,
}

impl<'a> KernelSlice<'a> {
    pub fn geom(&self) -> SliceGeom<'_> {
        SliceGeom {
            mesh: self.mesh,
            slice: &self.metric,
        }
    }

    pub fn density(&self) -> &[f64] {
        &self.sample.density
    }

    /// ν weights `H dvol` per node.
    pub fn measure(&self) -> Vec<f64> {
        self.geom()
            .volume_weights()
            .iter()
            .zip(&self.sample.density)
            .map(|(v, h)| v * h)
            .collect()
    }

    /// `f = −log H − (n/2) log(4π τ)`, capped where `H` underflows.
    pub fn potential(&self) -> Vec<f64> {
        if let Some(c) = &self.sample.channels {
            return c.potential.clone();
        }
        let shift = 0.5 * self.dim as f64 * (4.0 * std::f64::consts::PI * self.tau).ln();
        self.sample
            .density
            .iter()
            .map(|&h| {
                if h > 0.0 {
                    (-h.ln() - shift).min(POTENTIAL_CAP)
                } else {
                    POTENTIAL_CAP
                }
            })
            .collect()
    }

    /// `∫ |∇f|² dν`.
    pub fn fisher(&self) -> f64 {
        match &self.sample.channels {
            Some(c) => {
                let n = self.dim;
                let m = self.measure();
                c.gradient
                    .chunks(n)
                    .zip(&m)
                    .map(|(g, w)| w * g.iter().map(|v| v * v).sum::<f64>())
                    .sum()
            }
            None => self.geom().fisher_information(&self.sample.density),
        }
    }

    /// Orthonormal gradient of `f`, `dim` entries per node.
    pub fn gradient_f(&self) -> Vec<f64> {
        match &self.sample.channels {
            Some(c) => c.gradient.clone(),
            None => self.geom().gradient(&self.potential()),
        }
    }

    /// Orthonormal Hessian of `f`, `dim²` entries per node.
    pub fn hessian_f(&self) -> Vec<f64> {
        match &self.sample.channels {
            Some(c) => c.hessian.clone(),
            None => self.geom().hessian(&self.potential()),
        }
    }

    /// `∫ φ dν`.
    pub fn expect(&self, phi: &[f64]) -> f64 {
        self.measure().iter().zip(phi).map(|(w, p)| w * p).sum()
    }

    pub fn mass(&self) -> f64 {
        self.measure().iter().sum()
    }
}

/// Direction tag of a sampled solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Solves `□u = 0` forward in time.
    Forward,
    /// Solves `□*v = 0` backward in time.
    Backward,
}

/// A scalar field sampled at increasing times.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatField {
    pub direction: Direction,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl HeatField {
    pub fn at(&self, t: f64) -> Result<&[f64]> {
        let k = self
            .times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
            .ok_or(LabError::OffGrid(t))?;
        Ok(&self.values[k])
    }

    pub fn last(&self) -> &[f64] {
        self.values.last().expect("non-empty field")
    }
}
