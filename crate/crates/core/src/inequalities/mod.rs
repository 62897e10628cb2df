//! Sharp functional inequalities of conjugate heat kernel measures
//! (Poincaré, log-Sobolev, Gaussian concentration, Herbst) and the kernel
//! estimates around them.

pub mod bounds;
pub mod homotopy;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::distance::{geodesic_distance, geodesic_distances_from, STENCIL_OVERESTIMATE};
use crate::geometry::{Mesh, Payload, PointSet, SliceGeom};
use crate::heatkernel::KernelSlice;
use crate::numerics::log_sum_exp_weighted;
use crate::report::Report;

pub use bounds::{
    avg_gaussian_upper_check, kernel_bounds_check, moment_bounds_check, nash_lipschitz_estimate,
    zhang_gradient_check, KernelSource, NashLipschitz,
};
pub use homotopy::{gradient_interpolation_check, homotopy_identity_check, GradientInterpolation, Homotopy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    ZeroMean,
    /// `∫ φ² dν = 1`.
    UnitMass,
    Raw,
}

/// A field on one slice together with the normalization it satisfies.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub values: Vec<f64>,
    pub normalization: Normalization,
}

impl TestFunction {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            normalization: Normalization::Raw,
        }
    }

    /// `φ − ∫φ dν` for a probability measure `ν`.
    pub fn centered(phi: &[f64], nu: &[f64]) -> Self {
        let mean: f64 = phi.iter().zip(nu).map(|(p, w)| p * w).sum();
        Self {
            values: phi.iter().map(|p| p - mean).collect(),
            normalization: Normalization::ZeroMean,
        }
    }

    /// `|φ|` rescaled to unit `L²(ν)` norm.
    pub fn unit_mass(phi: &[f64], nu: &[f64]) -> Result<Self> {
        let m: f64 = phi.iter().zip(nu).map(|(p, w)| p * p * w).sum();
        if !(m > 0.0) || !m.is_finite() {
            return Err(LabError::InvalidParameter(format!(
                "test function has L² mass {m} and cannot be normalized"
            )));
        }
        let c = m.sqrt().recip();
        Ok(Self {
            values: phi.iter().map(|p| p.abs() * c).collect(),
            normalization: Normalization::UnitMass,
        })
    }

    /// Distance from the declared normalization.
    pub fn normalization_defect(&self, nu: &[f64]) -> f64 {
        match self.normalization {
            Normalization::ZeroMean => self.values.iter().zip(nu).map(|(p, w)| p * w).sum::<f64>().abs(),
            Normalization::UnitMass => {
                (self.values.iter().zip(nu).map(|(p, w)| p * p * w).sum::<f64>() - 1.0).abs()
            }
            Normalization::Raw => 0.0,
        }
    }
}

/// `ν` renormalized to a probability measure.
pub fn probability(ks: &KernelSlice) -> Vec<f64> {
    let mut m = ks.measure();
    let total: f64 = m.iter().sum();
    for v in m.iter_mut() {
        *v /= total;
    }
    m
}

/// `∫ |∇φ|² dν` with the sixth-order gradient.
fn dirichlet_nu(geom: &SliceGeom, phi: &[f64], nu: &[f64]) -> f64 {
    let n = geom.dim();
    geom.gradient_high_order(phi)
        .chunks(n)
        .zip(nu)
        .map(|(g, w)| w * g.iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// `∫ φ² dν ≤ 2|s| ∫ |∇φ|² dν` for `φ` centered against `ν`.
pub fn poincare_check(ks: &KernelSlice, phi: &[f64], tolerance: f64) -> Report {
    let nu = probability(ks);
    let c = TestFunction::centered(phi, &nu);
    let lhs: f64 = c.values.iter().zip(&nu).map(|(p, w)| p * p * w).sum();
    let rhs = 2.0 * ks.tau * dirichlet_nu(&ks.geom(), &c.values, &nu);
    Report::upper("poincare", lhs, rhs, tolerance)
        .at(ks.sample.s)
        .with("tau", ks.tau)
}

/// `∫ φ² log φ² dν ≤ 4|s| ∫ |∇φ|² dν` for `φ ≥ 0` with `∫ φ² dν = 1`.
pub fn logsobolev_check(ks: &KernelSlice, phi: &[f64], tolerance: f64) -> Result<Report> {
    let nu = probability(ks);
    let p = TestFunction::unit_mass(phi, &nu)?;
    let lhs: f64 = p
        .values
        .iter()
        .zip(&nu)
        .map(|(v, w)| {
            let q = v * v;
            if q > 0.0 {
                w * q * q.ln()
            } else {
                0.0
            }
        })
        .sum();
    let rhs = 4.0 * ks.tau * dirichlet_nu(&ks.geom(), &p.values, &nu);
    Ok(Report::upper("log-sobolev", lhs, rhs, tolerance)
        .at(ks.sample.s)
        .with("tau", ks.tau))
}

/// Log-Sobolev at `φ = 1 + εψ` against `2ε²` times the Poincaré slack of `ψ`.
/// The two agree up to `O(ε)` relative error.
pub fn linearization_check(ks: &KernelSlice, psi: &[f64], eps: f64, tolerance: f64) -> Result<Report> {
    let nu = probability(ks);
    let c = TestFunction::centered(psi, &nu);
    let phi: Vec<f64> = c.values.iter().map(|v| 1.0 + eps * v).collect();
    let ls = logsobolev_check(ks, &phi, 0.0)?;
    let p = poincare_check(ks, &c.values, 0.0);
    let scaled = ls.slack / (2.0 * eps * eps);
    Ok(Report::equal("log-sobolev-linearization", scaled, p.slack, tolerance)
        .at(ks.sample.s)
        .with("eps", eps)
        .with("log_sobolev_slack", ls.slack))
}

/// `ν(A) ν(B) ≤ exp(−dist(A, B)² / (8|s|))`. Grid distances are divided by the
/// stencil overestimate so the right-hand side never undercuts the truth.
pub fn concentration_check(ks: &KernelSlice, a: &PointSet, b: &PointSet, tolerance: f64) -> Result<Report> {
    if a.nodes().is_empty() || b.nodes().is_empty() {
        return Err(LabError::InvalidParameter("concentration sets must be non-empty".into()));
    }
    let nu = probability(ks);
    let geom = ks.geom();
    let mass = |set: &PointSet| set.nodes().iter().map(|&i| nu[i]).sum::<f64>();
    let (na, nb) = (mass(a), mass(b));
    let d = geodesic_distance(&geom, a, b);
    let d_lower = match ks.mesh {
        Mesh::Grid(_) => d / STENCIL_OVERESTIMATE,
        Mesh::Sphere(_) => d,
    };
    let rhs = (-d_lower * d_lower / (8.0 * ks.tau)).exp();
    Ok(Report::upper("concentration", na * nb, rhs, tolerance)
        .at(ks.sample.s)
        .with("nu_a", na)
        .with("nu_b", nb)
        .with("distance", d)
        .with("distance_lower", d_lower))
}

/// Largest difference quotient of `φ` across mesh edges, in the slice metric.
pub fn lipschitz_constant(geom: &SliceGeom, phi: &[f64]) -> f64 {
    match (geom.mesh, &geom.slice.payload) {
        (Mesh::Grid(g), payload) => {
            let scale = |i: usize| match payload {
                Payload::Conformal(u) => u[i].exp(),
                _ => 1.0,
            };
            let h = g.spacing();
            let mut best = 0.0f64;
            for axis in 0..g.dim() {
                for i in 0..phi.len() {
                    let j = g.neighbor(i, axis, 1);
                    let len = h * 0.5 * (scale(i) + scale(j));
                    best = best.max((phi[j] - phi[i]).abs() / len);
                }
            }
            best
        }
        (Mesh::Sphere(s), Payload::Round { radius }) => {
            let th = s.theta();
            (1..phi.len())
                .map(|i| (phi[i] - phi[i - 1]).abs() / (radius * (th[i] - th[i - 1]).abs()))
                .fold(0.0, f64::max)
        }
        _ => unreachable!("validated in SliceGeom::new"),
    }
}

/// `U(λ) = λ⁻¹ log ∫ e^{λF} dν` on a grid of `λ > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HerbstCurve {
    pub lambda: Vec<f64>,
    pub u: Vec<f64>,
    /// Forward difference quotients of `U`, one per gap.
    pub slope: Vec<f64>,
    /// Lipschitz constant `F` was divided by.
    pub lipschitz: f64,
}

fn log_mgf(f: &[f64], nu: &[f64], lambda: f64) -> Result<f64> {
    let v: Vec<f64> = f.iter().map(|x| lambda * x).collect();
    let l = log_sum_exp_weighted(&v, nu);
    if l.is_finite() {
        Ok(l)
    } else {
        Err(LabError::Overflow(format!("log ∫ e^(λF) dν is not finite at λ = {lambda}")))
    }
}

/// The Herbst argument on `F` (centered, then scaled to Lipschitz constant 1):
/// `dU/dλ ≤ |s|` and `∫ e^{λF} dν ≤ e^{|s|λ²}`.
pub fn herbst_transform(ks: &KernelSlice, f: &[f64], lambdas: &[f64], tolerance: f64) -> Result<(HerbstCurve, [Report; 2])> {
    let mut lambda: Vec<f64> = lambdas.to_vec();
    lambda.sort_by(f64::total_cmp);
    if lambda.first().map_or(true, |&l| !(l > 0.0)) {
        return Err(LabError::InvalidParameter("the λ grid must be non-empty and positive".into()));
    }
    let nu = probability(ks);
    let geom = ks.geom();
    let c = TestFunction::centered(f, &nu);
    let lip = lipschitz_constant(&geom, &c.values);
    let fs: Vec<f64> = if lip > 0.0 {
        c.values.iter().map(|v| v / lip).collect()
    } else {
        vec![0.0; f.len()]
    };
    let tau = ks.tau;
    let mut u = Vec::with_capacity(lambda.len());
    let mut excess = f64::NEG_INFINITY;
    let mut worst_lambda = lambda[0];
    for &l in &lambda {
        let lm = log_mgf(&fs, &nu, l)?;
        u.push(lm / l);
        if lm - tau * l * l > excess {
            excess = lm - tau * l * l;
            worst_lambda = l;
        }
    }
    let slope: Vec<f64> = (1..lambda.len())
        .map(|j| (u[j] - u[j - 1]) / (lambda[j] - lambda[j - 1]))
        .collect();
    let max_slope = slope.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let slope_report = Report::upper("herbst-slope", max_slope.max(0.0), tau, tolerance)
        .at(ks.sample.s)
        .with("lipschitz", lip);
    let mgf_report = Report::upper("herbst-mgf", excess.exp(), 1.0, tolerance)
        .at(ks.sample.s)
        .with("lambda", worst_lambda);
    Ok((
        HerbstCurve {
            lambda,
            u,
            slope,
            lipschitz: lip,
        },
        [slope_report, mgf_report],
    ))
}

/// Concentration through the Herbst construction `F = ±(G − ∫G dν)`,
/// `G = dist(·, B)`: the measured bound `min_λ e^{−λd} ∫e^{λF} dν ∫e^{−λF} dν`
/// (left) against `min_λ e^{2|s|λ² − λd}` (right), both over the same λ grid.
pub fn herbst_concentration_bound(ks: &KernelSlice, a: &PointSet, b: &PointSet, tolerance: f64) -> Result<Report> {
    let nu = probability(ks);
    let geom = ks.geom();
    let d = geodesic_distance(&geom, a, b);
    let g = geodesic_distances_from(&geom, b.nodes());
    let f = TestFunction::centered(&g, &nu).values;
    let tau = ks.tau;
    let count = 401;
    let top = (d / (2.0 * tau)).max(1e-12);
    let mut measured = f64::INFINITY;
    let mut optimized = f64::INFINITY;
    for j in 1..count {
        let l = top * j as f64 / (count - 1) as f64;
        let m = log_mgf(&f, &nu, l)? + log_mgf(&f, &nu, -l)? - l * d;
        measured = measured.min(m);
        optimized = optimized.min(2.0 * tau * l * l - l * d);
    }
    let na: f64 = a.nodes().iter().map(|&i| nu[i]).sum();
    let nb: f64 = b.nodes().iter().map(|&i| nu[i]).sum();
    Ok(Report::upper("herbst-concentration", measured.exp(), optimized.exp(), tolerance)
        .at(ks.sample.s)
        .with("product", na * nb)
        .with("closed_form", (-d * d / (8.0 * tau)).exp())
        .with("distance", d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::make_flat_torus;
    use crate::heatkernel::image_sum_kernel;

    #[test]
    fn constants_are_trivial() {
        let flow = make_flat_torus(2, 10.0, 32, 1.0).unwrap();
        let k = image_sum_kernel(&flow, 0, 0.0, &[-0.5]).unwrap();
        let ks = k.view(&flow, 0).unwrap();
        let one = vec![1.0; flow.mesh().len()];
        let p = poincare_check(&ks, &one, 0.0);
        assert!(p.lhs < 1e-25 && p.rhs == 0.0);
        let l = logsobolev_check(&ks, &one, 0.0).unwrap();
        assert!(l.lhs.abs() < 1e-15 && l.rhs == 0.0);
        let (curve, reports) = herbst_transform(&ks, &vec![0.0; one.len()], &[0.5, 1.0], 0.0).unwrap();
        assert!(curve.u.iter().all(|&u| u.abs() < 1e-14));
        assert!(reports.iter().all(Report::passed));
    }

    #[test]
    fn normalizations_hold() {
        let nu = vec![0.25; 4];
        let phi = [1.0, -2.0, 3.0, 0.5];
        assert!(TestFunction::centered(&phi, &nu).normalization_defect(&nu) < 1e-15);
        assert!(TestFunction::unit_mass(&phi, &nu).unwrap().normalization_defect(&nu) < 1e-15);
        assert!(TestFunction::unit_mass(&[0.0; 4], &nu).is_err());
    }

    #[test]
    fn whole_space_concentration_is_equality() {
        let flow = make_flat_torus(2, 10.0, 32, 1.0).unwrap();
        let k = image_sum_kernel(&flow, 0, 0.0, &[-0.5]).unwrap();
        let ks = k.view(&flow, 0).unwrap();
        let all = PointSet::new((0..flow.mesh().len()).collect(), -0.5, flow.mesh()).unwrap();
        let r = concentration_check(&ks, &all, &all, 1e-12).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-12 && r.rhs == 1.0 && r.passed());
    }
}
