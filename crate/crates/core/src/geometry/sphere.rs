//! Zonal spectral representation on the round sphere.
//!
//! Fields are axisymmetric and sampled on Gauss–Legendre rings in
//! `x = cos θ`, ordered from the north pole southwards. Derivatives are taken
//! through the Legendre expansion, so they are exact for band-limited data.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug)]
pub struct LegendreTables {
    degree: usize,
    x: Vec<f64>,
    w: Vec<f64>,
    theta: Vec<f64>,
    /// `P_l(x_j)`, row-major in `l`.
    p: Vec<f64>,
    /// `x_j P_l'(x_j)`.
    xdp: Vec<f64>,
    /// `sin θ_j P_l'(x_j)`.
    sdp: Vec<f64>,
}

/// Gauss–Legendre nodes (descending) and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, z);
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for l in 1..n {
        let p2 = ((2 * l + 1) as f64 * x * p1 - l as f64 * p0) / (l + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (p0 - x * p1) / (1.0 - x * x);
    (p1, dp)
}

impl LegendreTables {
    fn build(degree: usize) -> Self {
        let n = degree + 1;
        let (x, w) = gauss_legendre(n);
        let theta: Vec<f64> = x.iter().map(|v| v.acos()).collect();
        let mut p = vec![0.0; (degree + 1) * n];
        let mut xdp = vec![0.0; (degree + 1) * n];
        let mut sdp = vec![0.0; (degree + 1) * n];
        for j in 0..n {
            let xj = x[j];
            let s2 = 1.0 - xj * xj;
            let mut pm = 0.0;
            let mut pl = 1.0;
            for l in 0..=degree {
                let dp = if l == 0 { 0.0 } else { l as f64 * (pm - xj * pl) / s2 };
                p[l * n + j] = pl;
                xdp[l * n + j] = xj * dp;
                sdp[l * n + j] = s2.sqrt() * dp;
                let next = ((2 * l + 1) as f64 * xj * pl - l as f64 * pm) / (l + 1) as f64;
                pm = pl;
                pl = next;
            }
        }
        Self {
            degree,
            x,
            w,
            theta,
            p,
            xdp,
            sdp,
        }
    }

    fn nodes(&self) -> usize {
        self.x.len()
    }
}

/// Zonal sphere discretization with spectral truncation `degree`.
#[derive(Clone, Debug)]
pub struct SphereMesh {
    tables: Arc<LegendreTables>,
}

impl PartialEq for SphereMesh {
    fn eq(&self, other: &Self) -> bool {
        self.degree() == other.degree()
    }
}

#[derive(Serialize, Deserialize)]
struct SphereSpec {
    degree: usize,
}

impl Serialize for SphereMesh {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SphereSpec {
            degree: self.degree(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SphereMesh {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = SphereSpec::deserialize(d)?;
        SphereMesh::new(spec.degree).map_err(serde::de::Error::custom)
    }
}

impl SphereMesh {
    pub fn new(degree: usize) -> Result<Self> {
        if degree < 4 {
            return Err(LabError::InvalidParameter(format!(
                "sphere truncation degree must be at least 4 (got {degree})"
            )));
        }
        Ok(Self {
            tables: Arc::new(LegendreTables::build(degree)),
        })
    }

    pub fn degree(&self) -> usize {
        self.tables.degree
    }

    pub fn len(&self) -> usize {
        self.tables.nodes()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `cos θ` of each ring.
    pub fn cos_theta(&self) -> &[f64] {
        &self.tables.x
    }

    pub fn theta(&self) -> &[f64] {
        &self.tables.theta
    }

    /// Gauss weights in `x = cos θ`; the ring area on radius `r` is `2π r² w`.
    pub fn weights(&self) -> &[f64] {
        &self.tables.w
    }

    /// Legendre coefficients of nodal data.
    pub fn analyze(&self, f: &[f64]) -> Vec<f64> {
        let t = &*self.tables;
        let n = t.nodes();
        (0..=t.degree)
            .map(|l| {
                let row = &t.p[l * n..(l + 1) * n];
                let s: f64 = row.iter().zip(&t.w).zip(f).map(|((p, w), v)| p * w * v).sum();
                s * (2 * l + 1) as f64 * 0.5
            })
            .collect()
    }

    fn synth(&self, coeffs: &[f64], table: &[f64], mult: impl Fn(usize) -> f64) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for (l, &a) in coeffs.iter().enumerate().take(self.degree() + 1) {
            let c = a * mult(l);
            if c == 0.0 {
                continue;
            }
            let row = &table[l * n..(l + 1) * n];
            for (o, p) in out.iter_mut().zip(row) {
                *o += c * p;
            }
        }
        out
    }

    /// Nodal values of `Σ a_l P_l(cos θ)`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synth(coeffs, &self.tables.p, |_| 1.0)
    }

    /// `d/dθ` of the series.
    pub fn synthesize_dtheta(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synth(coeffs, &self.tables.sdp, |_| -1.0)
    }

    /// `d²/dθ²` of the series.
    pub fn synthesize_dtheta2(&self, coeffs: &[f64]) -> Vec<f64> {
        let a = self.synth(coeffs, &self.tables.xdp, |_| 1.0);
        let b = self.synth(coeffs, &self.tables.p, |l| -((l * (l + 1)) as f64));
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }

    /// `cot θ · d/dθ` of the series.
    pub fn synthesize_cot_dtheta(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synth(coeffs, &self.tables.xdp, |_| -1.0)
    }

    /// Unit-sphere Laplacian of the series.
    pub fn synthesize_laplacian(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synth(coeffs, &self.tables.p, |l| -((l * (l + 1)) as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_weights_integrate_polynomials() {
        let (x, w) = gauss_legendre(12);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 0.4).abs() < 1e-14);
        assert!(x.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn analyze_synthesize_roundtrip() {
        let m = SphereMesh::new(16).unwrap();
        let coeffs: Vec<f64> = (0..=16).map(|l| 1.0 / (1.0 + l as f64)).collect();
        let f = m.synthesize(&coeffs);
        let back = m.analyze(&f);
        for (a, b) in coeffs.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn derivatives_of_p2() {
        // P2(cos θ) = (3cos²θ - 1)/2: d/dθ = -3 cos θ sin θ, d²/dθ² = -3 cos 2θ.
        let m = SphereMesh::new(8).unwrap();
        let mut c = vec![0.0; 9];
        c[2] = 1.0;
        let d1 = m.synthesize_dtheta(&c);
        let d2 = m.synthesize_dtheta2(&c);
        let cot = m.synthesize_cot_dtheta(&c);
        for (j, &th) in m.theta().iter().enumerate() {
            assert!((d1[j] + 3.0 * th.cos() * th.sin()).abs() < 1e-12);
            assert!((d2[j] + 3.0 * (2.0 * th).cos()).abs() < 1e-12);
            assert!((cot[j] + 3.0 * th.cos() * th.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_small_degree() {
        assert!(SphereMesh::new(3).is_err());
    }
}
