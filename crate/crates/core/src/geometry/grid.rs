use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Periodic box `[0, side)^dim` sampled at `res` nodes per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMesh {
    dim: usize,
    res: usize,
    side: f64,
}

impl GridMesh {
    pub fn new(dim: usize, res: usize, side: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(LabError::InvalidParameter(format!(
                "grid dimension must be 1, 2 or 3 (got {dim})"
            )));
        }
        if res < 8 {
            return Err(LabError::InvalidParameter(format!(
                "grid resolution must be at least 8 per axis (got {res})"
            )));
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(LabError::InvalidParameter(format!(
                "side length must be positive (got {side})"
            )));
        }
        Ok(Self { dim, res, side })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.res as f64
    }

    pub fn len(&self) -> usize {
        self.res.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate volume of one cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.res.pow(axis as u32)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let mut c = [0; 3];
        let mut rest = idx;
        for slot in c.iter_mut().take(self.dim) {
            *slot = rest % self.res;
            rest /= self.res;
        }
        c
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        (0..self.dim).rev().fold(0, |acc, a| acc * self.res + c[a])
    }

    /// Node reached by moving `step` cells along `axis`, wrapping around.
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> usize {
        let stride = self.stride(axis);
        let c = (idx / stride) % self.res;
        let n = self.res as isize;
        let moved = ((c as isize + step) % n + n) % n;
        idx - c * stride + moved as usize * stride
    }

    /// Node reached by a lattice offset.
    pub fn offset_node(&self, idx: usize, offset: &[isize]) -> usize {
        offset
            .iter()
            .enumerate()
            .fold(idx, |acc, (a, &d)| if d == 0 { acc } else { self.neighbor(acc, a, d) })
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let h = self.spacing();
        [c[0] as f64 * h, c[1] as f64 * h, c[2] as f64 * h]
    }

    /// Minimal-image coordinate displacement `to - from` in `(-side/2, side/2]`.
    pub fn displacement(&self, from: usize, to: usize) -> [f64; 3] {
        let a = self.coords(from);
        let b = self.coords(to);
        let mut d = [0.0; 3];
        let n = self.res as isize;
        for axis in 0..self.dim {
            let mut k = b[axis] as isize - a[axis] as isize;
            if k > n / 2 {
                k -= n;
            } else if k <= -n / 2 {
                k += n;
            }
            d[axis] = k as f64 * self.spacing();
        }
        d
    }

    /// Same lattice with every length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            side: self.side * factor,
            ..self.clone()
        }
    }

    /// Same box with a different resolution.
    pub fn with_resolution(&self, res: usize) -> Result<Self> {
        Self::new(self.dim, res, self.side)
    }
}

/// Flat 2·dim+1 point Laplacian `Δ₀φ`, written into `out`.
pub fn laplacian(mesh: &GridMesh, phi: &[f64], out: &mut [f64]) {
    let n = mesh.res();
    let inv_h2 = 1.0 / (mesh.spacing() * mesh.spacing());
    match mesh.dim() {
        1 => {
            for i in 0..n {
                let im = if i == 0 { n - 1 } else { i - 1 };
                let ip = if i + 1 == n { 0 } else { i + 1 };
                out[i] = (phi[im] + phi[ip] - 2.0 * phi[i]) * inv_h2;
            }
        }
        2 => {
            crate::par::fill_rows(out, n, |j, row| {
                let jm = if j == 0 { n - 1 } else { j - 1 };
                let jp = if j + 1 == n { 0 } else { j + 1 };
                let c = &phi[j * n..(j + 1) * n];
                let dn = &phi[jm * n..(jm + 1) * n];
                let up = &phi[jp * n..(jp + 1) * n];
                for i in 0..n {
                    let im = if i == 0 { n - 1 } else { i - 1 };
                    let ip = if i + 1 == n { 0 } else { i + 1 };
                    row[i] = (c[im] + c[ip] + dn[i] + up[i] - 4.0 * c[i]) * inv_h2;
                }
            });
        }
        _ => {
            for (idx, o) in out.iter_mut().enumerate() {
                let mut acc = -2.0 * mesh.dim() as f64 * phi[idx];
                for axis in 0..mesh.dim() {
                    acc += phi[mesh.neighbor(idx, axis, 1)] + phi[mesh.neighbor(idx, axis, -1)];
                }
                *o = acc * inv_h2;
            }
        }
    }
}

/// Centered first difference along `axis`.
pub fn centered_diff(mesh: &GridMesh, phi: &[f64], axis: usize) -> Vec<f64> {
    let inv = 0.5 / mesh.spacing();
    (0..phi.len())
        .map(|i| (phi[mesh.neighbor(i, axis, 1)] - phi[mesh.neighbor(i, axis, -1)]) * inv)
        .collect()
}

/// Sixth-order centered first difference along `axis`.
pub fn centered_diff6(mesh: &GridMesh, phi: &[f64], axis: usize) -> Vec<f64> {
    const C: [f64; 3] = [45.0, -9.0, 1.0];
    let inv = 1.0 / (60.0 * mesh.spacing());
    (0..phi.len())
        .map(|i| {
            let mut acc = 0.0;
            for (k, c) in C.iter().enumerate() {
                let step = k as isize + 1;
                acc += c * (phi[mesh.neighbor(i, axis, step)] - phi[mesh.neighbor(i, axis, -step)]);
            }
            acc * inv
        })
        .collect()
}

/// Centered second difference `∂_a ∂_b φ`.
pub fn second_diff(mesh: &GridMesh, phi: &[f64], a: usize, b: usize) -> Vec<f64> {
    let h = mesh.spacing();
    if a == b {
        let inv = 1.0 / (h * h);
        (0..phi.len())
            .map(|i| {
                (phi[mesh.neighbor(i, a, 1)] + phi[mesh.neighbor(i, a, -1)] - 2.0 * phi[i]) * inv
            })
            .collect()
    } else {
        let inv = 0.25 / (h * h);
        (0..phi.len())
            .map(|i| {
                let pp = mesh.neighbor(mesh.neighbor(i, a, 1), b, 1);
                let pm = mesh.neighbor(mesh.neighbor(i, a, 1), b, -1);
                let mp = mesh.neighbor(mesh.neighbor(i, a, -1), b, 1);
                let mm = mesh.neighbor(mesh.neighbor(i, a, -1), b, -1);
                (phi[pp] - phi[pm] - phi[mp] + phi[mm]) * inv
            })
            .collect()
    }
}

/// Sum over forward edges of `weight(a, b) * (φ_b - φ_a)^2 / h^2`.
pub fn edge_sum<F>(mesh: &GridMesh, phi: &[f64], weight: F) -> f64
where
    F: Fn(usize, usize) -> f64,
{
    let inv_h2 = 1.0 / (mesh.spacing() * mesh.spacing());
    let mut acc = 0.0;
    for axis in 0..mesh.dim() {
        for i in 0..phi.len() {
            let j = mesh.neighbor(i, axis, 1);
            let d = phi[j] - phi[i];
            acc += weight(i, j) * d * d;
        }
    }
    acc * inv_h2
}
