//! Separable FFT on periodic grids, used to precondition variational solves.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::GridMesh;

pub struct GridFft {
    mesh: GridMesh,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl GridFft {
    pub fn new(mesh: &GridMesh) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            mesh: mesh.clone(),
            forward: planner.plan_fft_forward(mesh.res()),
            inverse: planner.plan_fft_inverse(mesh.res()),
        }
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.mesh.res();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..self.mesh.dim() {
            let stride = self.mesh.stride(axis);
            for start in 0..data.len() {
                if (start / stride) % n != 0 {
                    continue;
                }
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[start + j * stride];
                }
                fft.process(&mut line);
                for (j, v) in line.iter().enumerate() {
                    data[start + j * stride] = *v;
                }
            }
        }
    }

    /// Eigenvalue of `-Δ₀` (discrete 5-point stencil) for each Fourier mode.
    pub fn laplacian_symbol(&self) -> Vec<f64> {
        let n = self.mesh.res();
        let h = self.mesh.spacing();
        let per_axis: Vec<f64> = (0..n)
            .map(|k| {
                let s = (std::f64::consts::PI * k as f64 / n as f64).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        (0..self.mesh.len())
            .map(|idx| {
                let c = self.mesh.coords(idx);
                (0..self.mesh.dim()).map(|a| per_axis[c[a]]).sum()
            })
            .collect()
    }

    /// Apply a real Fourier multiplier to a real field.
    pub fn apply_multiplier(&self, field: &[f64], multiplier: &[f64]) -> Vec<f64> {
        let mut data: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        for (d, m) in data.iter_mut().zip(multiplier) {
            *d *= *m;
        }
        self.transform(&mut data, &self.inverse);
        let norm = 1.0 / field.len() as f64;
        data.iter().map(|c| c.re * norm).collect()
    }
}
