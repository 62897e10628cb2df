//! Seeded random test fields.
//!
//! Grid fields are sums of Fourier modes with every wavenumber component at
//! most `kmax` and Gaussian coefficients; sphere fields are zonal Legendre
//! series up to degree `kmax`. Fields are scaled to unit sup-norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::spectral::GridFft;
use crate::geometry::{GridMesh, Mesh};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One band-limited field with `max |φ| = 1`.
pub fn band_limited_field(mesh: &Mesh, kmax: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut field = match mesh {
        Mesh::Grid(g) => {
            // Filter white noise to the band |k_a| ≤ kmax on every axis.
            let noise: Vec<f64> = (0..g.len()).map(|_| normal.sample(rng)).collect();
            let fft = GridFft::new(g);
            let n = g.res();
            let mask: Vec<f64> = (0..g.len())
                .map(|i| {
                    let c = g.coords(i);
                    let inside = (0..g.dim()).all(|a| {
                        let k = c[a].min(n - c[a]);
                        k <= kmax
                    });
                    if inside && (0..g.dim()).any(|a| c[a] != 0) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            fft.apply_multiplier(&noise, &mask)
        }
        Mesh::Sphere(s) => {
            let top = kmax.min(s.degree());
            let mut c = vec![0.0; s.degree() + 1];
            for slot in c.iter_mut().take(top + 1).skip(1) {
                *slot = normal.sample(rng);
            }
            s.synthesize(&c)
        }
    };
    let max = field.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if max > 0.0 {
        for v in field.iter_mut() {
            *v /= max;
        }
    }
    field
}

/// `count` fields from one seed.
pub fn battery(mesh: &Mesh, kmax: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..count).map(|_| band_limited_field(mesh, kmax, &mut r)).collect()
}

/// Seeded trigonometric polynomial on a grid with modes `|k_a| ≤ kmax`,
/// scaled so the coefficients have unit `ℓ¹` norm (hence `max |φ| ≤ 1`).
/// The coefficients do not depend on the resolution, so refining the grid
/// samples the same function.
pub fn trig_field(mesh: &GridMesh, kmax: usize, seed: u64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng(seed);
    let dim = mesh.dim();
    let span = 2 * kmax as i64 + 1;
    let mut modes: Vec<([f64; 3], f64, f64)> = Vec::new();
    for code in 0..span.pow(dim as u32) {
        let mut k = [0i64; 3];
        let mut c = code;
        for slot in k.iter_mut().take(dim) {
            *slot = c % span - kmax as i64;
            c /= span;
        }
        // One of each ±k pair, skipping k = 0.
        if k.iter().find(|&&v| v != 0).map_or(true, |&v| v < 0) {
            continue;
        }
        let wave = 2.0 * std::f64::consts::PI / mesh.side();
        let kk = [k[0] as f64 * wave, k[1] as f64 * wave, k[2] as f64 * wave];
        modes.push((kk, normal.sample(&mut rng), normal.sample(&mut rng)));
    }
    let norm: f64 = modes.iter().map(|m| m.1.abs() + m.2.abs()).sum();
    (0..mesh.len())
        .map(|i| {
            let p = mesh.position(i);
            modes
                .iter()
                .map(|(k, a, b)| {
                    let phase = k[0] * p[0] + k[1] * p[1] + k[2] * p[2];
                    a * phase.cos() + b * phase.sin()
                })
                .sum::<f64>()
                / norm
        })
        .collect()
}

/// `count` disjoint, non-empty node-set pairs. Grids use lattice balls of
/// radius up to `res/6`; every other pair has its first ball centred at
/// `focus` when given. Zonal spheres use bands of consecutive rings.
pub fn set_pairs(mesh: &Mesh, count: usize, focus: Option<usize>, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let pair = match mesh {
            Mesh::Grid(g) => {
                let rmax = (g.res() / 6).max(1) as f64;
                let ball = |center: usize, rng: &mut ChaCha8Rng| {
                    let r = rng.random_range(0.0..rmax);
                    let h = g.spacing();
                    (0..g.len())
                        .filter(|&i| {
                            let d = g.displacement(center, i);
                            d.iter().map(|v| (v / h).powi(2)).sum::<f64>() <= r * r
                        })
                        .collect::<Vec<usize>>()
                };
                let c1 = match focus {
                    Some(f) if out.len() % 2 == 0 => f,
                    _ => rng.random_range(0..g.len()),
                };
                let a = ball(c1, &mut rng);
                let c2 = rng.random_range(0..g.len());
                let b: Vec<usize> = ball(c2, &mut rng).into_iter().filter(|i| a.binary_search(i).is_err()).collect();
                (a, b)
            }
            Mesh::Sphere(s) => {
                let n = s.len();
                let band = |rng: &mut ChaCha8Rng| {
                    let i = rng.random_range(0..n);
                    let j = rng.random_range(i..n.min(i + n / 4 + 1));
                    (i..=j).collect::<Vec<usize>>()
                };
                let a = if focus.is_some() && out.len() % 2 == 0 {
                    (0..=rng.random_range(0..n / 4 + 1)).collect()
                } else {
                    band(&mut rng)
                };
                let b: Vec<usize> = band(&mut rng).into_iter().filter(|i| a.binary_search(i).is_err()).collect();
                (a, b)
            }
        };
        if !pair.0.is_empty() && !pair.1.is_empty() {
            out.push(pair);
        }
    }
    out
}

/// Default band limit: a quarter of the resolution.
pub fn default_band(mesh: &Mesh) -> usize {
    match mesh {
        Mesh::Grid(g) => (g.res() / 4).max(1),
        Mesh::Sphere(s) => (s.degree() / 4).max(1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let mesh = Mesh::Grid(GridMesh::new(2, 16, 1.0).unwrap());
        let a = battery(&mesh, 2, 3, 7);
        let b = battery(&mesh, 2, 3, 7);
        assert_eq!(a, b);
        for f in &a {
            let m = f.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            assert!((m - 1.0).abs() < 1e-12);
        }
        assert_ne!(battery(&mesh, 2, 1, 8)[0], a[0]);
    }

    #[test]
    fn set_pairs_are_disjoint() {
        let mesh = Mesh::Grid(GridMesh::new(2, 24, 1.0).unwrap());
        let pairs = set_pairs(&mesh, 20, Some(5), 3);
        assert_eq!(pairs.len(), 20);
        for (a, b) in &pairs {
            assert!(!a.is_empty() && !b.is_empty());
            assert!(b.iter().all(|i| !a.contains(i)));
        }
        assert!(pairs[0].0.contains(&5));
        assert_eq!(pairs, set_pairs(&mesh, 20, Some(5), 3));
    }

    #[test]
    fn trig_field_refines_consistently() {
        let coarse = GridMesh::new(2, 8, 3.0).unwrap();
        let fine = GridMesh::new(2, 16, 3.0).unwrap();
        let a = trig_field(&coarse, 2, 11);
        let b = trig_field(&fine, 2, 11);
        for i in 0..coarse.len() {
            let c = coarse.coords(i);
            let j = fine.index([2 * c[0], 2 * c[1], 0]);
            assert!((a[i] - b[j]).abs() < 1e-14);
        }
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }
}
