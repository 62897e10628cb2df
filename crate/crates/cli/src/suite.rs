//! Building flows and kernels from a config and running the check batteries.

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ricci_lab::battery::{battery, default_band, set_pairs, trig_field};
use ricci_lab::entropy::{
    monotonicity_checks, nash_entropy, no_local_collapse_check, ordering_check, pointed_entropy_curve,
    EntropyCurve, MuOptions, MuTable,
};
use ricci_lab::flow::{evolve_conformal_torus, make_flat_torus, make_shrinking_sphere, ConformalFlowOptions, FlowHistory};
use ricci_lab::geometry::{Backend, Mesh, PointSet};
use ricci_lab::heatkernel::analytic::series_min_sigma;
use ricci_lab::heatkernel::{duality_check, forward_solve, sample_times, KernelHistory, KernelOptions, KernelSlice};
use ricci_lab::inequalities::bounds::{kernel_bound_mu_table, moment_mu_table};
use ricci_lab::inequalities::{
    concentration_check, gradient_interpolation_check, herbst_transform, homotopy_identity_check,
    kernel_bounds_check, logsobolev_check, moment_bounds_check, poincare_check, zhang_gradient_check, Homotopy,
    KernelSource,
};
use ricci_lab::par;
use ricci_lab::regularity::{basic_control, eps_regularity_scan, scan_basepoints, ScanOptions};
use ricci_lab::report::Report;

use crate::config::{Check, Loaded};

pub fn build_flow(cfg: &Loaded) -> Result<FlowHistory> {
    let b = &cfg.config.backend;
    let horizon = *b.horizon.get_ref();
    let flow = match cfg.backend() {
        Backend::FlatTorus => make_flat_torus(b.dim, b.side, b.resolution, horizon)?,
        Backend::ShrinkingSphere => {
            let r0 = *b.r0.as_ref().expect("validated").get_ref();
            make_shrinking_sphere(r0, horizon, b.degree, b.slices)?
        }
        Backend::ConformalTorus => {
            let mesh = ricci_lab::geometry::GridMesh::new(2, b.resolution, b.side)?;
            let u0: Vec<f64> = trig_field(&mesh, b.kmax, cfg.config.seed)
                .iter()
                .map(|v| b.amplitude * v)
                .collect();
            let opts = ConformalFlowOptions {
                dt_max: b.dt.dt_max,
                cfl_fraction: b.dt.cfl_fraction,
                ..Default::default()
            };
            evolve_conformal_torus(&mesh, &u0, horizon, &opts)?
        }
    };
    Ok(flow)
}

pub fn kernel_source(cfg: &Loaded) -> KernelSource {
    if cfg.analytic() {
        KernelSource::Analytic
    } else {
        KernelSource::Solved(KernelOptions {
            per_doubling: cfg.config.kernel.per_doubling,
            cfl_fraction: cfg.config.backend.dt.cfl_fraction,
            ..Default::default()
        })
    }
}

pub fn basepoints(cfg: &Loaded, flow: &FlowHistory) -> Result<Vec<usize>> {
    let k = &cfg.config.kernel;
    let points = match (&k.basepoints, k.stride) {
        (Some(p), _) => p.clone(),
        (None, Some(stride)) => scan_basepoints(flow, stride)?,
        (None, None) => vec![0],
    };
    if let Some(bad) = points.iter().find(|&&x| x >= flow.mesh().len()) {
        bail!("basepoint {bad} is not a mesh node ({} nodes)", flow.mesh().len());
    }
    if flow.mesh().as_sphere().is_some() && points.iter().any(|&x| x != 0) {
        bail!("sphere kernels are based at the north pole (basepoint 0)");
    }
    Ok(points)
}

/// Kernel based at `(x, 0)` sampled on a geometric grid in `τ` through the
/// configured `s` values.
pub fn solve_kernel(cfg: &Loaded, flow: &FlowHistory, x: usize) -> Result<KernelHistory> {
    let s = &cfg.config.kernel.s;
    let source = kernel_source(cfg);
    let times = match (&source, flow.mesh()) {
        (KernelSource::Analytic, Mesh::Grid(g)) => {
            sample_times(0.0, g.spacing().powi(2), flow.horizon(), cfg.config.kernel.per_doubling, s)
        }
        (KernelSource::Analytic, Mesh::Sphere(_)) => {
            sample_times(0.0, series_min_sigma(flow), flow.horizon(), cfg.config.kernel.per_doubling, s)
        }
        _ => s.clone(),
    };
    source
        .kernel(flow, x, &times)
        .with_context(|| format!("kernel solve at basepoint {x}"))
}

/// Kernels for every basepoint, reusing stored ones based at `(x, 0)`.
pub fn kernels(cfg: &Loaded, flow: &FlowHistory, stored: Vec<KernelHistory>) -> Result<Vec<KernelHistory>> {
    let points = basepoints(cfg, flow)?;
    let mut stored: Vec<Option<KernelHistory>> = stored.into_iter().map(Some).collect();
    let mut out = Vec::with_capacity(points.len());
    let mut missing = Vec::new();
    for (i, &x) in points.iter().enumerate() {
        let found = stored
            .iter_mut()
            .find(|k| k.as_ref().is_some_and(|k| k.basepoint == x && k.base_time == 0.0))
            .and_then(Option::take);
        if found.is_none() {
            missing.push(i);
        }
        out.push(found);
    }
    let solved = par::map_slice(&missing, |&i| solve_kernel(cfg, flow, points[i]));
    for (i, k) in missing.into_iter().zip(solved) {
        out[i] = Some(k?);
    }
    Ok(out.into_iter().map(|k| k.expect("filled")).collect())
}

/// All reports of one enabled check.
#[derive(Debug, Serialize)]
pub struct CheckOutcome {
    pub check: &'static str,
    pub tolerance: f64,
    pub passed: bool,
    pub reports: Vec<Report>,
}

struct Ctx<'a> {
    cfg: &'a Loaded,
    flow: &'a FlowHistory,
    kernels: &'a [KernelHistory],
    curves: Vec<EntropyCurve>,
    functions: Vec<Vec<f64>>,
}

impl Ctx<'_> {
    /// `(kernel, sample index)` for every kernel and configured `s`.
    fn slices(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, k) in self.kernels.iter().enumerate() {
            for &s in &self.cfg.config.kernel.s {
                out.push((i, k.nearest(s)));
            }
        }
        out
    }

    fn view(&self, (i, j): (usize, usize)) -> Result<KernelSlice<'_>> {
        Ok(self.kernels[i].view(self.flow, j)?)
    }

    fn positive(&self, f: &[f64]) -> Vec<f64> {
        f.iter().map(|v| 1.0 + 0.5 * v).collect()
    }

    /// `s` moved onto the stored steps of a conformal flow.
    fn snap(&self, s: f64) -> f64 {
        match self.flow.backend() {
            Backend::ConformalTorus => self.flow.times()[self.flow.nearest_index(s)],
            _ => s,
        }
    }

    fn cfl(&self) -> f64 {
        self.cfg.config.backend.dt.cfl_fraction
    }

    fn mu_points(&self) -> usize {
        self.cfg.config.battery.mu_points
    }
}

fn flatten(v: Vec<Result<Vec<Report>>>) -> Result<Vec<Report>> {
    Ok(v.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

pub fn run_checks(cfg: &Loaded, flow: &FlowHistory, kernels: &[KernelHistory], tolerance_scale: f64) -> Result<Vec<CheckOutcome>> {
    let curves = par::map_slice(kernels, |k| pointed_entropy_curve(flow, k))
        .into_iter()
        .collect::<ricci_lab::Result<Vec<_>>>()?;
    let kmax = cfg.config.battery.kmax.unwrap_or_else(|| default_band(flow.mesh()));
    let functions = battery(flow.mesh(), kmax, cfg.config.battery.functions.max(1), cfg.config.seed);
    let ctx = Ctx {
        cfg,
        flow,
        kernels,
        curves,
        functions,
    };
    cfg.config
        .checks
        .enabled()
        .into_iter()
        .map(|(check, tol)| {
            let tolerance = tol.get_ref() * tolerance_scale;
            let reports = run_one(&ctx, check, tolerance).with_context(|| format!("check {}", check.name()))?;
            Ok(CheckOutcome {
                check: check.name(),
                tolerance,
                passed: reports.iter().all(Report::passed),
                reports,
            })
        })
        .collect()
}

fn run_one(ctx: &Ctx, check: Check, tol: f64) -> Result<Vec<Report>> {
    let flow = ctx.flow;
    let s_values = &ctx.cfg.config.kernel.s;
    let seed = ctx.cfg.config.seed;
    match check {
        Check::Monotonicity => Ok(ctx.curves.iter().flat_map(|c| monotonicity_checks(c, tol)).collect()),
        Check::Ordering => Ok(ctx.curves.iter().map(|c| ordering_check(c, tol)).collect()),
        Check::Nash => {
            let mut out = Vec::new();
            for (i, j) in ctx.slices() {
                let c = &ctx.curves[i];
                let pair = nash_entropy(c, c.s[j])?;
                // Relative to ∫f dν = N + n/2; N alone may vanish.
                let scale = pair.integral + 0.5 * flow.mesh().dim() as f64;
                out.push(
                    Report::equal("nash-identity", pair.time_average, pair.integral, tol * scale)
                        .at(pair.s)
                        .based_at(c.basepoint),
                );
            }
            Ok(out)
        }
        Check::Poincare => flatten(par::map_slice(&ctx.slices(), |&p| {
            let ks = ctx.view(p)?;
            Ok(ctx.functions.iter().map(|f| poincare_check(&ks, f, tol).based_at(ctx.kernels[p.0].basepoint)).collect())
        })),
        Check::LogSobolev => flatten(par::map_slice(&ctx.slices(), |&p| {
            let ks = ctx.view(p)?;
            ctx.functions
                .iter()
                .map(|f| Ok(logsobolev_check(&ks, &ctx.positive(f), tol)?.based_at(ctx.kernels[p.0].basepoint)))
                .collect()
        })),
        Check::Concentration => flatten(par::map_slice(&ctx.slices(), |&p| {
            let ks = ctx.view(p)?;
            let mesh = flow.mesh();
            let pairs = set_pairs(mesh, ctx.cfg.config.battery.set_pairs, Some(ctx.kernels[p.0].basepoint), seed.wrapping_add(1));
            pairs
                .into_iter()
                .map(|(a, b)| {
                    let a = PointSet::new(a, ks.sample.s, mesh)?;
                    let b = PointSet::new(b, ks.sample.s, mesh)?;
                    Ok(concentration_check(&ks, &a, &b, tol)?.based_at(ctx.kernels[p.0].basepoint))
                })
                .collect()
        })),
        Check::Herbst => flatten(par::map_slice(&ctx.slices(), |&p| {
            let ks = ctx.view(p)?;
            let top = 2.0 / ks.tau.sqrt();
            let lambdas: Vec<f64> = (1..=20).map(|j| top * j as f64 / 20.0).collect();
            let mut out = Vec::new();
            for f in ctx.functions.iter().take(10) {
                let (_, reports) = herbst_transform(&ks, f, &lambdas, tol)?;
                out.extend(reports.into_iter().map(|r| r.based_at(ctx.kernels[p.0].basepoint)));
            }
            Ok(out)
        })),
        Check::Homotopy => {
            // Low band: the quadratures resolve the decay of |∇u|².
            let u = ctx.positive(&battery(flow.mesh(), 2, 1, seed)[0]);
            let mut out = Vec::new();
            for (i, j) in ctx.slices() {
                let k = &ctx.kernels[i];
                let s = k.samples[j].s;
                for variant in [Homotopy::Square, Homotopy::XLogX] {
                    out.push(homotopy_identity_check(flow, k, &u, s, variant, ctx.cfl(), tol)?);
                }
            }
            for &s in s_values {
                let s = ctx.snap(s);
                out.push(gradient_interpolation_check(flow, &u, s, 0.0, 16, ctx.cfl())?.report(s, tol));
            }
            Ok(out)
        }
        Check::Zhang => {
            let t1 = ctx.snap(s_values.iter().cloned().fold(0.0, f64::min));
            let times: Vec<f64> = (1..=8).map(|j| t1 * (1.0 - j as f64 / 8.0)).collect();
            flatten(par::map_slice(&ctx.functions[..ctx.functions.len().min(4)], |f| {
                let u = forward_solve(flow, &ctx.positive(f), t1, &times, ctx.cfl())?;
                Ok(vec![zhang_gradient_check(flow, &u, t1, 0.0, tol)?])
            }))
        }
        Check::KernelBounds => {
            let table = kernel_bound_mu_table(flow, ctx.mu_points(), &MuOptions::default())?;
            flatten(par::map_slice(ctx.kernels, |k| Ok(kernel_bounds_check(flow, k, &table, tol)?.to_vec())))
        }
        Check::Moments => {
            let mut out = Vec::new();
            for &s in s_values {
                let s = ctx.snap(s);
                let control = basic_control(flow, s, ctx.mu_points(), &MuOptions::default())?;
                let table = moment_mu_table(flow, s, 0.0, ctx.mu_points(), &MuOptions::default())?;
                for k in ctx.kernels {
                    let ks = k.view(flow, k.nearest(s))?;
                    out.extend(
                        moment_bounds_check(&ks, control.c, &table, tol)
                            .into_iter()
                            .map(|r| r.based_at(k.basepoint)),
                    );
                }
            }
            Ok(out)
        }
        Check::Collapse => {
            let root = flow.horizon().sqrt();
            let radii = [0.25 * root, 0.5 * root, root];
            // μ(g(−T), T + ρ²) sampled inside every window ρ ∈ (0, r].
            let taus: Vec<f64> = radii
                .iter()
                .flat_map(|r| (1..=4).map(move |j| flow.horizon() + r * r * j as f64 / 4.0))
                .collect();
            let table = MuTable::compute(&flow.geom(0), &taus, &MuOptions::default())?;
            let sup_r = flow.geom(flow.len() - 1).scalar_curvature().iter().cloned().fold(0.0, f64::max);
            let mu_inf = table
                .infimum(flow.horizon(), flow.horizon() + root * root)
                .map_or(0.0, |(lower, _)| lower);
            let c = 1f64.max(sup_r * root * root).max(-mu_inf);
            let mut out = Vec::new();
            for k in ctx.kernels {
                for &r in &radii {
                    out.push(no_local_collapse_check(flow, 0.0, k.basepoint, r, c, &table)?);
                }
            }
            Ok(out)
        }
        Check::Duality => {
            let x = ctx.kernels.first().map_or(0, |k| k.basepoint);
            let y = match flow.mesh() {
                Mesh::Grid(g) => {
                    let off = (g.res() / 8) as isize;
                    g.offset_node(x, &vec![off; g.dim()])
                }
                Mesh::Sphere(s) => s.len() / 4,
            };
            let opts = match kernel_source(ctx.cfg) {
                KernelSource::Solved(o) => o,
                KernelSource::Analytic => KernelOptions::default(),
            };
            s_values
                .iter()
                .map(|&s| Ok(duality_check(flow, x, 0.0, y, s, &opts, tol)?))
                .collect()
        }
        Check::Regularity => {
            let scan = &ctx.cfg.config.scan;
            let opts = ScanOptions {
                stride: scan.stride,
                source: kernel_source(ctx.cfg),
                mu_points: ctx.mu_points(),
                ..Default::default()
            };
            let result = eps_regularity_scan(flow, scan.s, &opts)?;
            Ok(result.summary.reports(tol, false))
        }
    }
}

/// `true` when every check passed.
pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}
