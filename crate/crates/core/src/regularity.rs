//! Curvature regularity scale and the empirical ε-regularity scan.
//!
//! Surfaces use the norm convention `|Rm| = |K| = |R|/2`; flat tori of any
//! dimension have `|Rm| = 0`. Only thresholds and ratios enter the scan, so
//! the convention only fixes units.

use serde::{Deserialize, Serialize};

use crate::entropy::{default_tau_min, slice_entropies, MuOptions, MuTable};
use crate::error::{LabError, Result};
use crate::flow::{make_shrinking_sphere, FlowHistory};
use crate::geometry::{geodesic_distances_from, Backend, Mesh, MetricSlice, SliceGeom};
use crate::heatkernel::KernelOptions;
use crate::inequalities::KernelSource;
use crate::par;
use crate::report::Report;

/// Time samples on `[−T, t]` for backends that are analytic in time.
const ANALYTIC_SLICES: usize = 64;

fn curvature_norm(geom: &SliceGeom) -> Vec<f64> {
    geom.scalar_curvature().iter().map(|r| 0.5 * r.abs()).collect()
}

/// Slice times at or before `t`, latest first: the stored slices of conformal
/// flows, a uniform grid otherwise.
fn window_times(flow: &FlowHistory, t: f64) -> Result<Vec<f64>> {
    let horizon = flow.horizon();
    if !(t <= 0.0 && t > -horizon) {
        return Err(LabError::InvalidParameter(format!(
            "time {t} leaves no parabolic window in [{}, 0]",
            -horizon
        )));
    }
    match flow.backend() {
        Backend::ConformalTorus => {
            flow.index_of(t)?;
            let mut times: Vec<f64> = flow.times().into_iter().filter(|&s| s <= t + 1e-12 * horizon).collect();
            times.reverse();
            Ok(times)
        }
        _ => Ok((0..=ANALYTIC_SLICES)
            .map(|k| t - (t + horizon) * k as f64 / ANALYTIC_SLICES as f64)
            .collect()),
    }
}

/// `P_r(x, t) = B_r(x, t) × (t − r², t]`, the ball taken in `g(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolicBall {
    pub center: usize,
    pub time: f64,
    pub radius: f64,
    /// Nodes with `d_{g(t)}(x, ·) < r`.
    pub nodes: Vec<usize>,
    /// Sampled slice times in `(t − r², t]`.
    pub times: Vec<f64>,
}

impl ParabolicBall {
    pub fn new(flow: &FlowHistory, x: usize, t: f64, r: f64) -> Result<Self> {
        if !(r > 0.0) || t - r * r < -flow.horizon() * (1.0 + 1e-12) {
            return Err(LabError::InvalidParameter(format!(
                "parabolic ball of radius {r} at time {t} leaves [{}, 0]",
                -flow.horizon()
            )));
        }
        let metric = flow.metric_at(t)?;
        let geom = SliceGeom::new(flow.mesh(), &metric)?;
        let d = geodesic_distances_from(&geom, &[x]);
        let nodes = (0..d.len()).filter(|&i| d[i] < r).collect();
        let times = window_times(flow, t)?.into_iter().filter(|&s| t - s < r * r).collect();
        Ok(Self {
            center: x,
            time: t,
            radius: r,
            nodes,
            times,
        })
    }

    /// `sup |Rm|` over the ball on its sampled slices.
    pub fn sup_rm(&self, flow: &FlowHistory) -> Result<f64> {
        let mut sup = 0.0f64;
        for &s in &self.times {
            let metric = flow.metric_at(s)?;
            let rm = curvature_norm(&SliceGeom::new(flow.mesh(), &metric)?);
            sup = self.nodes.iter().fold(sup, |m, &i| m.max(rm[i]));
        }
        Ok(sup)
    }
}

/// Curvature data at one time, shared by every basepoint.
pub struct RegularityContext<'a> {
    flow: &'a FlowHistory,
    metric: MetricSlice,
    cap: f64,
    /// `√(t − t_k)` for the window slices, increasing.
    lags: Vec<f64>,
    /// `max_{j ≤ k} |Rm|(t_j)` per node.
    running_max: Vec<Vec<f64>>,
}

impl<'a> RegularityContext<'a> {
    pub fn new(flow: &'a FlowHistory, t: f64) -> Result<Self> {
        let times = window_times(flow, t)?;
        let mut lags = Vec::with_capacity(times.len());
        let mut running_max: Vec<Vec<f64>> = Vec::with_capacity(times.len());
        for &s in &times {
            let metric = flow.metric_at(s)?;
            let rm = curvature_norm(&SliceGeom::new(flow.mesh(), &metric)?);
            let next = match running_max.last() {
                Some(prev) => prev.iter().zip(&rm).map(|(a, b)| a.max(*b)).collect(),
                None => rm,
            };
            running_max.push(next);
            lags.push((t - s).max(0.0).sqrt());
        }
        Ok(Self {
            flow,
            metric: flow.metric_at(t)?,
            cap: (t + flow.horizon()).sqrt(),
            lags,
            running_max,
        })
    }

    pub fn time(&self) -> f64 {
        self.metric.time
    }

    /// `√(t + T)`, the largest admissible radius.
    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// `r_|Rm|(x, t) = sup{r ≤ √(t+T) : sup_{P_r(x,t)} |Rm| ≤ r⁻²}`.
    ///
    /// Nodes and slices enter `P_r` at the breakpoints `d(x, y)` and
    /// `√(t − t_k)`, between which the sup is constant. A binary search
    /// finds the first piece that fails, where the answer is either its left
    /// end or `(sup |Rm|)^{−1/2}`.
    pub fn scale(&self, x: usize) -> Result<f64> {
        let geom = SliceGeom::new(self.flow.mesh(), &self.metric)?;
        let d = geodesic_distances_from(&geom, &[x]);
        let cap = self.cap;
        let mut breaks: Vec<f64> = d.iter().chain(&self.lags).cloned().filter(|&b| b < cap).collect();
        breaks.push(0.0);
        breaks.push(cap);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        // Sup over the piece (breaks[i − 1], breaks[i]].
        let sup_on = |i: usize| -> f64 {
            let b = breaks[i - 1];
            let k = self.lags.partition_point(|&l| l <= b) - 1;
            let rm = &self.running_max[k];
            d.iter().zip(rm).filter(|(di, _)| **di <= b).map(|(_, v)| *v).fold(0.0, f64::max)
        };
        let holds = |i: usize| sup_on(i) * breaks[i] * breaks[i] <= 1.0;
        let (mut lo, mut hi) = (1, breaks.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if holds(mid) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo == breaks.len() {
            return Ok(cap);
        }
        Ok(breaks[lo - 1].max(sup_on(lo).sqrt().recip()).min(cap))
    }
}

pub fn regularity_scale(flow: &FlowHistory, x: usize, t: f64) -> Result<f64> {
    RegularityContext::new(flow, t)?.scale(x)
}

/// One scanned basepoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityRecord {
    pub x: usize,
    /// `r_|Rm|(x, 0)`.
    pub r_rm: f64,
    /// `−min{T, r_|Rm|²}`.
    pub t_of_x: f64,
    /// Kernel sample time used for `s`.
    pub s: f64,
    pub w: f64,
    pub nash: f64,
    /// `N_{t(x)}(x)` at the kernel sample nearest `t(x)`.
    pub nash_at_t_of_x: f64,
    pub r2_over_s: f64,
}

/// Constants of the basic control `R[g(s)] ≥ −C/|s|`,
/// `inf_{τ ∈ (0, 2|s|)} μ(g(s), τ) ≥ −C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasicControl {
    pub min_scalar_curvature: f64,
    pub mu_lower: f64,
    pub mu_upper: f64,
    /// `max(0, −|s| min R)`.
    pub c_curvature: f64,
    /// `max(0, −inf μ)` from the certified lower values.
    pub c_mu: f64,
    pub c: f64,
}

impl BasicControl {
    fn join(&self, other: &Self) -> Self {
        Self {
            min_scalar_curvature: self.min_scalar_curvature.min(other.min_scalar_curvature),
            mu_lower: self.mu_lower.min(other.mu_lower),
            mu_upper: self.mu_upper.min(other.mu_upper),
            c_curvature: self.c_curvature.max(other.c_curvature),
            c_mu: self.c_mu.max(other.c_mu),
            c: self.c.max(other.c),
        }
    }
}

pub fn basic_control(flow: &FlowHistory, s: f64, mu_points: usize, mu: &MuOptions) -> Result<BasicControl> {
    let k = match flow.backend() {
        Backend::ConformalTorus => flow.nearest_index(s),
        _ => usize::MAX,
    };
    let metric = if k == usize::MAX { flow.metric_at(s)? } else { flow.slices()[k].clone() };
    let geom = SliceGeom::new(flow.mesh(), &metric)?;
    let tau_max = -2.0 * metric.time;
    let tau_min = default_tau_min(&geom).min(0.5 * tau_max);
    let table = MuTable::geometric(&geom, tau_min, tau_max, mu_points, mu)?;
    let (mu_lower, mu_upper) = table
        .infimum(tau_min, tau_max)
        .ok_or_else(|| LabError::InvalidParameter("empty μ table".into()))?;
    let min_r = geom.scalar_curvature().iter().cloned().fold(f64::INFINITY, f64::min);
    let c_curvature = (min_r * metric.time).max(0.0);
    let c_mu = (-mu_lower).max(0.0);
    Ok(BasicControl {
        min_scalar_curvature: min_r,
        mu_lower,
        mu_upper,
        c_curvature,
        c_mu,
        c: c_curvature.max(c_mu),
    })
}

/// Largest `ε` with `E ≥ −ε ⇒ r²/|s| ≥ ε` at every `(E, r²/|s|)` pair. A
/// point with `−E > r²/|s|` caps `ε` just below `−E`, one ulp down.
pub fn eps_star(points: &[(f64, f64)]) -> f64 {
    points
        .iter()
        .map(|&(e, b)| {
            let a = (-e).max(0.0);
            if b >= a {
                b
            } else {
                a.next_down()
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Points where `E ≥ −ε` but `r²/|s| < ε`.
pub fn implication_violations(points: &[(f64, f64)], eps: f64) -> usize {
    points.iter().filter(|&&(e, b)| e >= -eps && b < eps).count()
}

/// Spearman correlation with average ranks for ties; zero when either
/// variable is constant.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64;
            for &k in &idx[i..=j] {
                out[k] = avg;
            }
            i = j + 1;
        }
        out
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = 0.5 * (n - 1.0);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - mean) * (y - mean)).sum();
    let va: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mean).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub s: f64,
    pub points: usize,
    /// `ε*` for the Nash entropy `N_x(s)`.
    pub eps_star: f64,
    /// `ε*` for the pointed entropy `W_x(s)`.
    pub eps_star_w: f64,
    pub violations: usize,
    /// `max (W − N)`, nonpositive in theory.
    pub max_w_minus_n: f64,
    /// Rank correlation of `N` against `r²/|s|`.
    pub rank_correlation: f64,
    pub control: BasicControl,
}

impl ScanSummary {
    pub fn new(records: &[RegularityRecord], s: f64, control: BasicControl) -> Self {
        let nash: Vec<(f64, f64)> = records.iter().map(|r| (r.nash, r.r2_over_s)).collect();
        let w: Vec<(f64, f64)> = records.iter().map(|r| (r.w, r.r2_over_s)).collect();
        let eps = eps_star(&nash);
        let n: Vec<f64> = records.iter().map(|r| r.nash).collect();
        let b: Vec<f64> = records.iter().map(|r| r.r2_over_s).collect();
        Self {
            s,
            points: records.len(),
            eps_star: eps,
            eps_star_w: eps_star(&w),
            violations: implication_violations(&nash, eps),
            max_w_minus_n: records.iter().map(|r| r.w - r.nash).fold(f64::NEG_INFINITY, f64::max),
            rank_correlation: rank_correlation(&n, &b),
            control,
        }
    }

    /// `ε* > 0`, the implication at `ε*`, `W ≤ N` up to `tolerance`, and a
    /// nonnegative rank correlation when `with_trend`.
    pub fn reports(&self, tolerance: f64, with_trend: bool) -> Vec<Report> {
        let tag = |r: Report| r.at(self.s).with("C", self.control.c).with("points", self.points as f64);
        let mut out = vec![
            tag(Report::upper("eps-star-positive", f64::MIN_POSITIVE, self.eps_star, 0.0).with("eps_star_w", self.eps_star_w)),
            tag(Report::upper("eps-implication", self.violations as f64, 0.0, 0.0).with("eps_star", self.eps_star)),
            tag(Report::upper("scan-W-le-N", self.max_w_minus_n, 0.0, tolerance)),
        ];
        if with_trend {
            out.push(tag(Report::upper("scan-rank-correlation", 0.0, self.rank_correlation, 0.0)));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ScanOptions {
    /// Basepoints on every `stride`-th node per axis.
    pub stride: usize,
    pub source: KernelSource,
    pub mu: MuOptions,
    pub mu_points: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            stride: 4,
            source: KernelSource::Solved(KernelOptions::default()),
            mu: MuOptions::default(),
            mu_points: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityScan {
    pub records: Vec<RegularityRecord>,
    pub summary: ScanSummary,
}

/// Scan basepoints: the stride sub-lattice on grids, the north pole on spheres.
pub fn scan_basepoints(flow: &FlowHistory, stride: usize) -> Result<Vec<usize>> {
    match flow.mesh() {
        Mesh::Sphere(_) => Ok(vec![0]),
        Mesh::Grid(g) => {
            if stride == 0 || g.res() % stride != 0 {
                return Err(LabError::InvalidParameter(format!(
                    "stride {stride} must divide the resolution {}",
                    g.res()
                )));
            }
            let dim = g.dim();
            Ok((0..g.len())
                .filter(|&i| g.coords(i)[..dim].iter().all(|c| c % stride == 0))
                .collect())
        }
    }
}

fn scan_record(flow: &FlowHistory, ctx: &RegularityContext, x: usize, s: f64, source: &KernelSource) -> Result<RegularityRecord> {
    let r = ctx.scale(x)?;
    let t_of_x = -flow.horizon().min(r * r);
    let mut times = vec![s];
    if (t_of_x - s).abs() > 1e-12 * flow.horizon() {
        times.push(t_of_x);
    }
    let k = source.kernel(flow, x, &times)?;
    let js = k.nearest(s);
    let (w, nash, _) = slice_entropies(&k.view(flow, js)?);
    let nash_at_t_of_x = slice_entropies(&k.view(flow, k.nearest(t_of_x))?).1;
    let s_used = k.samples[js].s;
    Ok(RegularityRecord {
        x,
        r_rm: r,
        t_of_x,
        s: s_used,
        w,
        nash,
        nash_at_t_of_x,
        r2_over_s: r * r / s_used.abs(),
    })
}

/// `(N_x(s), W_x(s), r_|Rm|(x,0)²/|s|, N_{t(x)}(x))` at every basepoint,
/// one backward kernel solve each, with `ε*` and the basic-control constant.
pub fn eps_regularity_scan(flow: &FlowHistory, s: f64, opts: &ScanOptions) -> Result<RegularityScan> {
    if !(s < 0.0 && s >= -flow.horizon()) {
        return Err(LabError::InvalidParameter(format!(
            "scan time {s} must lie in [{}, 0)",
            -flow.horizon()
        )));
    }
    let ctx = RegularityContext::new(flow, 0.0)?;
    let basepoints = scan_basepoints(flow, opts.stride)?;
    let records = par::map_slice(&basepoints, |&x| scan_record(flow, &ctx, x, s, &opts.source))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let control = basic_control(flow, s, opts.mu_points, &opts.mu)?;
    let summary = ScanSummary::new(&records, s, control);
    Ok(RegularityScan { records, summary })
}

/// Scatter rows `x-index,N,W,r2_over_s,t_of_x,N_at_t_of_x`.
pub fn scatter_csv(records: &[RegularityRecord]) -> String {
    let mut out = String::from("x-index,N,W,r2_over_s,t_of_x,N_at_t_of_x\n");
    for r in records {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?}\n",
            r.x, r.nash, r.w, r.r2_over_s, r.t_of_x, r.nash_at_t_of_x
        ));
    }
    out
}

/// Shrinking spheres with `T = horizon_fraction · r0²`, scanned at the pole
/// with the series kernel. Since `r0² > 2T` the time window always binds,
/// `r_|Rm|² = T`, so `r²/|s|` tracks `(r0/√|s|)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereFamilyScan {
    pub radii: Vec<f64>,
    pub horizons: Vec<f64>,
    /// `r(0)/√|s|`.
    pub ratio: Vec<f64>,
    pub records: Vec<RegularityRecord>,
    pub summary: ScanSummary,
}

pub fn sphere_family_scan(
    radii: &[f64],
    horizon_fraction: f64,
    s: f64,
    degree: usize,
    slices: usize,
    opts: &ScanOptions,
) -> Result<SphereFamilyScan> {
    if !(horizon_fraction > 0.0 && horizon_fraction < 0.5) || radii.is_empty() {
        return Err(LabError::InvalidParameter(format!(
            "need radii and a horizon fraction in (0, 1/2) (got {horizon_fraction})"
        )));
    }
    let horizons: Vec<f64> = radii.iter().map(|r| horizon_fraction * r * r).collect();
    let rows = par::map_range(radii.len(), |i| -> Result<(RegularityRecord, BasicControl)> {
        let flow = make_shrinking_sphere(radii[i], horizons[i], degree, slices)?;
        if s < -horizons[i] {
            return Err(LabError::InvalidParameter(format!(
                "scan time {s} precedes the horizon {} of radius {}",
                -horizons[i], radii[i]
            )));
        }
        let ctx = RegularityContext::new(&flow, 0.0)?;
        let record = scan_record(&flow, &ctx, 0, s, &KernelSource::Analytic)?;
        Ok((record, basic_control(&flow, s, opts.mu_points, &opts.mu)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let records: Vec<RegularityRecord> = rows.iter().map(|r| r.0.clone()).collect();
    let control = rows[1..].iter().fold(rows[0].1.clone(), |acc, r| acc.join(&r.1));
    let summary = ScanSummary::new(&records, s, control);
    Ok(SphereFamilyScan {
        radii: radii.to_vec(),
        horizons,
        ratio: radii.iter().map(|r| r / s.abs().sqrt()).collect(),
        records,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::make_flat_torus;

    #[test]
    fn flat_scale_is_the_time_window() {
        let flow = make_flat_torus(2, 6.0, 24, 0.7).unwrap();
        assert_eq!(regularity_scale(&flow, 5, 0.0).unwrap(), 0.7f64.sqrt());
        assert!((regularity_scale(&flow, 5, -0.2).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn eps_star_is_sharp() {
        let pts = [(-0.1, 0.5), (-0.6, 0.2), (0.01, 2.0)];
        let eps = eps_star(&pts);
        assert_eq!(eps, 0.5);
        assert_eq!(implication_violations(&pts, eps), 0);
        assert_eq!(implication_violations(&pts, 0.5000001), 1);
        let capped = [(-0.6, 0.2)];
        let e = eps_star(&capped);
        assert!(e < 0.6 && implication_violations(&capped, e) == 0);
        assert_eq!(implication_violations(&capped, 0.6), 1);
    }

    #[test]
    fn rank_correlation_extremes() {
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[4.0, 5.0, 9.0]), 1.0);
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), 0.0);
    }
}
