//! Experiment configuration: a TOML file with fixed sections and no code.
//! Every validation error names the offending line.

use std::ops::Range;
use std::path::PathBuf;

use anyhow::{bail, Result};
use serde::Deserialize;
use toml::Spanned;

use ricci_lab::geometry::Backend;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub out: Option<PathBuf>,
    /// Worker threads; `--workers` and `RICCI_LAB_WORKERS` override it.
    pub workers: Option<usize>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub battery: BatteryConfig,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default)]
    pub scan: ScanConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: Spanned<String>,
    pub horizon: Spanned<f64>,
    /// Grid dimension (flat tori); conformal flows are two-dimensional.
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_side")]
    pub side: f64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    pub r0: Option<Spanned<f64>>,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_slices")]
    pub slices: usize,
    /// Conformal initial data `u0 = amplitude · trig_field(kmax, seed)`.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_kmax")]
    pub kmax: usize,
    #[serde(default)]
    pub dt: DtPolicy,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtPolicy {
    #[serde(default = "default_cfl")]
    pub cfl_fraction: f64,
    pub dt_max: Option<f64>,
}

impl Default for DtPolicy {
    fn default() -> Self {
        Self {
            cfl_fraction: default_cfl(),
            dt_max: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// "analytic" or "solved".
    #[serde(default = "default_source")]
    pub source: Spanned<String>,
    /// Explicit basepoints; otherwise every `stride`-th lattice node.
    pub basepoints: Option<Vec<usize>>,
    pub stride: Option<usize>,
    #[serde(default = "default_s")]
    pub s: Vec<f64>,
    #[serde(default = "default_per_doubling")]
    pub per_doubling: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            source: default_source(),
            basepoints: None,
            stride: None,
            s: default_s(),
            per_doubling: default_per_doubling(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryConfig {
    /// Random test functions per kernel sample.
    #[serde(default = "default_functions")]
    pub functions: usize,
    #[serde(default = "default_set_pairs")]
    pub set_pairs: usize,
    /// Band limit of the test functions; mesh default when absent.
    pub kmax: Option<usize>,
    #[serde(default = "default_mu_points")]
    pub mu_points: usize,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            functions: default_functions(),
            set_pairs: default_set_pairs(),
            kmax: None,
            mu_points: default_mu_points(),
        }
    }
}

/// Enabled checks and their tolerances.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Checks {
    pub monotonicity: Option<Spanned<f64>>,
    pub ordering: Option<Spanned<f64>>,
    pub nash: Option<Spanned<f64>>,
    pub poincare: Option<Spanned<f64>>,
    pub log_sobolev: Option<Spanned<f64>>,
    pub concentration: Option<Spanned<f64>>,
    pub herbst: Option<Spanned<f64>>,
    pub homotopy: Option<Spanned<f64>>,
    pub zhang: Option<Spanned<f64>>,
    pub kernel_bounds: Option<Spanned<f64>>,
    pub moments: Option<Spanned<f64>>,
    pub collapse: Option<Spanned<f64>>,
    pub duality: Option<Spanned<f64>>,
    pub regularity: Option<Spanned<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    Monotonicity,
    Ordering,
    Nash,
    Poincare,
    LogSobolev,
    Concentration,
    Herbst,
    Homotopy,
    Zhang,
    KernelBounds,
    Moments,
    Collapse,
    Duality,
    Regularity,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Monotonicity => "monotonicity",
            Check::Ordering => "ordering",
            Check::Nash => "nash",
            Check::Poincare => "poincare",
            Check::LogSobolev => "log-sobolev",
            Check::Concentration => "concentration",
            Check::Herbst => "herbst",
            Check::Homotopy => "homotopy",
            Check::Zhang => "zhang",
            Check::KernelBounds => "kernel-bounds",
            Check::Moments => "moments",
            Check::Collapse => "collapse",
            Check::Duality => "duality",
            Check::Regularity => "regularity",
        }
    }
}

impl Checks {
    /// Enabled checks in a fixed order.
    pub fn enabled(&self) -> Vec<(Check, &Spanned<f64>)> {
        let all = [
            (Check::Monotonicity, &self.monotonicity),
            (Check::Ordering, &self.ordering),
            (Check::Nash, &self.nash),
            (Check::Poincare, &self.poincare),
            (Check::LogSobolev, &self.log_sobolev),
            (Check::Concentration, &self.concentration),
            (Check::Herbst, &self.herbst),
            (Check::Homotopy, &self.homotopy),
            (Check::Zhang, &self.zhang),
            (Check::KernelBounds, &self.kernel_bounds),
            (Check::Moments, &self.moments),
            (Check::Collapse, &self.collapse),
            (Check::Duality, &self.duality),
            (Check::Regularity, &self.regularity),
        ];
        all.into_iter().filter_map(|(c, t)| t.as_ref().map(|t| (c, t))).collect()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "default_scan_s")]
    pub s: f64,
    #[serde(default = "default_scan_stride")]
    pub stride: usize,
    /// Sphere family: initial radii, with `T = horizon_fraction · r0²`.
    pub radii: Option<Vec<f64>>,
    #[serde(default = "default_fraction")]
    pub horizon_fraction: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            s: default_scan_s(),
            stride: default_scan_stride(),
            radii: None,
            horizon_fraction: default_fraction(),
        }
    }
}

fn default_dim() -> usize {
    2
}
fn default_side() -> f64 {
    2.0 * std::f64::consts::PI
}
fn default_resolution() -> usize {
    32
}
fn default_degree() -> usize {
    32
}
fn default_slices() -> usize {
    64
}
fn default_amplitude() -> f64 {
    0.3
}
fn default_kmax() -> usize {
    2
}
fn default_cfl() -> f64 {
    0.8
}
fn default_source() -> Spanned<String> {
    Spanned::new(0..0, "solved".into())
}
fn default_s() -> Vec<f64> {
    vec![-0.5]
}
fn default_per_doubling() -> usize {
    16
}
fn default_functions() -> usize {
    100
}
fn default_set_pairs() -> usize {
    50
}
fn default_mu_points() -> usize {
    6
}
fn default_scan_s() -> f64 {
    -0.25
}
fn default_scan_stride() -> usize {
    4
}
fn default_fraction() -> f64 {
    0.4
}

/// A parsed configuration together with its source text, for line lookups.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub text: String,
    pub path: PathBuf,
}

impl Loaded {
    pub fn read(path: PathBuf) -> Result<Self> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e.to_string().trim_end()))?;
        let loaded = Self { config, text, path };
        loaded.validate()?;
        Ok(loaded)
    }

    fn line(&self, span: Range<usize>) -> usize {
        self.text[..span.start.min(self.text.len())].matches('\n').count() + 1
    }

    fn fail(&self, span: Range<usize>, msg: String) -> anyhow::Error {
        anyhow::anyhow!("{}:{}: {msg}", self.path.display(), self.line(span))
    }

    pub fn backend(&self) -> Backend {
        Backend::parse(self.config.backend.kind.get_ref()).expect("validated")
    }

    pub fn analytic(&self) -> bool {
        self.config.kernel.source.get_ref() == "analytic"
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        let b = &c.backend;
        let kind = &b.kind;
        let backend = match Backend::parse(kind.get_ref()) {
            Some(backend) => backend,
            None => bail!(self.fail(
                kind.span(),
                format!("unknown backend \"{}\" (flat-torus, shrinking-sphere, conformal-torus)", kind.get_ref())
            )),
        };
        let horizon = *b.horizon.get_ref();
        if !(horizon > 0.0 && horizon.is_finite()) {
            bail!(self.fail(b.horizon.span(), format!("horizon must be positive (got {horizon})")));
        }
        match backend {
            Backend::ShrinkingSphere => {
                let Some(r0) = &b.r0 else {
                    bail!(self.fail(kind.span(), "the sphere needs r0".into()));
                };
                let r = *r0.get_ref();
                if !(r * r > 2.0 * horizon) {
                    bail!(self.fail(
                        r0.span(),
                        format!("flow singular before t=0: need r0^2 > 2T (r0 = {r}, T = {horizon})")
                    ));
                }
            }
            _ => {
                if let Some(r0) = &b.r0 {
                    bail!(self.fail(r0.span(), "r0 only applies to the sphere".into()));
                }
            }
        }
        if backend == Backend::ConformalTorus && b.dim != 2 {
            bail!(self.fail(kind.span(), "the conformal flow is two-dimensional".into()));
        }
        let source = &c.kernel.source;
        match source.get_ref().as_str() {
            "solved" => {}
            "analytic" if backend != Backend::ConformalTorus => {}
            "analytic" => bail!(self.fail(source.span(), "conformal flows have no analytic kernel".into())),
            other => bail!(self.fail(source.span(), format!("unknown kernel source \"{other}\" (analytic, solved)"))),
        }
        if let Some(s) = c.kernel.s.iter().find(|&&s| !(s < 0.0 && -s <= horizon)) {
            bail!("{}: kernel sample time {s} must lie in [-T, 0)", self.path.display());
        }
        for (check, tol) in c.checks.enabled() {
            let v = *tol.get_ref();
            if !(v > 0.0 && v.is_finite()) {
                bail!(self.fail(tol.span(), format!("tolerance of {} must be positive (got {v})", check.name())));
            }
        }
        Ok(())
    }
}
