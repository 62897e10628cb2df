//! `ricci-lab`: build flows, solve kernels, verify and scan from a TOML config.

mod config;
mod manifest;
mod suite;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ricci_lab::entropy::pointed_entropy_curve;
use ricci_lab::flow::FlowHistory;
use ricci_lab::geometry::Backend;
use ricci_lab::heatkernel::KernelHistory;
use ricci_lab::io::{load_history, save_history};
use ricci_lab::regularity::{eps_regularity_scan, scatter_csv, sphere_family_scan, ScanOptions};
use ricci_lab::report::to_csv;

use config::Loaded;
use manifest::Manifest;

#[derive(Parser)]
#[command(name = "ricci-lab", version, about = "Ricci flow entropy and inequality experiments")]
struct Cli {
    /// Worker threads (defaults to the config, then to all cores).
    #[arg(long, global = true, env = "RICCI_LAB_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Read the flow (and any stored kernels) from this history file.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the flow and write `history.rlh`.
    FlowRun(Common),
    /// Solve kernels at the configured basepoints and write `kernels.rlh`.
    KernelSolve(Common),
    /// Run the enabled checks; exits 1 when any check fails.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Multiplies every configured tolerance.
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
    /// ε-regularity scan; on the sphere with `scan.radii`, the family scan.
    Scan(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::FlowRun(_) => "flow-run",
            Command::KernelSolve(_) => "kernel-solve",
            Command::Verify { .. } => "verify",
            Command::Scan(_) => "scan",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::FlowRun(c) | Command::KernelSolve(c) | Command::Scan(c) => c,
            Command::Verify { common, .. } => common,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` when a check failed.
fn run(cli: &Cli) -> Result<bool> {
    let common = cli.command.common();
    let cfg = Loaded::read(common.config.clone())?;
    if let Some(n) = cli.workers.or(cfg.config.workers) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("worker pool")?;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.config.out.clone())
        .context("no output directory: pass --out or set `out`")?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = Manifest::new(cli.command.name(), &cfg);
    let ok = match &cli.command {
        Command::FlowRun(_) => {
            let flow = suite::build_flow(&cfg)?;
            write_history(&out, "history.rlh", &flow, &[], &mut manifest)?;
            write(&out, "flow.csv", &flow_csv(&flow), &mut manifest)?;
            true
        }
        Command::KernelSolve(c) => {
            let (flow, stored) = flow_and_kernels(&cfg, c)?;
            let kernels = suite::kernels(&cfg, &flow, stored)?;
            write_history(&out, "kernels.rlh", &flow, &kernels, &mut manifest)?;
            for k in &kernels {
                let curve = pointed_entropy_curve(&flow, k)?;
                write(&out, &format!("entropy-{}.csv", k.basepoint), &curve.to_csv(), &mut manifest)?;
            }
            true
        }
        Command::Verify { common, tolerance_scale } => {
            if !(*tolerance_scale >= 0.0 && tolerance_scale.is_finite()) {
                anyhow::bail!("--tolerance-scale must be a non-negative number (got {tolerance_scale})");
            }
            manifest.tolerance_scale = Some(*tolerance_scale);
            let (flow, stored) = flow_and_kernels(&cfg, common)?;
            let kernels = suite::kernels(&cfg, &flow, stored)?;
            let outcomes = suite::run_checks(&cfg, &flow, &kernels, *tolerance_scale)?;
            write(&out, "reports.json", &serde_json::to_string_pretty(&outcomes)?, &mut manifest)?;
            let all: Vec<_> = outcomes.iter().flat_map(|o| o.reports.iter().cloned()).collect();
            write(&out, "reports.csv", &to_csv(&all), &mut manifest)?;
            for o in &outcomes {
                let failed = o.reports.iter().filter(|r| !r.passed()).count();
                println!(
                    "{:<14} {}  ({} reports, {failed} failed, tolerance {:e})",
                    o.check,
                    if o.passed { "PASS" } else { "FAIL" },
                    o.reports.len(),
                    o.tolerance
                );
            }
            suite::all_passed(&outcomes)
        }
        Command::Scan(c) => scan(&cfg, c, &out, &mut manifest)?,
    };
    manifest.write(&out)?;
    Ok(ok)
}

fn flow_and_kernels(cfg: &Loaded, c: &Common) -> Result<(FlowHistory, Vec<KernelHistory>)> {
    match &c.history {
        Some(path) => {
            let (flow, kernels) = load_history(path).with_context(|| format!("reading {}", path.display()))?;
            if flow.backend() != cfg.backend() {
                anyhow::bail!(
                    "{} holds a {} flow but the config asks for {}",
                    path.display(),
                    flow.backend().name(),
                    cfg.backend().name()
                );
            }
            Ok((flow, kernels))
        }
        None => Ok((suite::build_flow(cfg)?, Vec::new())),
    }
}

fn scan(cfg: &Loaded, c: &Common, out: &Path, manifest: &mut Manifest) -> Result<bool> {
    let sc = &cfg.config.scan;
    let opts = ScanOptions {
        stride: sc.stride,
        source: suite::kernel_source(cfg),
        mu_points: cfg.config.battery.mu_points,
        ..Default::default()
    };
    let (summary, records) = match (&sc.radii, cfg.backend()) {
        (Some(radii), Backend::ShrinkingSphere) => {
            let b = &cfg.config.backend;
            let family = sphere_family_scan(radii, sc.horizon_fraction, sc.s, b.degree, b.slices, &opts)?;
            (family.summary, family.records)
        }
        _ => {
            let (flow, _) = flow_and_kernels(cfg, c)?;
            let result = eps_regularity_scan(&flow, sc.s, &opts)?;
            (result.summary, result.records)
        }
    };
    let reports = summary.reports(1e-12, true);
    write(out, "scan.json", &serde_json::to_string_pretty(&summary)?, manifest)?;
    write(out, "scatter.csv", &scatter_csv(&records), manifest)?;
    write(out, "scan-reports.csv", &to_csv(&reports), manifest)?;
    println!(
        "eps* = {:e}  ({} points, {} violations, C = {:e})",
        summary.eps_star, summary.points, summary.violations, summary.control.c
    );
    Ok(reports.iter().all(|r| r.passed()))
}

fn flow_csv(flow: &FlowHistory) -> String {
    let d = flow.diagnostics();
    let mut s = String::from("t,min_R,area,max_abs_u\n");
    for k in 0..d.times.len() {
        s.push_str(&format!(
            "{:?},{:?},{:?},{:?}\n",
            d.times[k], d.min_scalar_curvature[k], d.area[k], d.max_abs_conformal[k]
        ));
    }
    s
}

fn write(dir: &Path, name: &str, contents: &str, manifest: &mut Manifest) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    manifest.record(name, contents.as_bytes());
    Ok(())
}

fn write_history(dir: &Path, name: &str, flow: &FlowHistory, kernels: &[KernelHistory], manifest: &mut Manifest) -> Result<()> {
    let path = dir.join(name);
    save_history(&path, flow, kernels).with_context(|| format!("writing {}", path.display()))?;
    let bytes = std::fs::read(&path)?;
    manifest.record(name, &bytes);
    Ok(())
}
