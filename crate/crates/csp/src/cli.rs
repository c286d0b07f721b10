//! The `csp` command line.
//!
//! Exit codes: 0 when every invoked threshold passes, 1 when one fails or a
//! run breaks down, 2 for usage and configuration errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use csp_core::engine::BasisStack;
use csp_core::fibers::extract_cspf;
use csp_core::manifold::{build_cspm, CspmTable, SlowGrid};
use csp_core::projection::{project, shooting_base, slow_phase_error};
use csp_core::{StatePoint, StepSchedule, SystemDefinition};

use crate::config::{parse_list, RunConfig};
use crate::error::{AppError, AppResult};
use crate::experiment::{run_sweep, Experiment, ExperimentKind, SweepTable};
use crate::io::{
    read_report, render_reports, write_fibers_csv, write_json, write_manifold_csv, write_sweep_csv, ProjectionReport,
    SweepReport,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "csp",
    version,
    about = "CSP slow manifolds, fast fibers and convergence-order sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every run; each overrides the config file.
#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mmh, linear2d or tilted.
    #[arg(long)]
    system: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    kappa: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    tilt: Option<String>,
    /// CSP order.
    #[arg(long)]
    q: Option<String>,
    /// two_step or one_step.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    grid_min: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    grid_max: Option<String>,
    #[arg(long)]
    grid_nodes: Option<String>,
}

impl Common {
    fn load(&self, extra: &[(&str, Option<&String>)]) -> AppResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text =
                std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        let flags = [
            ("system", self.system.as_ref()),
            ("kappa", self.kappa.as_ref()),
            ("lambda", self.lambda.as_ref()),
            ("tilt", self.tilt.as_ref()),
            ("q", self.q.as_ref()),
            ("mode", self.mode.as_ref()),
            ("grid.min", self.grid_min.as_ref()),
            ("grid.max", self.grid_max.as_ref()),
            ("grid.nodes", self.grid_nodes.as_ref()),
        ];
        for (key, value) in flags.iter().chain(extra) {
            if let Some(v) = value {
                cfg.set(key, v)
                    .map_err(|e| AppError::Usage(format!("--{}: {e}", key.replace('.', "-"))))?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare numeric MMH manifolds and fast columns with closed forms (q = 1, 2).
    ValidateMmh {
        #[command(flatten)]
        common: Common,
        /// Comma-separated eps values (default 1e-3).
        #[arg(long)]
        eps: Option<String>,
        /// Write one JSON report per order to `<prefix>_q<Q>.json`.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run an eps sweep and fit the convergence order.
    Sweep {
        /// Experiment name, e.g. manifold_error or fiber_angle.
        #[arg(long)]
        exp: String,
        #[command(flatten)]
        common: Common,
        /// current or previous.
        #[arg(long)]
        policy: Option<String>,
        /// fiber_search or vertical_base.
        #[arg(long)]
        scheme: Option<String>,
        /// Comma-separated eps values.
        #[arg(long)]
        eps: Option<String>,
        /// Initial condition for projection_error, slow entries first.
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long)]
        horizon: Option<String>,
        /// CSV output (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON report output.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Tabulate the order-q CSP manifold on a grid.
    Manifold {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate fast fiber frames along the order-q manifold.
    Fibers {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project an initial condition onto the order-q manifold.
    Project {
        #[command(flatten)]
        common: Common,
        /// Slow entries first, comma-separated.
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        eps: f64,
        /// Slow-time horizon of the shooting reference.
        #[arg(long)]
        horizon: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize JSON sweep reports as a table.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command, writing to the
/// process's standard streams. Returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_cli_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_cli_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_FAIL
            }
        }
    }
}

fn create(path: &Path) -> AppResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn eps_flag(eps: Option<&String>) -> AppResult<Option<Vec<f64>>> {
    eps.map(|e| parse_list(e).map_err(|m| AppError::Usage(format!("--eps: {m}"))))
        .transpose()
}

fn summary(table: &SweepTable) -> String {
    let exp = &table.experiment;
    let verdict = table.verdict();
    let mut s = format!("# {} q={} mode={}", exp.kind, exp.q, exp.mode.name());
    if exp.kind == ExperimentKind::FiberAngle {
        s.push_str(&format!(" policy={}", exp.policy.name()));
    }
    if exp.kind == ExperimentKind::ProjectionError {
        s.push_str(&format!(" scheme={}", exp.scheme.name()));
    }
    if let Some(fit) = table.fit {
        s.push_str(&format!(" slope={:.4} r2={:.5}", fit.slope, fit.r2));
    }
    s.push_str(if verdict.pass { " PASS" } else { " FAIL" });
    s.push_str(&format!(" ({})", verdict.reason));
    s
}

fn grid_for(cfg: &RunConfig, sys: &SystemDefinition) -> AppResult<SlowGrid> {
    let domain = sys.slow_domain();
    let m = sys.slow_dim();
    let lower = cfg.grid_min.map(|v| vec![v; m]).unwrap_or_else(|| domain.lower.clone());
    let upper = cfg.grid_max.map(|v| vec![v; m]).unwrap_or_else(|| domain.upper.clone());
    Ok(SlowGrid::uniform(&lower, &upper, cfg.grid_nodes)?)
}

fn manifold_table(cfg: &RunConfig, eps: f64) -> AppResult<(SystemDefinition, BasisStack, CspmTable)> {
    if !(eps >= 0.0) {
        return Err(AppError::Usage(format!("--eps must be >= 0, got {eps}")));
    }
    let sys = cfg.demo_system()?.build()?;
    let basis = BasisStack::chain(&sys, cfg.q, cfg.mode, StepSchedule::default())?;
    let grid = grid_for(cfg, &sys)?;
    let table = build_cspm(&sys, &basis, &grid, eps)?;
    Ok((sys, basis, table))
}

fn dispatch(command: Command, out: &mut dyn Write) -> AppResult<bool> {
    match command {
        Command::ValidateMmh { common, eps, json } => {
            let mut cfg = common.load(&[])?;
            let eps = eps_flag(eps.as_ref())?.unwrap_or_else(|| ExperimentKind::OracleDiff.default_eps());
            let mut all = true;
            for q in 1..=2 {
                cfg.q = q;
                let exp = Experiment::from_config(ExperimentKind::OracleDiff, &cfg)?;
                let table = run_sweep(&exp, &eps)?;
                all &= table.verdict().pass;
                writeln!(out, "{}", summary(&table))?;
                if let Some(prefix) = &json {
                    let path = PathBuf::from(format!("{}_q{q}.json", prefix.display()));
                    write_json(&SweepReport::from_table(&table), create(&path)?)?;
                }
            }
            Ok(all)
        }
        Command::Sweep {
            exp,
            common,
            policy,
            scheme,
            eps,
            x0,
            horizon,
            out: csv_out,
            json,
        } => {
            let kind = ExperimentKind::from_name(&exp)?;
            let cfg = common.load(&[
                ("policy", policy.as_ref()),
                ("scheme", scheme.as_ref()),
                ("x0", x0.as_ref()),
                ("horizon", horizon.as_ref()),
            ])?;
            let experiment = Experiment::from_config(kind, &cfg)?;
            let eps = match eps_flag(eps.as_ref())? {
                Some(list) => list,
                None => cfg.eps_list.clone().unwrap_or_else(|| kind.default_eps()),
            };
            let table = run_sweep(&experiment, &eps)?;
            match csv_out.or(cfg.out.clone()) {
                Some(path) => write_sweep_csv(&table, create(&path)?)?,
                None => write_sweep_csv(&table, &mut *out)?,
            }
            if let Some(path) = json {
                write_json(&SweepReport::from_table(&table), create(&path)?)?;
            }
            writeln!(out, "{}", summary(&table))?;
            Ok(table.verdict().pass)
        }
        Command::Manifold { common, eps, out: path } => {
            let cfg = common.load(&[])?;
            let (_, _, table) = manifold_table(&cfg, eps)?;
            match path.or(cfg.out.clone()) {
                Some(p) => write_manifold_csv(&table, create(&p)?)?,
                None => write_manifold_csv(&table, &mut *out)?,
            }
            Ok(true)
        }
        Command::Fibers {
            common,
            eps,
            policy,
            out: path,
        } => {
            let cfg = common.load(&[("policy", policy.as_ref())])?;
            let (_, basis, table) = manifold_table(&cfg, eps)?;
            let frames = table
                .grid()
                .nodes()
                .iter()
                .map(|y| extract_cspf(&basis, &table, table.parent(), y, eps, cfg.policy))
                .collect::<Result<Vec<_>, _>>()?;
            match path.or(cfg.out.clone()) {
                Some(p) => write_fibers_csv(&frames, create(&p)?)?,
                None => write_fibers_csv(&frames, &mut *out)?,
            }
            Ok(true)
        }
        Command::Project {
            common,
            x0,
            scheme,
            eps,
            horizon,
            out: path,
        } => {
            let cfg = common.load(&[
                ("x0", Some(&x0)),
                ("scheme", scheme.as_ref()),
                ("horizon", horizon.as_ref()),
            ])?;
            let (sys, basis, table) = manifold_table(&cfg, eps)?;
            let x0 = cfg.x0.clone().unwrap_or_default();
            let (m, n) = (sys.slow_dim(), sys.fast_dim());
            if x0.len() != m + n {
                return Err(AppError::Usage(format!(
                    "--x0 needs {} entries, got {}",
                    m + n,
                    x0.len()
                )));
            }
            let x0 = StatePoint::from_slices(&x0[..m], &x0[m..]);
            let result = project(cfg.scheme, &x0, &table, &basis, eps)?;
            let mut report = ProjectionReport::new(sys.name(), cfg.q, eps, &x0, &result);
            if eps > 0.0 {
                let reference = shooting_base(&x0, &table, eps, cfg.horizon)?;
                let slow = slow_phase_error(&sys, &reference, &result.base, eps, cfg.horizon)?;
                report.slow_phase_error = Some(slow.error);
                report.truncated = Some(slow.truncated);
            }
            match path.or(cfg.out.clone()) {
                Some(p) => write_json(&report, create(&p)?)?,
                None => write_json(&report, &mut *out)?,
            }
            Ok(true)
        }
        Command::Report { files } => {
            let reports = files
                .iter()
                .map(|p| {
                    let file = File::open(p).map_err(|e| AppError::Usage(format!("{}: {e}", p.display())))?;
                    read_report(file)
                })
                .collect::<AppResult<Vec<_>>>()?;
            out.write_all(render_reports(&reports).as_bytes())?;
            Ok(reports.iter().all(|r| r.pass))
        }
    }
}
