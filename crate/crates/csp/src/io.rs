//! CSV tables and JSON reports.
//!
//! Floats are written with Rust's `Display`, the shortest decimal string
//! that parses back to the same `f64`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use csp_core::fibers::FiberFrame;
use csp_core::manifold::CspmTable;
use csp_core::projection::ProjectionResult;
use csp_core::StatePoint;

use crate::error::AppResult;
use crate::experiment::{ExperimentKind, SweepTable};

fn num(v: f64) -> String {
    v.to_string()
}

fn names(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

/// Columns `eps, metric[, lambda11_norm], status`.
pub fn write_sweep_csv<W: Write>(table: &SweepTable, out: W) -> AppResult<()> {
    let with_l11 = table.experiment.kind == ExperimentKind::Lambda21Decay;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["eps", "metric"];
    if with_l11 {
        header.push("lambda11_norm");
    }
    header.push("status");
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec = vec![num(row.eps), row.metric.map(num).unwrap_or_default()];
        if with_l11 {
            rec.push(row.lambda11_norm.map(num).unwrap_or_default());
        }
        rec.push(match &row.failure {
            None => "ok".to_string(),
            Some(reason) => format!("failed: {reason}"),
        });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per grid node: `y1.., z1.., order, eps, residual`.
pub fn write_manifold_csv<W: Write>(table: &CspmTable, out: W) -> AppResult<()> {
    let (m, n) = (table.system().slow_dim(), table.system().fast_dim());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = names("y", m).chain(names("z", n)).collect();
    header.extend(["order", "eps", "residual"].map(String::from));
    w.write_record(&header)?;
    for (i, y) in table.grid().nodes().iter().enumerate() {
        let mut rec: Vec<String> = y.iter().chain(table.values()[i].iter()).map(|v| num(*v)).collect();
        rec.push(table.order().to_string());
        rec.push(num(table.eps()));
        rec.push(num(table.residuals()[i]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per frame: base point, then the fast columns entry by entry
/// (`a<col>_<row>`), then order and policy.
pub fn write_fibers_csv<W: Write>(frames: &[FiberFrame], out: W) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = frames.first() else {
        w.flush()?;
        return Ok(());
    };
    let (m, n) = (first.base.y.len(), first.base.z.len());
    let dim = m + n;
    let mut header: Vec<String> = names("y", m).chain(names("z", n)).collect();
    for c in 1..=first.columns.ncols() {
        header.extend((1..=dim).map(|r| format!("a{c}_{r}")));
    }
    header.extend(["order", "policy"].map(String::from));
    w.write_record(&header)?;
    for f in frames {
        let mut rec: Vec<String> = f.base.y.iter().chain(f.base.z.iter()).map(|v| num(*v)).collect();
        rec.extend(f.columns.iter().map(|v| num(*v)));
        rec.push(f.order.to_string());
        rec.push(f.policy.name().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub eps: f64,
    pub metric: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub experiment: String,
    pub params: BTreeMap<String, String>,
    pub rows: Vec<ReportRow>,
    pub slope: Option<f64>,
    pub r2: Option<f64>,
    pub pass: bool,
    pub reason: String,
    pub build: String,
    pub generated_unix: u64,
}

impl SweepReport {
    pub fn from_table(table: &SweepTable) -> Self {
        let verdict = table.verdict();
        Self {
            experiment: table.experiment.kind.name().to_string(),
            params: table
                .experiment
                .params()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            rows: table
                .rows
                .iter()
                .map(|r| ReportRow {
                    eps: r.eps,
                    metric: r.metric,
                    failure: r.failure.clone(),
                })
                .collect(),
            slope: table.fit.map(|f| f.slope),
            r2: table.fit.map(|f| f.r2),
            pass: verdict.pass,
            reason: verdict.reason,
            build: build_id(),
            generated_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

pub fn build_id() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

pub fn write_json<W: Write, T: Serialize>(value: &T, mut out: W) -> AppResult<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_report<R: Read>(input: R) -> AppResult<SweepReport> {
    Ok(serde_json::from_reader(input)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub system: String,
    pub order: usize,
    pub eps: f64,
    pub x0: Vec<f64>,
    pub scheme: String,
    pub base: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Against the shooting reference; absent when `eps = 0`.
    pub slow_phase_error: Option<f64>,
    pub truncated: Option<bool>,
}

impl ProjectionReport {
    pub fn new(system: &str, order: usize, eps: f64, x0: &StatePoint, result: &ProjectionResult) -> Self {
        Self {
            system: system.to_string(),
            order,
            eps,
            x0: x0.to_vec(),
            scheme: result.scheme.name().to_string(),
            base: result.base.to_vec(),
            amplitude: result.amplitude.iter().copied().collect(),
            iterations: result.iterations,
            residual: result.residual,
            slow_phase_error: None,
            truncated: None,
        }
    }
}

/// Fixed-width table of reports for the terminal.
pub fn render_reports(reports: &[SweepReport]) -> String {
    let mut s = format!(
        "{:<18} {:<28} {:>8} {:>7}  {}\n",
        "experiment", "params", "slope", "r2", "result"
    );
    for r in reports {
        let params = ["q", "mode", "policy", "scheme"]
            .iter()
            .filter_map(|k| r.params.get(*k).map(|v| format!("{k}={v}")))
            .collect::<Vec<_>>()
            .join(" ");
        let slope = r.slope.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        let r2 = r.r2.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let result = if r.pass { "PASS" } else { "FAIL" };
        s.push_str(&format!(
            "{:<18} {:<28} {:>8} {:>7}  {result} ({})\n",
            r.experiment, params, slope, r2, r.reason
        ));
    }
    s
}
