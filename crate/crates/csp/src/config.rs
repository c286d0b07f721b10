//! Flat `key = value` run configuration.
//!
//! ```text
//! # MMH sweep
//! system = mmh
//! kappa = 1
//! lambda = 0.5
//! q = 2
//! eps.list = 1e-4, 1e-3, 1e-2
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! repeated keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use csp_core::engine::RefinementMode;
use csp_core::fibers::EvalPolicy;
use csp_core::projection::ProjectionScheme;
use csp_core::systems::DemoSystem;

use crate::error::{AppError, AppResult};

pub const KEYS: &[&str] = &[
    "system",
    "kappa",
    "lambda",
    "tilt",
    "q",
    "mode",
    "policy",
    "scheme",
    "grid.min",
    "grid.max",
    "grid.nodes",
    "eps.list",
    "x0",
    "horizon",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: String,
    pub kappa: f64,
    pub lambda: f64,
    pub tilt: f64,
    pub q: usize,
    pub mode: RefinementMode,
    pub policy: EvalPolicy,
    pub scheme: ProjectionScheme,
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
    pub grid_nodes: usize,
    pub eps_list: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub horizon: f64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: "mmh".into(),
            kappa: 1.0,
            lambda: 0.5,
            tilt: 1.5,
            q: 1,
            mode: RefinementMode::TwoStep,
            policy: EvalPolicy::Current,
            scheme: ProjectionScheme::FiberSearch,
            grid_min: None,
            grid_max: None,
            grid_nodes: 32,
            eps_list: None,
            x0: None,
            horizon: 5.0,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn demo_system(&self) -> AppResult<DemoSystem> {
        Ok(DemoSystem::from_name(&self.system, self.kappa, self.lambda, self.tilt)?)
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> AppResult<()> {
        let mut seen = BTreeMap::new();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("line {}: expected `key = value`", number + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(first) = seen.insert(key.to_string(), number + 1) {
                return Err(AppError::Config(format!(
                    "line {}: `{key}` already set on line {first}",
                    number + 1
                )));
            }
            self.set(key, value)
                .map_err(|e| AppError::Config(format!("line {}: {e}", number + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "system" => self.system = value.to_string(),
            "kappa" => self.kappa = parse_f64(value)?,
            "lambda" => self.lambda = parse_f64(value)?,
            "tilt" => self.tilt = parse_f64(value)?,
            "q" => self.q = value.parse().map_err(|_| format!("`{value}` is not an order"))?,
            "mode" => self.mode = RefinementMode::from_name(value).map_err(|e| e.to_string())?,
            "policy" => self.policy = EvalPolicy::from_name(value).map_err(|e| e.to_string())?,
            "scheme" => self.scheme = ProjectionScheme::from_name(value).map_err(|e| e.to_string())?,
            "grid.min" => self.grid_min = Some(parse_f64(value)?),
            "grid.max" => self.grid_max = Some(parse_f64(value)?),
            "grid.nodes" => self.grid_nodes = value.parse().map_err(|_| format!("`{value}` is not a node count"))?,
            "eps.list" => self.eps_list = Some(parse_list(value)?),
            "x0" => self.x0 = Some(parse_list(value)?),
            "horizon" => self.horizon = parse_f64(value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(format!("unknown key `{other}` (known: {})", KEYS.join(", "))),
        }
        Ok(())
    }
}

fn parse_f64(value: &str) -> Result<f64, String> {
    let v: f64 = value.trim().parse().map_err(|_| format!("`{value}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{value}` is not finite"))
    }
}

/// Comma-separated numbers.
pub fn parse_list(value: &str) -> Result<Vec<f64>, String> {
    let items: Vec<f64> = value.split(',').map(parse_f64).collect::<Result<_, _>>()?;
    if items.is_empty() {
        Err("empty list".into())
    } else {
        Ok(items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# sweep\nsystem = mmh\nkappa = 2\nlambda=0.25\n\nq = 2\nmode = one_step\npolicy = previous\nscheme = vertical_base\n\
             grid.min = 0.5\ngrid.max = 1.5\ngrid.nodes = 64\neps.list = 1e-3, 1e-2 ,0.1\nx0 = 1, 0.7\nhorizon = 3\nout = run.csv\n",
        )
        .unwrap();
        assert_eq!(cfg.kappa, 2.0);
        assert_eq!(cfg.lambda, 0.25);
        assert_eq!(cfg.q, 2);
        assert_eq!(cfg.mode, RefinementMode::OneStep);
        assert_eq!(cfg.policy, EvalPolicy::Previous);
        assert_eq!(cfg.scheme, ProjectionScheme::VerticalBase);
        assert_eq!((cfg.grid_min, cfg.grid_max, cfg.grid_nodes), (Some(0.5), Some(1.5), 64));
        assert_eq!(cfg.eps_list, Some(vec![1e-3, 1e-2, 0.1]));
        assert_eq!(cfg.x0, Some(vec![1.0, 0.7]));
        assert_eq!(cfg.out, Some(PathBuf::from("run.csv")));
        assert!(matches!(cfg.demo_system().unwrap(), DemoSystem::Mmh { kappa, .. } if kappa == 2.0));
    }

    #[test]
    fn rejects_bad_lines() {
        for text in [
            "q = 1\nq = 2",
            "colour = red",
            "kappa = many",
            "eps.list = 1e-3,,2",
            "just words",
            "kappa = inf",
        ] {
            assert!(RunConfig::default().apply_text(text).is_err(), "{text}");
        }
    }
}
