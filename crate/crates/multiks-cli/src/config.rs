//! Flat `key = value` experiment configuration.
//!
//! The format is plain UTF-8 text with `[section]` headers, one assignment
//! per line, `#` comments, and comma-separated numeric lists; matrices are
//! row-major. `parse` and `serialize` round-trip exactly.

use std::fmt::Write as _;

use multiks::criticality::InteractionSpec;
use multiks::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Classify,
    Minimize,
    Radial,
    Evolve,
    Inequality,
    Sweep,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Minimize => "minimize",
            Command::Radial => "radial",
            Command::Evolve => "evolve",
            Command::Inequality => "inequality",
            Command::Sweep => "sweep",
        }
    }

    fn parse(s: &str) -> Option<Command> {
        Some(match s {
            "classify" => Command::Classify,
            "minimize" => Command::Minimize,
            "radial" => Command::Radial,
            "evolve" => Command::Evolve,
            "inequality" => Command::Inequality,
            "sweep" => Command::Sweep,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    MassScale,
    Separation,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::MassScale => "mass_scale",
            SweepAxis::Separation => "separation",
        }
    }
}

/// Parsed experiment file. Field defaults match the desk-scale setup.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub n: usize,
    /// row-major n x n couplings
    pub a: Vec<f64>,
    pub beta: Vec<f64>,
    /// interleaved drift coordinates x1, y1, x2, y2, ...
    pub v: Vec<f64>,
    pub half_width: f64,
    pub cells_per_side: usize,
    pub theta0: f64,
    pub theta_floor: f64,
    pub tol_fp: f64,
    pub max_iters: usize,
    pub t_end: f64,
    pub cfl: f64,
    pub init_sigma: f64,
    pub random_init: bool,
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_values: Vec<f64>,
}

impl ExperimentConfig {
    pub fn defaults(command: Command) -> Self {
        ExperimentConfig {
            command,
            n: 1,
            a: vec![1.0],
            beta: vec![std::f64::consts::PI],
            v: vec![0.0, 0.0],
            half_width: 12.0,
            cells_per_side: 256,
            theta0: 0.5,
            theta_floor: 1e-4,
            tol_fp: 1e-7,
            max_iters: 600,
            t_end: 10.0,
            cfl: 0.4,
            init_sigma: 1.0,
            random_init: false,
            sweep_axis: None,
            sweep_values: Vec::new(),
        }
    }

    /// Build the validated interaction spec (symmetry is rejected, not
    /// repaired).
    pub fn spec(&self) -> Result<InteractionSpec, ConfigError> {
        let n = self.n;
        if self.a.len() != n * n {
            return Err(ConfigError::field(format!(
                "spec.a has {} entries, expected n*n = {}",
                self.a.len(),
                n * n
            )));
        }
        if self.beta.len() != n {
            return Err(ConfigError::field(format!(
                "spec.beta has {} entries, expected n = {}",
                self.beta.len(),
                n
            )));
        }
        if self.v.len() != 2 * n {
            return Err(ConfigError::field(format!(
                "spec.v has {} coordinates, expected 2n = {}",
                self.v.len(),
                2 * n
            )));
        }
        let a: Vec<Vec<f64>> = (0..n).map(|i| self.a[i * n..(i + 1) * n].to_vec()).collect();
        let v: Vec<Vec2> = (0..n)
            .map(|i| Vec2::new(self.v[2 * i], self.v[2 * i + 1]))
            .collect();
        InteractionSpec::new(a, self.beta.clone(), v)
            .map_err(|e| ConfigError::field(format!("invalid spec: {e}")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.spec()?;
        if !(self.half_width > 0.0) {
            return Err(ConfigError::field("grid.half_width must be positive"));
        }
        if self.cells_per_side == 0 || !self.cells_per_side.is_multiple_of(2) {
            return Err(ConfigError::field("grid.cells_per_side must be even and positive"));
        }
        for (name, value) in [
            ("solver.theta0", self.theta0),
            ("solver.theta_floor", self.theta_floor),
            ("solver.tol_fp", self.tol_fp),
            ("solver.t_end", self.t_end),
            ("solver.cfl", self.cfl),
            ("solver.init_sigma", self.init_sigma),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ConfigError::field(format!("{name} must be positive, got {value}")));
            }
        }
        if self.command == Command::Sweep {
            if self.sweep_axis.is_none() {
                return Err(ConfigError::field("sweep.axis required for the sweep command"));
            }
            if self.sweep_values.is_empty() {
                return Err(ConfigError::field("sweep.values must be a nonempty list"));
            }
            if self.sweep_axis == Some(SweepAxis::Separation) && self.n != 2 {
                return Err(ConfigError::field("separation sweep requires n = 2"));
            }
        }
        Ok(())
    }

    /// Canonical text form; `parse` reads it back to an identical value.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command.as_str());
        let _ = writeln!(out);
        let _ = writeln!(out, "[spec]");
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "a = {}", join(&self.a));
        let _ = writeln!(out, "beta = {}", join(&self.beta));
        let _ = writeln!(out, "v = {}", join(&self.v));
        let _ = writeln!(out);
        let _ = writeln!(out, "[grid]");
        let _ = writeln!(out, "half_width = {}", fmt_f64(self.half_width));
        let _ = writeln!(out, "cells_per_side = {}", self.cells_per_side);
        let _ = writeln!(out);
        let _ = writeln!(out, "[solver]");
        let _ = writeln!(out, "theta0 = {}", fmt_f64(self.theta0));
        let _ = writeln!(out, "theta_floor = {}", fmt_f64(self.theta_floor));
        let _ = writeln!(out, "tol_fp = {}", fmt_f64(self.tol_fp));
        let _ = writeln!(out, "max_iters = {}", self.max_iters);
        let _ = writeln!(out, "t_end = {}", fmt_f64(self.t_end));
        let _ = writeln!(out, "cfl = {}", fmt_f64(self.cfl));
        let _ = writeln!(out, "init_sigma = {}", fmt_f64(self.init_sigma));
        let _ = writeln!(out, "random_init = {}", self.random_init);
        if let Some(axis) = self.sweep_axis {
            let _ = writeln!(out);
            let _ = writeln!(out, "[sweep]");
            let _ = writeln!(out, "axis = {}", axis.as_str());
            let _ = writeln!(out, "values = {}", join(&self.sweep_values));
        }
        out
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v}")
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(", ")
}

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            message: message.into(),
        }
    }

    fn field(message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut command = None;
    let mut section = String::new();
    let mut cfg: Option<ExperimentConfig> = None;
    // assignments seen before the command line are not allowed; keep it simple
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(lineno, "unterminated section header"))?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::at(lineno, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();

        if section.is_empty() && key == "command" {
            let c = Command::parse(value).ok_or_else(|| {
                ConfigError::at(lineno, format!("unknown command `{value}`"))
            })?;
            command = Some(c);
            cfg = Some(ExperimentConfig::defaults(c));
            continue;
        }
        let Some(cfg) = cfg.as_mut() else {
            return Err(ConfigError::at(
                lineno,
                "`command = ...` must come before any section",
            ));
        };
        let qualified = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        apply(cfg, &qualified, value, lineno)?;
    }
    let cfg = cfg.ok_or_else(|| ConfigError::field("missing `command = ...`"))?;
    debug_assert!(command.is_some());
    cfg.validate()?;
    Ok(cfg)
}

fn apply(
    cfg: &mut ExperimentConfig,
    key: &str,
    value: &str,
    lineno: usize,
) -> Result<(), ConfigError> {
    let bad = |what: &str| ConfigError::at(lineno, format!("{key}: {what} (got `{value}`)"));
    match key {
        "spec.n" => cfg.n = value.parse().map_err(|_| bad("expected a positive integer"))?,
        "spec.a" => cfg.a = parse_list(value).map_err(|m| bad(&m))?,
        "spec.beta" => cfg.beta = parse_list(value).map_err(|m| bad(&m))?,
        "spec.v" => cfg.v = parse_list(value).map_err(|m| bad(&m))?,
        "grid.half_width" => {
            cfg.half_width = value.parse().map_err(|_| bad("expected a real"))?
        }
        "grid.cells_per_side" => {
            cfg.cells_per_side = value.parse().map_err(|_| bad("expected an integer"))?
        }
        "solver.theta0" => cfg.theta0 = value.parse().map_err(|_| bad("expected a real"))?,
        "solver.theta_floor" => {
            cfg.theta_floor = value.parse().map_err(|_| bad("expected a real"))?
        }
        "solver.tol_fp" => cfg.tol_fp = value.parse().map_err(|_| bad("expected a real"))?,
        "solver.max_iters" => {
            cfg.max_iters = value.parse().map_err(|_| bad("expected an integer"))?
        }
        "solver.t_end" => cfg.t_end = value.parse().map_err(|_| bad("expected a real"))?,
        "solver.cfl" => cfg.cfl = value.parse().map_err(|_| bad("expected a real"))?,
        "solver.init_sigma" => {
            cfg.init_sigma = value.parse().map_err(|_| bad("expected a real"))?
        }
        "solver.random_init" => {
            cfg.random_init = value.parse().map_err(|_| bad("expected true or false"))?
        }
        "sweep.axis" => {
            cfg.sweep_axis = Some(match value {
                "mass_scale" => SweepAxis::MassScale,
                "separation" => SweepAxis::Separation,
                _ => return Err(bad("expected mass_scale or separation")),
            })
        }
        "sweep.values" => cfg.sweep_values = parse_list(value).map_err(|m| bad(&m))?,
        _ => return Err(ConfigError::at(lineno, format!("unknown key `{key}`"))),
    }
    Ok(())
}

fn parse_list(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|piece| {
            piece
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("`{}` is not a real number", piece.trim()))
        })
        .collect()
}
