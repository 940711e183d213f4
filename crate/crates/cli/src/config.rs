//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! `lambda_r` defaults to `4 * beta` when only `beta` is given.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tipping_core::model::ModelParams;
use tipping_core::pulses::PulseKind;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: String, key: String },
    #[error("{origin}: `{key}` = `{value}`: {reason}")]
    Value {
        origin: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Every key accepted in config files and by `--set`.
pub const KEYS: &[(&str, &str)] = &[
    ("beta", "linear decay rate (0.15)"),
    ("lambda_r", "quadratic reaction coefficient (4 beta)"),
    ("width", "habitat width L (25)"),
    ("a", "half displacement (15.65)"),
    ("rate", "shift rate r (1)"),
    ("truncation", "spatial truncation Z (150)"),
    ("tol_bvp", "collocation residual tolerance (1e-8)"),
    ("tol_ode", "absolute integration tolerance (1e-8)"),
    ("tol_newton", "Newton tolerance (1e-10)"),
    ("kinds", "pulses to compute: stable,unstable,trivial (stable,unstable)"),
    ("n_scan", "spectral scan points (400)"),
    ("t_end", "classification time (1000)"),
    ("snapshot_times", "times of stored pullback fields (none)"),
    ("r_lo", "lower rate of the bisection bracket (0.5)"),
    ("r_hi", "upper rate of the bisection bracket (2)"),
    ("tol_r", "bisection bracket width (1e-4)"),
    ("r_max", "largest probed rate in the diagram (50)"),
    ("d_values", "displacements of the diagram (28,32,36,40,50,60)"),
    ("workers", "concurrent evaluations (available cores)"),
    ("output_dir", "output directory ($TIPPING_OUTPUT_DIR or tipping-out)"),
];

pub const OUTPUT_DIR_ENV: &str = "TIPPING_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "tipping-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: ModelParams,
    pub kinds: Vec<PulseKind>,
    pub n_scan: usize,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub r_lo: f64,
    pub r_hi: f64,
    pub tol_r: f64,
    pub r_max: f64,
    pub d_values: Vec<f64>,
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Config file the run started from, if any.
    pub config_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let output_dir = std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
        Self {
            params: ModelParams::default(),
            kinds: vec![PulseKind::Stable, PulseKind::Unstable],
            n_scan: tipping_core::spectrum::DEFAULT_SCAN_POINTS,
            t_end: tipping_core::pullback::DEFAULT_T_END,
            snapshot_times: Vec::new(),
            r_lo: 0.5,
            r_hi: 2.0,
            tol_r: 1e-4,
            r_max: tipping_core::critical::DEFAULT_R_MAX,
            d_values: vec![28.0, 32.0, 36.0, 40.0, 50.0, 60.0],
            workers,
            output_dir,
            config_path: None,
        }
    }
}

fn parse_f64(origin: &str, key: &str, value: &str) -> Result<f64, ConfigError> {
    value.parse::<f64>().map_err(|e| ConfigError::Value {
        origin: origin.into(),
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list(origin: &str, key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(origin, key, s))
        .collect()
}

fn parse_kind(origin: &str, value: &str) -> Result<PulseKind, ConfigError> {
    match value {
        "stable" => Ok(PulseKind::Stable),
        "unstable" => Ok(PulseKind::Unstable),
        "trivial" => Ok(PulseKind::Trivial),
        _ => Err(ConfigError::Value {
            origin: origin.into(),
            key: "kinds".into(),
            value: value.into(),
            reason: "expected stable, unstable or trivial".into(),
        }),
    }
}

/// Collects assignments, then resolves them into a [`RunConfig`].
#[derive(Debug, Default, Clone)]
pub struct ConfigBuilder {
    entries: Vec<(String, String, String)>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds every assignment of a config file's text.
    pub fn add_text(&mut self, origin: &str, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.into(),
                line: i + 1,
            })?;
            self.set(&format!("{origin}:{}", i + 1), k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn add_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        self.add_text(&path.display().to_string(), &text)
    }

    /// Adds one assignment; later assignments win.
    pub fn set(&mut self, origin: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::UnknownKey {
                origin: origin.into(),
                key: key.into(),
            });
        }
        self.entries.push((origin.into(), key.into(), value.into()));
        Ok(())
    }

    pub fn build(&self) -> Result<RunConfig, ConfigError> {
        let mut c = RunConfig::default();
        let mut lambda_given = false;
        for (origin, key, value) in &self.entries {
            let (o, k, v) = (origin.as_str(), key.as_str(), value.as_str());
            let num = || parse_f64(o, k, v);
            match k {
                "beta" => c.params.beta = num()?,
                "lambda_r" => {
                    c.params.lambda_r = num()?;
                    lambda_given = true;
                }
                "width" => c.params.width = num()?,
                "a" => c.params.a = num()?,
                "rate" => c.params.rate = num()?,
                "truncation" => c.params.truncation = num()?,
                "tol_bvp" => c.params.tol_bvp = num()?,
                "tol_ode" => c.params.tol_ode = num()?,
                "tol_newton" => c.params.tol_newton = num()?,
                "kinds" => {
                    c.kinds = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_kind(o, s))
                        .collect::<Result<_, _>>()?
                }
                "n_scan" | "workers" => {
                    let n = v.parse::<usize>().map_err(|e| ConfigError::Value {
                        origin: o.into(),
                        key: k.into(),
                        value: v.into(),
                        reason: e.to_string(),
                    })?;
                    if k == "n_scan" {
                        c.n_scan = n
                    } else {
                        c.workers = n
                    }
                }
                "t_end" => c.t_end = num()?,
                "snapshot_times" => c.snapshot_times = parse_list(o, k, v)?,
                "r_lo" => c.r_lo = num()?,
                "r_hi" => c.r_hi = num()?,
                "tol_r" => c.tol_r = num()?,
                "r_max" => c.r_max = num()?,
                "d_values" => c.d_values = parse_list(o, k, v)?,
                "output_dir" => c.output_dir = PathBuf::from(v),
                _ => unreachable!("keys are checked in set"),
            }
        }
        if !lambda_given {
            c.params.lambda_r = 4.0 * c.params.beta;
        }
        c.validate()?;
        Ok(c)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.kinds.is_empty() {
            return bad("kinds must not be empty");
        }
        if self.n_scan < 2 {
            return bad("n_scan must be at least 2");
        }
        if !(self.t_end > 0.0) {
            return bad("t_end must be positive");
        }
        if !(self.r_lo > 0.0 && self.r_hi > self.r_lo) {
            return bad("need 0 < r_lo < r_hi");
        }
        if !(self.tol_r > 0.0) {
            return bad("tol_r must be positive");
        }
        if !(self.r_max > tipping_core::critical::PROBE_MIN) {
            return bad("r_max must exceed the smallest probe rate 0.01");
        }
        if self.d_values.is_empty() || self.d_values.windows(2).any(|w| !(w[1] > w[0])) || self.d_values.iter().any(|d| !(*d > 0.0)) {
            return bad("d_values must be positive and strictly increasing");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }

    /// The configuration as config-file text; reading it back gives the same
    /// configuration (floats are written in shortest round-trip form).
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "beta = {:?}", p.beta);
        let _ = writeln!(s, "lambda_r = {:?}", p.lambda_r);
        let _ = writeln!(s, "width = {:?}", p.width);
        let _ = writeln!(s, "a = {:?}", p.a);
        let _ = writeln!(s, "rate = {:?}", p.rate);
        let _ = writeln!(s, "truncation = {:?}", p.truncation);
        let _ = writeln!(s, "tol_bvp = {:?}", p.tol_bvp);
        let _ = writeln!(s, "tol_ode = {:?}", p.tol_ode);
        let _ = writeln!(s, "tol_newton = {:?}", p.tol_newton);
        let kinds: Vec<&str> = self.kinds.iter().map(|k| k.name()).collect();
        let _ = writeln!(s, "kinds = {}", kinds.join(","));
        let _ = writeln!(s, "n_scan = {}", self.n_scan);
        let _ = writeln!(s, "t_end = {:?}", self.t_end);
        let _ = writeln!(s, "snapshot_times = {}", list(&self.snapshot_times));
        let _ = writeln!(s, "r_lo = {:?}", self.r_lo);
        let _ = writeln!(s, "r_hi = {:?}", self.r_hi);
        let _ = writeln!(s, "tol_r = {:?}", self.tol_r);
        let _ = writeln!(s, "r_max = {:?}", self.r_max);
        let _ = writeln!(s, "d_values = {}", list(&self.d_values));
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        s
    }
}
