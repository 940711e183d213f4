//! Command line front end for `tipping-core`: configuration, output files
//! and parallel sweeps.

// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{ConfigBuilder, ConfigError, KEYS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

fn keys_help() -> String {
    let mut s = String::from("Configuration keys (config file `key = value`, or --set key=value):\n");
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:<15} {d}\n"));
    }
    s.push_str(
        "\nPrecedence: defaults < --config file < --set < named flags.\n\
         Exit codes: 0 success, 1 output failure, 2 usage, 3 numerical failure.",
    );
    s
}

#[derive(Debug, Parser)]
#[command(name = "tipping", version, about = "Rate-induced tipping of a population in a shifting habitat", after_help = keys_help())]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override any configuration key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (default: $TIPPING_OUTPUT_DIR, else ./tipping-out).
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Number of concurrent evaluations.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub beta: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda_r: Option<String>,
    /// Habitat width L.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub width: Option<String>,
    /// Half displacement a.
    #[arg(short = 'a', long = "a", global = true, allow_hyphen_values = true)]
    pub a: Option<String>,
    /// Shift rate r.
    #[arg(short = 'r', long, global = true, allow_hyphen_values = true)]
    pub rate: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub t_end: Option<String>,
    /// Comma-separated snapshot times.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub snapshots: Option<String>,
    #[arg(long, global = true)]
    pub r_lo: Option<String>,
    #[arg(long, global = true)]
    pub r_hi: Option<String>,
    #[arg(long, global = true)]
    pub tol_r: Option<String>,
    #[arg(long, global = true)]
    pub r_max: Option<String>,
    /// Comma-separated displacements d = 2a.
    #[arg(long, global = true)]
    pub d_values: Option<String>,
    /// Comma-separated pulse kinds.
    #[arg(long, global = true)]
    pub kinds: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Steady pulses on [-Z, Z].
    Pulse,
    /// Point spectrum of the pulses right of the essential spectrum.
    Spectrum,
    /// Pullback attractor at one rate, with classification.
    Pullback,
    /// Critical rate by bisection on [r_lo, r_hi].
    CriticalRate,
    /// Critical rate against displacement.
    Diagram,
    /// Connecting orbit at the critical rate from the miss function.
    Heteroclinic,
    /// Transversality inner product at the critical rate.
    Transversality,
    /// End-to-end check of the standing hypotheses H1 to H5.
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Pulse => "pulse",
            Command::Spectrum => "spectrum",
            Command::Pullback => "pullback",
            Command::CriticalRate => "critical-rate",
            Command::Diagram => "diagram",
            Command::Heteroclinic => "heteroclinic",
            Command::Transversality => "transversality",
            Command::Verify => "verify",
        }
    }
}

/// Resolves the configuration of a parsed command line.
pub fn resolve_config(cli: &Cli) -> Result<config::RunConfig, ConfigError> {
    let mut b = ConfigBuilder::new();
    if let Some(path) = &cli.config {
        b.add_file(path)?;
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: format!("--set {kv}"),
            line: 1,
        })?;
        b.set("--set", k.trim(), v.trim())?;
    }
    let flags: [(&str, Option<String>); 14] = [
        ("beta", cli.beta.clone()),
        ("lambda_r", cli.lambda_r.clone()),
        ("width", cli.width.clone()),
        ("a", cli.a.clone()),
        ("rate", cli.rate.clone()),
        ("t_end", cli.t_end.clone()),
        ("snapshot_times", cli.snapshots.clone()),
        ("r_lo", cli.r_lo.clone()),
        ("r_hi", cli.r_hi.clone()),
        ("tol_r", cli.tol_r.clone()),
        ("r_max", cli.r_max.clone()),
        ("d_values", cli.d_values.clone()),
        ("kinds", cli.kinds.clone()),
        ("workers", cli.workers.map(|w| w.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            b.set(&format!("--{k}"), k, &v)?;
        }
    }
    if let Some(dir) = &cli.output_dir {
        b.set("--output-dir", "output_dir", &dir.display().to_string())?;
    }
    let mut c = b.build()?;
    c.config_path = cli.config.clone();
    Ok(c)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match commands::execute(cli.command, &cfg) {
        Ok(report) => {
            println!("{report}");
            EXIT_OK
        }
        Err(commands::CommandError::Numerical { context, source }) => {
            eprintln!("error: {}: {context}: {source}", cli.command.name());
            EXIT_NUMERICAL
        }
        Err(commands::CommandError::Check(msg)) => {
            eprintln!("{msg}");
            EXIT_NUMERICAL
        }
        Err(commands::CommandError::Output(e)) => {
            eprintln!("error: {e}");
            EXIT_IO
        }
        Err(commands::CommandError::Pool(e)) => {
            eprintln!("error: worker pool: {e}");
            EXIT_IO
        }
    }
}
