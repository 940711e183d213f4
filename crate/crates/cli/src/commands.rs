//! The subcommands. Each writes its files, then a `<command>.conf` that
//! reproduces the run and a `<command>.manifest.json` listing everything.

use rayon::prelude::*;
use serde::Serialize;

use tipping_core::critical::{
    bisect_rc, diagram_entry, probe_grid, refine_heteroclinic, sweep_diagram, transversality, CriticalRateResult, DiagramOutcome,
    HeteroclinicOptions, HeteroclinicSolution, TippingDiagram, PROBE_COUNT,
};
use tipping_core::Error;
use tipping_core::model::{ModelParams, QuadraticShift, ShiftField};
use tipping_core::pulses::{check_order, compute_pulse, PulseKind, PulseProfile};
use tipping_core::pullback::{compute_pullback, Classification, PullbackContext, PullbackOptions};
use tipping_core::spectrum::{default_window, describe, find_eigenvalues, SpectrumReport};

use crate::config::RunConfig;
use crate::output::{fmt_f64, Manifest, OutputError, Outputs, Table};
use crate::Command;

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("{context}: {source}")]
    Numerical {
        context: String,
        #[source]
        source: Error,
    },
    /// The computation finished but a checked property failed.
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

trait Context<T> {
    fn context(self, what: &str) -> Result<T, CommandError>;
}

impl<T> Context<T> for Result<T, Error> {
    fn context(self, what: &str) -> Result<T, CommandError> {
        self.map_err(|source| CommandError::Numerical {
            context: what.to_string(),
            source,
        })
    }
}

/// Runs `cmd` on a pool of `cfg.workers` threads and writes the manifest.
/// Returns a short report for the terminal.
pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<String, CommandError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    let mut out = Outputs::new(&cfg.output_dir);
    let result = pool.install(|| match cmd {
        Command::Pulse => pulse(cfg, &mut out),
        Command::Spectrum => spectrum(cfg, &mut out),
        Command::Pullback => pullback(cfg, &mut out),
        Command::CriticalRate => critical_rate(cfg, &mut out),
        Command::Diagram => diagram(cfg, &mut out),
        Command::Heteroclinic => heteroclinic(cfg, &mut out).map(|(s, _, _)| s),
        Command::Transversality => transversality_cmd(cfg, &mut out),
        Command::Verify => verify(cfg, &mut out),
    });
    let status = match &result {
        Ok(_) => "ok".to_string(),
        Err(e) => e.to_string(),
    };
    if result.is_ok() || matches!(result, Err(CommandError::Check(_))) {
        let conf = format!("{}.conf", cmd.name());
        out.text(&conf, &cfg.to_text())?;
        let manifest = Manifest {
            command: cmd.name().to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config: cfg.clone(),
            config_file: conf,
            outputs: out.written.clone(),
            status,
        };
        out.json(&format!("{}.manifest.json", cmd.name()), &manifest)?;
    }
    result
}

fn profile(kind: PulseKind, p: &ModelParams) -> Result<PulseProfile, CommandError> {
    match kind {
        PulseKind::Trivial => Ok(PulseProfile::trivial(*p)),
        _ => compute_pulse(kind, p).context(&format!("{} pulse", kind.name())),
    }
}

#[derive(Serialize)]
struct PulseSummary {
    kind: PulseKind,
    max_value: f64,
    xi: f64,
    nodes: usize,
    residual: f64,
    symmetry_defect: f64,
}

fn pulse(cfg: &RunConfig, out: &mut Outputs) -> Result<String, CommandError> {
    let pulses: Vec<PulseProfile> = cfg
        .kinds
        .par_iter()
        .map(|&k| profile(k, &cfg.params))
        .collect::<Result<_, _>>()?;
    let mut summary = Vec::new();
    let mut report = String::new();
    for p in &pulses {
        let mut t = Table::new(&["z", "u", "v"]);
        for i in 0..p.mesh.len() {
            t.push_numbers(&[p.mesh[i], p.u[i], p.v[i]]);
        }
        out.csv(&format!("pulse_{}.csv", p.kind.name()), &t)?;
        report.push_str(&format!("{} pulse: max {:.6} on {} nodes\n", p.kind.name(), p.max_value(), p.mesh.len()));
        summary.push(PulseSummary {
            kind: p.kind,
            max_value: p.max_value(),
            xi: p.xi,
            nodes: p.mesh.len(),
            residual: p.residual,
            symmetry_defect: p.symmetry_defect(),
        });
    }
    out.json("pulse.json", &summary)?;
    Ok(report.trim_end().to_string())
}

fn spectrum_of(kind: PulseKind, cfg: &RunConfig) -> Result<SpectrumReport, CommandError> {
    let p = profile(kind, &cfg.params)?;
    find_eigenvalues(&p, default_window(&p), cfg.n_scan).context(&format!("{} spectrum", kind.name()))
}

fn spectrum(cfg: &RunConfig, out: &mut Outputs) -> Result<String, CommandError> {
    let reports: Vec<SpectrumReport> = cfg
        .kinds
        .par_iter()
        .map(|&k| spectrum_of(k, cfg))
        .collect::<Result<_, _>>()?;
    let mut text = String::new();
    for r in &reports {
        let mut t = Table::new(&["lambda", "rotation"]);
        for &(l, rot) in &r.scan {
            t.push_numbers(&[l, rot]);
        }
        out.csv(&format!("scan_{}.csv", r.kind.name()), &t)?;
        out.json(&format!("spectrum_{}.json", r.kind.name()), r)?;
        text.push_str(&describe(r));
        text.push('\n');
    }
    Ok(text.trim_end().to_string())
}

fn context(cfg: &RunConfig) -> Result<PullbackContext, CommandError> {
    PullbackContext::new(&cfg.params).context("fixed points")
}

fn pullback_options(cfg: &RunConfig) -> PullbackOptions {
    PullbackOptions {
        t_end: cfg.t_end,
        snapshot_times: cfg.snapshot_times.clone(),
        ..PullbackOptions::default()
    }
}

#[derive(Serialize)]
struct PullbackSummary<'a> {
    params: &'a ModelParams,
    classification: Classification,
    t_start: f64,
    t_end: f64,
    distance_to_base: f64,
    final_norm: f64,
    initial_deviation: f64,
    sup_error: f64,
    sup_error_time: f64,
    thresholds: (f64, f64),
    stats: tipping_core::ode::Stats,
    nodes: usize,
}

fn pullback(cfg: &RunConfig, out: &mut Outputs) -> Result<String, CommandError> {
    let ctx = context(cfg)?;
    let run = compute_pullback(&ctx, &pullback_options(cfg)).context("pullback")?;
    let mut fp = Table::new(&["z", "base", "edge"]);
    for (i, &z) in ctx.system.mesh.iter().enumerate() {
        fp.push_numbers(&[z, ctx.base[i], ctx.edge[i]]);
    }
    out.csv("fixed_points.csv", &fp)?;
    let mut t = Table::new(&["t", "gamma", "norm", "peak"]);
    for s in &run.samples {
        t.push_numbers(&[s.t, s.gamma, s.norm, s.peak]);
    }
    out.csv("pullback_samples.csv", &t)?;
    if !run.snapshots.is_empty() {
        let mut header = vec!["z".to_string()];
        header.extend(run.snapshots.iter().map(|s| format!("t={}", fmt_f64(s.t))));
        let mut t = Table {
            header,
            rows: Vec::new(),
        };
        for (i, &z) in ctx.system.mesh.iter().enumerate() {
            let mut row = vec![z];
            row.extend(run.snapshots.iter().map(|s| s.v[i]));
            t.push_numbers(&row);
        }
        out.csv("pullback_snapshots.csv", &t)?;
    }
    out.json(
        "pullback.json",
        &PullbackSummary {
            params: &run.params,
            classification: run.classification,
            t_start: run.t_start,
            t_end: run.t_end,
            distance_to_base: run.distance_to_base,
            final_norm: run.final_norm,
            initial_deviation: run.initial_deviation,
            sup_error: run.sup_error,
            sup_error_time: run.sup_error_time,
            thresholds: run.thresholds,
            stats: run.stats,
            nodes: ctx.system.n(),
        },
    )?;
    Ok(format!(
        "r = {}: {:?} at t = {} (distance to base {:.3e}, norm {:.3e})",
        cfg.params.rate, run.classification, run.t_end, run.distance_to_base, run.final_norm
    ))
}

fn runs_table(runs: &[(f64, Classification)]) -> Table {
    let mut t = Table::new(&["r", "classification"]);
    for (r, c) in runs {
        t.push(vec![fmt_f64(*r), format!("{c:?}").to_lowercase()]);
    }
    t
}

fn bisection(cfg: &RunConfig, ctx: &PullbackContext, out: &mut Outputs) -> Result<CriticalRateResult, CommandError> {
    let res = bisect_rc(ctx, cfg.r_lo, cfg.r_hi, cfg.tol_r, &pullback_options(cfg)).context("bisection")?;
    out.csv("critical_runs.csv", &runs_table(&res.runs))?;
    out.json("critical_rate.json", &res)?;
    Ok(res)
}

fn critical_rate(cfg: &RunConfig, out: &mut Outputs) -> Result<String, CommandError> {
    let ctx = context(cfg)?;
    let res = bisection(cfg, &ctx, out)?;
    Ok(format!(
        "d = {}: r_c = {:.6} in [{:.6}, {:.6}] after {} runs",
        res.d,
        res.r_c,
        res.bracket.0,
        res.bracket.1,
        res.runs.len()
    ))
}

fn diagram(cfg: &RunConfig, out: &mut Outputs) -> Result<String, CommandError> {
    let ctx = context(cfg)?;
    let opts = pullback_options(cfg);
    let diagram = if cfg.workers <= 1 {
        sweep_diagram(&ctx, &cfg.d_values, cfg.r_max, cfg.tol_r, &opts).context("diagram")?
    } else {
        // Independent entries; no warm start between displacements.
        let probes = probe_grid(cfg.r_max, PROBE_COUNT);
        let entries = cfg
            .d_values
            .par_iter()
            .map(|&d| diagram_entry(&ctx, d, &probes, cfg.tol_r, None, &opts))
            .collect();
        TippingDiagram {
            params: cfg.params,
            r_max: cfg.r_max,
            tol_r: cfg.tol_r,
            probe_rates: probes,
            entries,
        }
    };
    let mut t = Table::new(&["d", "r_c", "bracket_lo", "bracket_hi", "status"]);
    let mut text = String::new();
    for e in &diagram.entries {
        let (rc, lo, hi, status) = match &e.outcome {
            DiagramOutcome::Critical(c) => (c.r_c, c.bracket.0, c.bracket.1, "critical"),
            DiagramOutcome::NoTipping { r_max } => (f64::INFINITY, *r_max, f64::INFINITY, "no-tipping"),
            DiagramOutcome::Failed { .. } => (f64::NAN, f64::NAN, f64::NAN, "failed"),
        };
        t.push(vec![fmt_f64(e.d), fmt_f64(rc), fmt_f64(lo), fmt_f64(hi), status.into()]);
        text.push_str(&match &e.outcome {
            DiagramOutcome::Critical(c) => format!("d = {}: r_c = {:.6}\n", e.d, c.r_c),
            DiagramOutcome::NoTipping { r_max } => format!("d = {}: no tipping up to r = {r_max}\n", e.d),
            DiagramOutcome::Failed { message } => format!("d = {}: failed: {message}\n", e.d),
        });
    }
    out.csv("diagram.csv", &t)?;
    out.json("diagram.json", &diagram)?;
    Ok(text.trim_end().to_string())
}

/// Refinement bracket half width around the bisection estimate.
const REFINE_HALF_WIDTH: f64 = 0.01;

fn heteroclinic(cfg: &RunConfig, out: &mut Outputs) -> Result<(String, PullbackContext, HeteroclinicSolution), CommandError> {
    let ctx = context(cfg)?;
    let b = bisection(cfg, &ctx, out)?;
    let opts = HeteroclinicOptions {
        pullback: pullback_options(cfg),
        ..HeteroclinicOptions::default()
    };
    let het = refine_heteroclinic(&ctx, b.r_c - REFINE_HALF_WIDTH, b.r_c + REFINE_HALF_WIDTH, &opts).context("heteroclinic")?;
    let rctx = ctx.with_rate(het.r_c).context("heteroclinic")?;
    let n = rctx.system.n();
    let mut t = Table::new(&["t", "gamma", "norm", "distance_to_base", "distance_to_edge"]);
    let traj = &het.trajectory;
    for i in 0..traj.len() {
        let y = traj.state(i);
        let v = &y[..n];
        t.push_numbers(&[
            traj.times[i],
            y[n],
            rctx.system.l2_norm(v),
            rctx.system.l2_distance(v, &rctx.base),
            rctx.system.l2_distance(v, &rctx.edge),
        ]);
    }
    out.csv("heteroclinic.csv", &t)?;
    out.json("heteroclinic.json", &het)?;
    let text = format!(
        "bisection r_c = {:.6}; miss-function r_c = {:.9} (T = {:.1}, end residual {:.2e}, |gamma(0)| {:.1e})",
        b.r_c,
        het.r_c,
        het.horizon,
        het.end_residual,
        het.gamma_at_zero.abs()
    );
    Ok((text, ctx, het))
}

fn transversality_cmd(cfg: &RunConfig, out: &mut Outputs) -> Result<String, CommandError> {
    let (text, ctx, het) = heteroclinic(cfg, out)?;
    let tr = transversality(&ctx, &het).context("transversality")?;
    out.json("transversality.json", &tr)?;
    Ok(format!(
        "{text}\ninner product {:.6e} (degenerate: {}, sign agrees with miss slope: {})",
        tr.inner_product, tr.degenerate, tr.sign_agrees
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub hypothesis: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// `g` vanishes at `+-a`, is positive between and points into the interval.
fn shift_field_check(a: f64) -> Verdict {
    let g = QuadraticShift { a };
    let ends = g.velocity(-a).abs().max(g.velocity(a).abs());
    let inward = g.velocity_derivative(-a) > 0.0 && g.velocity_derivative(a) < 0.0;
    let positive = (1..1000).all(|i| g.velocity(-a + 2.0 * a * i as f64 / 1000.0) > 0.0);
    Verdict {
        hypothesis: "H5",
        pass: ends <= 1e-12 * a && inward && positive,
        detail: format!(
            "|g(+-a)| = {ends:.1e}, g'(-a) = {}, g'(a) = {}, positive inside: {positive}",
            g.velocity_derivative(-a),
            g.velocity_derivative(a)
        ),
    }
}

fn verify(cfg: &RunConfig, out: &mut Outputs) -> Result<String, CommandError> {
    let p = cfg.params;
    let kinds = [PulseKind::Trivial, PulseKind::Unstable, PulseKind::Stable];
    let reports: Vec<SpectrumReport> = kinds.par_iter().map(|&k| spectrum_of(k, cfg)).collect::<Result<_, _>>()?;
    let stable = profile(PulseKind::Stable, &p)?;
    let unstable = profile(PulseKind::Unstable, &p)?;
    let order = check_order(&stable, &unstable);
    let positive = unstable.u.iter().all(|&u| u >= 0.0) && unstable.max_value() > 0.0;
    let mut verdicts = vec![Verdict {
        hypothesis: "H1",
        pass: order.verdict && positive,
        detail: format!(
            "u2* - u1* >= {:.3e} (interior {:.3e}){}",
            order.min_gap,
            order.interior_min_gap,
            order.caveat.as_deref().map(|c| format!("; {c}")).unwrap_or_default()
        ),
    }];
    for (name, r) in ["H2", "H3", "H4"].iter().zip(&reports) {
        let v = &r.verdicts;
        let pass = v.h2.or(v.h3).or(v.h4).unwrap_or(false);
        verdicts.push(Verdict {
            hypothesis: name,
            pass,
            detail: describe(r),
        });
    }
    verdicts.push(shift_field_check(p.a));
    out.json("verify.json", &verdicts)?;
    let text = verdicts
        .iter()
        .map(|v| format!("{}: {} ({})", v.hypothesis, if v.pass { "pass" } else { "FAIL" }, v.detail))
        .collect::<Vec<_>>()
        .join("\n");
    if verdicts.iter().all(|v| v.pass) {
        Ok(text)
    } else {
        Err(CommandError::Check(text))
    }
}
