//! The `solve`, `compare` and `sweep` commands.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ttk_core::precond::{spectral_interval, ExpSumPreconditioner, Preconditioner};
use ttk_core::problems::{convection_diffusion, markov_chain, Problem};
use ttk_core::solvers::{solve, true_residual, SolveReport, SolverKind};
use ttk_core::RoundSpec;

use crate::config::{sweep_value, ExperimentConfig, PrecondConfig, ProblemConfig, SweepAxis};

pub const TRACE_HEADER: [&str; 9] =
    ["iter", "res_sketched", "res_true", "max_rank", "t_matvec", "t_sketch", "t_orth", "t_round", "t_lsq"];

/// Exit status of a finished command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    NotConverged,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Self::Converged => 0,
            Self::NotConverged => 2,
        }
    }

    fn all(reports: &[&SolveReport]) -> Self {
        if reports.iter().all(|r| r.converged) {
            Self::Converged
        } else {
            Self::NotConverged
        }
    }
}

/// One finished solve with the quantities the summaries report.
pub struct RunResult {
    pub kind: SolverKind,
    pub report: SolveReport,
    /// `‖b - A x‖ / ‖b‖` of the returned solution when residuals are tracked.
    pub final_true: Option<f64>,
}

pub fn build_problem(p: &ProblemConfig) -> Result<Problem> {
    let problem = match p {
        ProblemConfig::ConvectionDiffusion(s) => convection_diffusion(s),
        ProblemConfig::Markov(s) => markov_chain(s),
    };
    problem.context("problem")
}

fn build_preconditioner(cfg: &ExperimentConfig, problem: &Problem, kind: SolverKind) -> Result<Option<ExpSumPreconditioner>> {
    let PrecondConfig::Expsum(e) = &cfg.preconditioner else { return Ok(None) };
    if kind != SolverKind::TtSpgmres {
        return Ok(None);
    }
    let solver = cfg.solver_config(kind);
    let cap = e.max_rank.or(solver.max_rank);
    let tol = match e.tol {
        Some(t) => t,
        None => {
            let (lo, hi) = spectral_interval(&problem.kron_factors).context("preconditioner")?;
            ExpSumPreconditioner::application_tol(solver.eta * solver.tol, lo, hi)
        }
    };
    let round = RoundSpec::tol(tol).with_max_rank(cap);
    let p = ExpSumPreconditioner::new(problem.kron_factors.clone(), e.zeta, round)
        .context("preconditioner")?
        .with_sign(problem.precond_sign)
        .with_accumulation(e.accumulation, solver.oversampling, solver.seed ^ 0x5bd1_e995);
    Ok(Some(p))
}

/// Runs one variant on an already built problem.
pub fn run_variant(cfg: &ExperimentConfig, problem: &Problem, kind: SolverKind) -> Result<RunResult> {
    let solver = cfg.solver_config(kind);
    let precond = build_preconditioner(cfg, problem, kind)?;
    let p = precond.as_ref().map(|p| p as &dyn Preconditioner);
    let (x, report) = solve(kind, &problem.operator, &problem.rhs, None, p, &solver).context("solver")?;
    let final_true = if cfg.output.track_true_residual {
        Some(true_residual(&problem.operator, &problem.rhs, &x)?)
    } else {
        None
    };
    Ok(RunResult { kind, report, final_true })
}

fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

/// Writes the per-iteration trace of `report` in the fixed CSV schema.
pub fn write_trace(path: &Path, report: &SolveReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(TRACE_HEADER)?;
    for i in 0..report.iterations {
        let t = &report.times[i];
        w.write_record([
            (i + 1).to_string(),
            fmt_f64(report.res_sketched[i]),
            report.res_true[i].map(fmt_f64).unwrap_or_default(),
            report.max_rank[i].to_string(),
            fmt_f64(t.matvec),
            fmt_f64(t.sketch),
            fmt_f64(t.orth),
            fmt_f64(t.round),
            fmt_f64(t.lsq),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn summary_line(r: &RunResult) -> String {
    let rep = &r.report;
    let mut line = format!(
        "{}: iterations={} converged={} res_sketched={} peak_rank={} time={:.3}s",
        r.kind.name(),
        rep.iterations,
        rep.converged,
        rep.final_sketched_residual().map(fmt_f64).unwrap_or_else(|| "-".into()),
        rep.peak_rank(),
        rep.total_time
    );
    if let Some(t) = r.final_true {
        line += &format!(" res_true={}", fmt_f64(t));
    }
    for w in &rep.warnings {
        line += &format!("\n  warning: {w}");
    }
    line
}

fn out_path(out_dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    Ok(out_dir.join(name))
}

pub fn cmd_solve(cfg: &ExperimentConfig, out_dir: &Path, out: &mut dyn Write) -> Result<Outcome> {
    cfg.validate()?;
    let kind = cfg.primary_variant()?;
    let problem = build_problem(&cfg.problem)?;
    let r = run_variant(cfg, &problem, kind)?;
    let name = cfg.output.csv.clone().unwrap_or_else(|| format!("{}.csv", kind.name()));
    write_trace(&out_path(out_dir, &name)?, &r.report)?;
    writeln!(out, "{}", summary_line(&r))?;
    Ok(Outcome::all(&[&r.report]))
}

pub const SUMMARY_HEADER: [&str; 7] =
    ["variant", "iterations", "converged", "time", "peak_rank", "final_res_sketched", "final_res_true"];

fn summary_record(r: &RunResult) -> [String; 7] {
    [
        r.kind.name().to_string(),
        r.report.iterations.to_string(),
        r.report.converged.to_string(),
        format!("{:.6}", r.report.total_time),
        r.report.peak_rank().to_string(),
        r.report.final_sketched_residual().map(fmt_f64).unwrap_or_default(),
        r.final_true.map(fmt_f64).unwrap_or_default(),
    ]
}

pub fn cmd_compare(cfg: &ExperimentConfig, out_dir: &Path, out: &mut dyn Write) -> Result<Outcome> {
    cfg.validate()?;
    let kinds = cfg.variants_for_compare()?;
    let problem = build_problem(&cfg.problem)?;
    let mut results = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let r = run_variant(cfg, &problem, kind)?;
        write_trace(&out_path(out_dir, &format!("{}.csv", kind.name()))?, &r.report)?;
        writeln!(out, "{}", summary_line(&r))?;
        results.push(r);
    }
    let mut w = csv::Writer::from_path(out_path(out_dir, "summary.csv")?)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in &results {
        w.write_record(summary_record(r))?;
    }
    w.flush()?;
    Ok(Outcome::all(&results.iter().map(|r| &r.report).collect::<Vec<_>>()))
}

pub const SWEEP_HEADER: [&str; 9] =
    ["axis", "value", "variant", "time", "iterations", "converged", "peak_rank", "final_res_sketched", "final_res_true"];

pub fn cmd_sweep(cfg: &ExperimentConfig, out_dir: &Path, out: &mut dyn Write) -> Result<Outcome> {
    cfg.validate()?;
    let sweep = cfg.sweep.as_ref().context("sweep: missing [sweep] section")?;
    if sweep.values.is_empty() {
        bail!("sweep.values: list is empty");
    }
    let kinds = cfg.variants_for_sweep()?;
    let mut w = csv::Writer::from_path(out_path(out_dir, "sweep.csv")?)?;
    w.write_record(SWEEP_HEADER)?;
    let mut converged = true;
    for value in &sweep.values {
        let v = sweep_value(sweep.axis, value)?;
        let mut point = cfg.clone();
        match (sweep.axis, v) {
            (SweepAxis::D, Some(d)) => point.problem.set_d(d),
            (SweepAxis::N, Some(n)) => point.problem.set_n(n),
            (SweepAxis::MaxRank, cap) => point.solver.config.max_rank = cap,
            (_, None) => unreachable!("only max_rank accepts `none`"),
        }
        point.validate().with_context(|| format!("sweep point {}={}", sweep.axis.name(), value.label()))?;
        let problem = build_problem(&point.problem)?;
        for &kind in &kinds {
            let r = run_variant(&point, &problem, kind)?;
            let trace = format!("{}_{}{}.csv", kind.name(), sweep.axis.name(), value.label());
            write_trace(&out_path(out_dir, &trace)?, &r.report)?;
            writeln!(out, "{}={} {}", sweep.axis.name(), value.label(), summary_line(&r))?;
            let s = summary_record(&r);
            w.write_record([
                sweep.axis.name().to_string(),
                value.label(),
                s[0].clone(),
                s[3].clone(),
                s[1].clone(),
                s[2].clone(),
                s[4].clone(),
                s[5].clone(),
                s[6].clone(),
            ])?;
            w.flush()?;
            converged &= r.report.converged;
        }
    }
    Ok(if converged { Outcome::Converged } else { Outcome::NotConverged })
}
