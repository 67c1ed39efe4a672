//! `report.json` and `trace.csv`.

use std::path::Path;

use anyhow::Context;
use hpemm::certificates::{ErgodicCertificate, PointwiseCertificate};
use hpemm::decimal;
use hpemm::solver::{
    complexity_budget, Branch, BudgetInputs, InvariantViolations, IterationRecord, SolveResult, SolverConfig,
    Termination,
};
use hpemm::{ConvexProgram, PrimalDual, ProblemDescriptor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum D0Source {
    Flag,
    KnownSolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    #[serde(with = "decimal::scalar")]
    pub d0: f64,
    pub d0_source: D0Source,
    pub pointwise: u64,
    pub ergodic: u64,
    #[serde(with = "decimal::scalar")]
    pub eta: f64,
    #[serde(with = "decimal::scalar")]
    pub c: f64,
    #[serde(with = "decimal::scalar")]
    pub rho_bar: f64,
    pub within_pointwise: bool,
}

/// Everything needed to reproduce and audit a run. Contains no timings, so
/// repeated runs produce identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: ProblemDescriptor,
    pub config: SolverConfig,
    pub start: PrimalDual,
    pub termination: Termination,
    pub converged: bool,
    pub iterations: usize,
    pub steps: usize,
    pub count_a: usize,
    pub count_b: usize,
    #[serde(with = "decimal::scalar")]
    pub h: f64,
    #[serde(with = "decimal::scalar")]
    pub tau: f64,
    #[serde(with = "decimal::opt_scalar")]
    pub lambda1: Option<f64>,
    pub budget: Option<BudgetReport>,
    pub pointwise: Option<PointwiseCertificate>,
    pub ergodic: Option<ErgodicCertificate>,
    pub violations: InvariantViolations,
    pub trace_file: String,
}

/// Budgets for `result`, with `d0` from the flag or the known solution.
pub fn budget_report(
    prog: &ConvexProgram,
    z0: &PrimalDual,
    cfg: &SolverConfig,
    result: &SolveResult,
    d0_flag: Option<f64>,
) -> anyhow::Result<Option<BudgetReport>> {
    let (d0, d0_source) = match (d0_flag, prog.known_solution()) {
        (Some(d), _) => (d, D0Source::Flag),
        (None, Some(z)) => (z0.dist(z), D0Source::KnownSolution),
        (None, None) => return Ok(None),
    };
    let Some(lambda1) = result.lambda1 else {
        return Ok(None);
    };
    if d0 <= 0.0 {
        return Ok(None);
    }
    let b = complexity_budget(
        prog,
        &BudgetInputs {
            y0: &z0.y,
            d0,
            lambda1,
            sigma: cfg.sigma,
            theta: cfg.theta,
            tau: result.tau,
            delta: cfg.delta,
            eps: cfg.eps,
        },
    )?;
    Ok(Some(BudgetReport {
        d0,
        d0_source,
        within_pointwise: (result.iterations as u64) <= b.pointwise,
        pointwise: b.pointwise,
        ergodic: b.ergodic,
        eta: b.eta,
        c: b.c,
        rho_bar: b.rho_bar,
    }))
}

impl RunReport {
    pub fn new(
        desc: &ProblemDescriptor,
        cfg: &SolverConfig,
        prog: &ConvexProgram,
        z0: &PrimalDual,
        result: &SolveResult,
        d0: Option<f64>,
        trace_file: &str,
    ) -> anyhow::Result<Self> {
        Ok(Self {
            problem: desc.clone(),
            config: cfg.clone(),
            start: z0.clone(),
            termination: result.termination,
            converged: result.converged(),
            iterations: result.iterations,
            steps: result.trace.len(),
            count_a: result.count_a,
            count_b: result.count_b,
            h: result.h,
            tau: result.tau,
            lambda1: result.lambda1,
            budget: budget_report(prog, z0, cfg, result, d0)?,
            pointwise: result.pointwise.clone(),
            ergodic: result.ergodic.clone(),
            violations: result.violations.clone(),
            trace_file: trace_file.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization is infallible");
        s.push('\n');
        s
    }
}

const TRACE_HEADER: [&str; 17] = [
    "k",
    "branch",
    "lambda",
    "sqrt_psi",
    "rho",
    "step_norm",
    "branch_margin",
    "v_norm",
    "eps",
    "ergodic_v_norm",
    "ergodic_eps",
    "lambda_drift",
    "neighborhood_margin",
    "inner_tol",
    "inner_residual",
    "inner_newton_iters",
    "wall_time",
];

fn opt(v: Option<f64>) -> String {
    v.map(decimal::format).unwrap_or_default()
}

pub fn trace_row(r: &IterationRecord) -> Vec<String> {
    vec![
        r.k.to_string(),
        match r.branch {
            Branch::A => "A".into(),
            Branch::B => "B".into(),
        },
        decimal::format(r.lambda),
        decimal::format(r.sqrt_psi),
        decimal::format(r.rho),
        decimal::format(r.step_norm),
        decimal::format(r.branch_margin),
        decimal::format(r.v_norm),
        decimal::format(r.eps),
        opt(r.ergodic_v_norm),
        opt(r.ergodic_eps),
        decimal::format(r.lambda_drift),
        decimal::format(r.neighborhood_margin),
        opt(r.inner_tol),
        opt(r.inner_residual),
        r.inner_newton_iters.map(|n| n.to_string()).unwrap_or_default(),
        decimal::format(r.wall_time),
    ]
}

pub fn write_trace_csv(path: &Path, trace: &[IterationRecord]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.write_record(trace_row(r))?;
    }
    w.flush()?;
    Ok(())
}
