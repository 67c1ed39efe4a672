//! Budgets against observed iteration counts on problems with known solutions.

use std::fs;

use anyhow::{anyhow, Context};
use hpemm::decimal;
use hpemm::hpe::loglog_slope;
use hpemm::solver::{Branch, SolveResult, Solver};
use hpemm::ProblemDescriptor;
use serde::Deserialize;

use crate::report::budget_report;
use crate::{cold_start, read, BenchArgs, Outcome, EXIT_NOT_CONVERGED, EXIT_OK};

/// Range of extragradient indices used for the decay fits.
pub const FIT_RANGE: (usize, usize) = (10, 100);

#[derive(Deserialize)]
#[serde(untagged)]
enum SuiteFile {
    List(Vec<serde_json::Value>),
    Wrapped { problems: Vec<serde_json::Value> },
}

pub fn default_suite() -> Vec<ProblemDescriptor> {
    [(3, 2, 0), (5, 4, 1), (8, 6, 2)]
        .into_iter()
        .map(|(n, m, seed)| {
            ProblemDescriptor::from_parts("known_kkt", &serde_json::json!({"n": n, "m": m, "seed": seed}))
                .expect("default suite is valid")
        })
        .collect()
}

pub fn load_suite(text: &str) -> anyhow::Result<Vec<ProblemDescriptor>> {
    let entries = match serde_json::from_str(text)? {
        SuiteFile::List(v) => v,
        SuiteFile::Wrapped { problems } => problems,
    };
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            ProblemDescriptor::from_json_str(&e.to_string()).with_context(|| format!("suite entry {i}"))
        })
        .collect()
}

/// `min_{j <= i} |v_{k_j}|` and `|v^a_i|` over the extragradient steps.
pub fn decay_sequences(result: &SolveResult) -> (Vec<f64>, Vec<f64>) {
    let mut best = f64::INFINITY;
    let mut pointwise = Vec::new();
    let mut ergodic = Vec::new();
    for row in result.trace.iter().filter(|r| r.branch == Branch::A) {
        best = best.min(row.v_norm);
        pointwise.push(best);
        ergodic.push(row.ergodic_v_norm.unwrap_or(f64::NAN));
    }
    (pointwise, ergodic)
}

const HEADER: [&str; 17] = [
    "problem",
    "n",
    "m",
    "d0",
    "eta",
    "c",
    "rho_bar",
    "M",
    "M_tilde",
    "iterations",
    "count_a",
    "count_b",
    "termination",
    "converged",
    "within_budget",
    "pointwise_slope",
    "ergodic_slope",
];

pub fn cmd_bench(args: &BenchArgs) -> anyhow::Result<Outcome> {
    let cfg = args.config.resolve()?;
    let suite = match &args.suite {
        Some(path) => load_suite(&read(path)?).with_context(|| format!("suite {}", path.display()))?,
        None => default_suite(),
    };
    let solver = Solver::new(cfg.clone())?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = args.out.join("bench.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(HEADER)?;

    let mut all_ok = true;
    for (i, desc) in suite.iter().enumerate() {
        let name = serde_json::to_string(desc)?;
        let prog = desc.build().with_context(|| format!("suite entry {i} ({name})"))?;
        if prog.known_solution().is_none() {
            return Err(anyhow!("suite entry {i} ({name}) has no known KKT point"));
        }
        let z0 = cold_start(&prog);
        let result = solver.run(&prog, &z0).with_context(|| format!("solving {name}"))?;
        let budget = budget_report(&prog, &z0, &cfg, &result, None)?;
        let (pt, erg) = decay_sequences(&result);
        let slope = |v: &[f64]| {
            loglog_slope(v, FIT_RANGE.0, FIT_RANGE.1)
                .map(decimal::format)
                .unwrap_or_default()
        };
        let within = budget.as_ref().map_or(true, |b| b.within_pointwise);
        all_ok &= result.converged() && within;
        let num = |f: fn(&crate::report::BudgetReport) -> f64| {
            budget.as_ref().map(|b| decimal::format(f(b))).unwrap_or_default()
        };
        let count = |f: fn(&crate::report::BudgetReport) -> u64| {
            budget.as_ref().map(|b| f(b).to_string()).unwrap_or_default()
        };
        w.write_record([
            name,
            prog.n().to_string(),
            prog.m().to_string(),
            num(|b| b.d0),
            num(|b| b.eta),
            num(|b| b.c),
            num(|b| b.rho_bar),
            count(|b| b.pointwise),
            count(|b| b.ergodic),
            result.iterations.to_string(),
            result.count_a.to_string(),
            result.count_b.to_string(),
            serde_json::to_value(result.termination)?
                .as_str()
                .unwrap_or_default()
                .to_string(),
            result.converged().to_string(),
            within.to_string(),
            slope(&pt),
            slope(&erg),
        ])?;
    }
    w.flush()?;
    Ok(Outcome {
        code: if all_ok { EXIT_OK } else { EXIT_NOT_CONVERGED },
        message: format!("{} problems written to {}", suite.len(), path.display()),
    })
}
