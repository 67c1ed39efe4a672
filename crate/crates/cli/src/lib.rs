//! Command-line front end: `solve`, `verify` and `bench`.

pub mod bench;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hpemm::certificates::{verify_ergodic, verify_pointwise, ErgodicCertificate, PointwiseCertificate};
use hpemm::solver::{Solver, SolverConfig};
use hpemm::{ConvexProgram, PrimalDual, ProblemDescriptor};

use report::{write_trace_csv, RunReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hpemm", version, about = "Second-order method of multipliers for smooth convex programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a problem and write report.json and trace.csv.
    Solve(SolveArgs),
    /// Re-check a stored certificate or report against a problem.
    Verify(VerifyArgs),
    /// Run a suite of problems with known solutions and tabulate budgets.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct ProblemArgs {
    /// Registry family: quad_softplus, smoothed_ball or known_kkt.
    #[arg(long, conflicts_with = "problem_file")]
    pub problem: Option<String>,
    /// JSON object with the family parameters.
    #[arg(long, requires = "problem")]
    pub params: Option<String>,
    /// JSON file `{"family": ..., "params": ...}`.
    #[arg(long)]
    pub problem_file: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// JSON file with solver settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Tolerance on the residual norm.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Tolerance on the complementarity gap.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Seed for all sampling; also the default seed of known_kkt problems.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Upper bound on the distance from the start to the solution set, for
    /// the iteration budgets. Defaults to the exact distance when known.
    #[arg(long)]
    pub d0: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// A report.json from `solve`, or a bare certificate.
    #[arg(long)]
    pub certificate: PathBuf,
    /// Overrides the problem recorded in a report.
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON list of problem descriptors (or `{"problems": [...]}`); defaults
    /// to three known_kkt instances.
    #[arg(long)]
    pub suite: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

impl ConfigArgs {
    pub fn resolve(&self) -> anyhow::Result<SolverConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = read(path)?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => SolverConfig::default(),
        };
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.theta {
            cfg.theta = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(v) = self.eps {
            cfg.eps = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fills in the seed of a known_kkt descriptor when the parameters omit it.
fn apply_seed(family: &str, params: &mut serde_json::Value, seed: Option<u64>) {
    if let (Some(seed), "known_kkt", serde_json::Value::Object(map)) = (seed, family, &mut *params) {
        map.entry("seed").or_insert(seed.into());
    }
}

impl ProblemArgs {
    pub fn is_given(&self) -> bool {
        self.problem.is_some() || self.problem_file.is_some()
    }

    pub fn descriptor(&self, seed: Option<u64>) -> anyhow::Result<ProblemDescriptor> {
        if let Some(path) = &self.problem_file {
            let text = read(path)?;
            let mut raw: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if let Some(fam) = raw.get("family").and_then(|f| f.as_str()).map(str::to_owned) {
                if let Some(p) = raw.get_mut("params") {
                    apply_seed(&fam, p, seed);
                }
            }
            return ProblemDescriptor::from_json_str(&raw.to_string())
                .with_context(|| format!("problem file {}", path.display()));
        }
        let Some(name) = &self.problem else {
            bail!("no problem given: use --problem or --problem-file");
        };
        let mut params = match &self.params {
            Some(text) => serde_json::from_str(text).context("parsing --params")?,
            None => serde_json::json!({}),
        };
        apply_seed(name, &mut params, seed);
        Ok(ProblemDescriptor::from_parts(name, &params)?)
    }
}

/// Outcome of a subcommand: an exit code and what to print.
pub struct Outcome {
    pub code: i32,
    pub message: String,
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Bench(a) => bench::cmd_bench(&a),
    }
}

pub fn cold_start(prog: &ConvexProgram) -> PrimalDual {
    PrimalDual::zeros(prog.n(), prog.m())
}

pub fn cmd_solve(args: &SolveArgs) -> anyhow::Result<Outcome> {
    let cfg = args.config.resolve()?;
    let desc = args.problem.descriptor(args.config.seed)?;
    let prog = desc.build()?;
    let z0 = cold_start(&prog);
    let solver = Solver::new(cfg.clone())?;
    let result = solver.run(&prog, &z0)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let trace_name = "trace.csv";
    write_trace_csv(&args.out.join(trace_name), &result.trace)?;
    let report = RunReport::new(&desc, &cfg, &prog, &z0, &result, args.d0, trace_name)?;
    let path = args.out.join("report.json");
    fs::write(&path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;

    let mut message = format!(
        "{}: {:?} after {} iterations ({} A, {} B)",
        desc.family(),
        result.termination,
        result.iterations,
        result.count_a,
        result.count_b
    );
    if let Some(b) = &report.budget {
        message += &format!("; budget M = {}, M~ = {}", b.pointwise, b.ergodic);
    }
    let code = if result.converged() { EXIT_OK } else { EXIT_NOT_CONVERGED };
    Ok(Outcome { code, message })
}

enum Stored {
    Report(Box<RunReport>),
    Pointwise(PointwiseCertificate),
    Ergodic(ErgodicCertificate),
}

fn parse_stored(text: &str) -> anyhow::Result<Stored> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    if v.get("termination").is_some() {
        return Ok(Stored::Report(Box::new(serde_json::from_value(v)?)));
    }
    if v.get("eps_prime").is_some() {
        return Ok(Stored::Ergodic(serde_json::from_value(v)?));
    }
    Ok(Stored::Pointwise(serde_json::from_value(v)?))
}

fn failed(e: hpemm::Error) -> anyhow::Result<Outcome> {
    match e {
        hpemm::Error::Certificate { relation, margin } => Ok(Outcome {
            code: EXIT_VERIFY_FAILED,
            message: format!("verification failed: {relation} (residual {margin:e})"),
        }),
        hpemm::Error::DimensionMismatch { .. } => Ok(Outcome {
            code: EXIT_VERIFY_FAILED,
            message: format!("verification failed: certificate does not match the problem ({e})"),
        }),
        other => Err(other.into()),
    }
}

pub fn cmd_verify(args: &VerifyArgs) -> anyhow::Result<Outcome> {
    let text = read(&args.certificate)?;
    let stored = parse_stored(&text).with_context(|| format!("parsing {}", args.certificate.display()))?;
    let (desc, mut sampling) = match (&stored, args.problem.is_given()) {
        (_, true) => (args.problem.descriptor(args.seed)?, SolverConfig::default().sampling()),
        (Stored::Report(r), false) => (r.problem.clone(), r.config.sampling()),
        _ => bail!("a bare certificate needs --problem or --problem-file"),
    };
    if let Some(seed) = args.seed {
        sampling.seed = seed;
    }
    let prog = desc.build()?;
    let (pointwise, ergodic) = match stored {
        Stored::Report(r) => (r.pointwise, r.ergodic),
        Stored::Pointwise(c) => (Some(c), None),
        Stored::Ergodic(c) => (None, Some(c)),
    };
    if pointwise.is_none() && ergodic.is_none() {
        bail!("no certificate to verify");
    }
    let mut lines = Vec::new();
    if let Some(c) = &pointwise {
        match verify_pointwise(&prog, c) {
            Ok(r) => lines.push(format!(
                "pointwise (iteration {}): stationarity {:e}, primal feasibility {:e}, dual feasibility {:e}, complementarity {:e}",
                c.iteration, r.stationarity, r.primal_feasibility, r.dual_feasibility, r.complementarity
            )),
            Err(e) => return failed(e),
        }
    }
    if let Some(c) = &ergodic {
        match verify_ergodic(&prog, c, &sampling) {
            Ok(r) => lines.push(format!(
                "ergodic ({} records): primal feasibility {:e}, dual feasibility {:e}, complementarity {:e}, eps' range {:e}, subgradient margin {:e}",
                c.records,
                r.primal_feasibility,
                r.dual_feasibility,
                r.complementarity,
                r.eps_prime_range,
                r.subgradient_margin
            )),
            Err(e) => return failed(e),
        }
    }
    Ok(Outcome {
        code: EXIT_OK,
        message: lines.join("\n"),
    })
}
