//! The relaxed method of multipliers driven by second-order models: a loop
//! that alternates between extragradient steps (`A`) and model re-solves with
//! a larger stepsize (`B`).

mod budget;

pub use budget::{complexity_budget, derive_relaxation, initial_lambda, large_step_constant, Budget, BudgetInputs};

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::certificates::{
    ergodic_certificate, pointwise_certificate, ErgodicCertificate, PointwiseCertificate, SamplingOptions,
};
use crate::decimal;
use crate::error::{invalid, Error, Result};
use crate::error_measure::{psi, relaxed_anchor_update, rho_radius, PsiEvaluation};
use crate::hpe::{check_sigma_inequality, ErgodicAccumulator, HpeRecord};
use crate::problem::{ConvexProgram, PrimalDual};
use crate::quad_model::build_model;
use crate::saddle::saddle_operator;
use crate::subproblem::{SubproblemOptions, SubproblemSolver};

fn default_sigma() -> f64 {
    0.5
}
fn default_theta() -> f64 {
    0.25
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iters() -> usize {
    10_000
}
fn default_abs_floor() -> f64 {
    1e-12
}
fn default_kappa() -> f64 {
    1e-4
}
fn default_samples() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_sigma", with = "decimal::scalar")]
    pub sigma: f64,
    #[serde(default = "default_theta", with = "decimal::scalar")]
    pub theta: f64,
    /// Tolerance on `|(p, q)|`.
    #[serde(default = "default_tol", with = "decimal::scalar")]
    pub delta: f64,
    /// Tolerance on the complementarity gap.
    #[serde(default = "default_tol", with = "decimal::scalar")]
    pub eps: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Inner tolerance of a `B` step is `max(inner_abs_floor, inner_kappa * rho)`.
    #[serde(default = "default_abs_floor", with = "decimal::scalar")]
    pub inner_abs_floor: f64,
    #[serde(default = "default_kappa", with = "decimal::scalar")]
    pub inner_kappa: f64,
    #[serde(default, with = "decimal::opt_scalar", skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    /// Seed of the sampling checks on the ergodic certificate.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub certificate_samples: usize,
    /// Keep every extragradient record in the result.
    #[serde(default)]
    pub keep_records: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma: default_sigma(),
            theta: default_theta(),
            delta: default_tol(),
            eps: default_tol(),
            max_iters: default_max_iters(),
            inner_abs_floor: default_abs_floor(),
            inner_kappa: default_kappa(),
            lambda1: None,
            seed: 0,
            certificate_samples: default_samples(),
            keep_records: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        derive_relaxation(self.sigma, self.theta)?;
        for (name, v) in [
            ("delta", self.delta),
            ("eps", self.eps),
            ("inner_abs_floor", self.inner_abs_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.inner_kappa >= 0.0 && self.inner_kappa.is_finite()) {
            return Err(invalid("inner_kappa", "must be nonnegative and finite"));
        }
        if let Some(l) = self.lambda1 {
            if !(l > 0.0 && l.is_finite()) {
                return Err(invalid("lambda1", format!("must be positive and finite, got {l}")));
            }
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingOptions {
        SamplingOptions {
            samples: self.certificate_samples,
            seed: self.seed,
            ..SamplingOptions::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    A,
    B,
}

/// One row of the iteration trace. Quantities refer to `(z~_k, z_{k-1}, lam_k)`
/// unless noted otherwise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub branch: Branch,
    pub lambda: f64,
    pub sqrt_psi: f64,
    pub rho: f64,
    /// `|z~_k - z_{k-1}|`
    pub step_norm: f64,
    /// `sigma |z~_k - z_{k-1}| - rho_k`; the `A` branch is taken iff it is `>= 0`.
    pub branch_margin: f64,
    pub v_norm: f64,
    pub eps: f64,
    pub ergodic_v_norm: Option<f64>,
    pub ergodic_eps: Option<f64>,
    /// Relative gap between the running stepsize and `(1/(1-tau))^(#B-#A) lam_1`.
    pub lambda_drift: f64,
    /// `rho + 10 inner_tol - sqrt(Psi)` for the state after the step, with the
    /// tolerance of the solve that produced the current `z~`.
    pub neighborhood_margin: f64,
    pub inner_tol: Option<f64>,
    pub inner_residual: Option<f64>,
    pub inner_newton_iters: Option<usize>,
    pub wall_time: f64,
}

/// Algorithm state before iteration `k`.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub k: usize,
    pub z_prev: PrimalDual,
    pub z_tilde: PrimalDual,
    pub lambda: f64,
    pub lambda1: f64,
    pub count_a: usize,
    pub count_b: usize,
    pub accumulator: ErgodicAccumulator,
    /// Tolerance of the solve that produced `z~` (zero for `z~_1 = z0`).
    pub inner_tol: f64,
    current: PsiEvaluation,
}

impl SolverState {
    /// `(1/(1-tau))^(#B - #A) lam_1`.
    pub fn lambda_from_counts(&self, tau: f64) -> f64 {
        let e = self.count_b as i64 - self.count_a as i64;
        self.lambda1 * (1.0 - tau).powf(-(e as f64))
    }

    /// `Psi` data of `(z~_k, z_{k-1}, lam_k)`.
    pub fn current(&self) -> &PsiEvaluation {
        &self.current
    }
}

/// What one call to [`Solver::step`] did.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub row: IterationRecord,
    pub record: Option<HpeRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The starting point already met both tolerances.
    Initial,
    Pointwise,
    Ergodic,
    MaxIterations,
}

/// Counts of failed runtime checks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantViolations {
    pub neighborhood: usize,
    pub sigma_inequality: usize,
    pub lambda_identity: usize,
}

impl InvariantViolations {
    pub fn total(&self) -> usize {
        self.neighborhood + self.sigma_inequality + self.lambda_identity
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub termination: Termination,
    /// Index of the iterate whose certificate met the tolerances, or the
    /// number of completed steps when none did.
    pub iterations: usize,
    pub count_a: usize,
    pub count_b: usize,
    pub h: f64,
    pub tau: f64,
    pub lambda1: Option<f64>,
    pub pointwise: Option<PointwiseCertificate>,
    pub ergodic: Option<ErgodicCertificate>,
    pub trace: Vec<IterationRecord>,
    pub records: Vec<HpeRecord>,
    pub violations: InvariantViolations,
    pub z_prev: PrimalDual,
    pub z_tilde: PrimalDual,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

/// A configured solver; it holds no per-run state.
#[derive(Clone, Debug)]
pub struct Solver {
    config: SolverConfig,
    h: f64,
    tau: f64,
    inner: SubproblemSolver,
}

struct Candidate {
    k: usize,
    z: PrimalDual,
    v: DVector<f64>,
    eps: f64,
    score: f64,
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

impl Solver {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let (h, tau) = derive_relaxation(config.sigma, config.theta)?;
        Ok(Self {
            config,
            h,
            tau,
            inner: SubproblemSolver::new(SubproblemOptions::default()),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Starting state `z~_1 = z_0 = z0`, or `None` when `S(z0) = 0`.
    pub fn init(&self, prog: &ConvexProgram, z0: &PrimalDual) -> Result<Option<SolverState>> {
        let lambda1 = match self.config.lambda1 {
            Some(l) => {
                if saddle_operator(prog, z0)?.norm() == 0.0 {
                    return Ok(None);
                }
                l
            }
            None => match initial_lambda(prog, z0, self.config.theta)? {
                Some(l) => l,
                None => return Ok(None),
            },
        };
        let current = psi(prog, z0, z0, lambda1)?;
        Ok(Some(SolverState {
            k: 1,
            z_prev: z0.clone(),
            z_tilde: z0.clone(),
            lambda: lambda1,
            lambda1,
            count_a: 0,
            count_b: 0,
            accumulator: ErgodicAccumulator::new(prog.n(), prog.m()),
            inner_tol: 0.0,
            current,
        }))
    }

    fn inner_tol(&self, rho: f64) -> f64 {
        self.config.inner_abs_floor.max(self.config.inner_kappa * rho)
    }

    /// Executes iteration `k` and advances the state to `k + 1`.
    pub fn step(&self, prog: &ConvexProgram, state: &mut SolverState) -> Result<StepOutcome> {
        let start = Instant::now();
        let (sigma, tau) = (self.config.sigma, self.tau);
        let t2 = self.config.theta * self.config.theta;
        let k = state.k;
        let lambda = state.lambda;
        let cur = state.current.clone();
        let rho = rho_radius(prog, &state.z_tilde.y, t2 / lambda)?;
        let step_norm = state.z_tilde.dist(&state.z_prev);
        let margin = sigma * step_norm - rho;

        let mut record = None;
        let mut inner = None;
        let branch = if rho <= sigma * step_norm {
            let (z_next, lambda_next) = relaxed_anchor_update(prog, &state.z_tilde, &state.z_prev, lambda, tau)?;
            let rec = HpeRecord {
                index: state.count_a + 1,
                lambda,
                z_tilde: state.z_tilde.clone(),
                v: cur.v.clone(),
                eps: cur.eps,
                tau,
                z_prev: state.z_prev.clone(),
                z_next: z_next.clone(),
            };
            state.accumulator.update(&rec);
            record = Some(rec);
            state.z_prev = z_next;
            state.lambda = lambda_next;
            state.count_a += 1;
            Branch::A
        } else {
            let lambda_next = lambda / (1.0 - tau);
            let tol = self.inner_tol(rho_radius(prog, &state.z_tilde.y, t2 / lambda_next)?);
            let model = build_model(prog, &state.z_tilde.x)?;
            let sol = self
                .inner
                .solve(&model, &state.z_prev, lambda_next, tol)
                .map_err(|e| Error::Step {
                    iteration: k,
                    lambda: lambda_next,
                    z_prev: state.z_prev.stacked().as_slice().to_vec(),
                    z_tilde: state.z_tilde.stacked().as_slice().to_vec(),
                    source: Box::new(e),
                })?;
            inner = Some(sol.clone());
            state.inner_tol = sol.tolerance;
            state.z_tilde = sol.z_new;
            state.lambda = lambda_next;
            state.count_b += 1;
            Branch::B
        };
        state.k += 1;
        state.current = psi(prog, &state.z_tilde, &state.z_prev, state.lambda)?;

        let counted = state.lambda_from_counts(tau);
        let lambda_drift = rel_gap(state.lambda, counted);
        if lambda_drift > 1e-12 {
            log::warn!("iteration {k}: stepsize drifted from the count identity by {lambda_drift:e}");
        }
        let slack = 10.0 * state.inner_tol;
        let radius = rho_radius(prog, &state.z_tilde.y, t2 / state.lambda)?;
        let neighborhood_margin = radius + slack - state.current.sqrt_psi();
        if neighborhood_margin < 0.0 {
            log::warn!("iteration {k}: iterate left the neighborhood by {:e}", -neighborhood_margin);
        }
        if let Some(rec) = &record {
            let c = check_sigma_inequality(rec, sigma);
            if !c.holds {
                log::warn!("iteration {k}: relative-error test failed ({:e} > {:e})", c.lhs, c.rhs);
            }
        }

        let erg = if branch == Branch::A {
            state.accumulator.finalize()
        } else {
            None
        };
        let row = IterationRecord {
            k,
            branch,
            lambda,
            sqrt_psi: cur.sqrt_psi(),
            rho,
            step_norm,
            branch_margin: margin,
            v_norm: cur.v.norm(),
            eps: cur.eps,
            ergodic_v_norm: erg.as_ref().map(|a| a.v.norm()),
            ergodic_eps: erg.as_ref().map(|a| a.eps),
            lambda_drift,
            neighborhood_margin,
            inner_tol: inner.as_ref().map(|s| s.tolerance),
            inner_residual: inner.as_ref().map(|s| s.residual_norm),
            inner_newton_iters: inner.as_ref().map(|s| s.newton_iters),
            wall_time: start.elapsed().as_secs_f64(),
        };
        Ok(StepOutcome { row, record })
    }

    fn meets(&self, v_norm: f64, eps: f64) -> bool {
        v_norm <= self.config.delta && eps <= self.config.eps
    }

    fn score(&self, v_norm: f64, eps: f64) -> f64 {
        (v_norm / self.config.delta).max(eps / self.config.eps)
    }

    pub fn run(&self, prog: &ConvexProgram, z0: &PrimalDual) -> Result<SolveResult> {
        if z0.n() != prog.n() || z0.m() != prog.m() {
            return Err(Error::DimensionMismatch {
                context: "starting point",
                expected: prog.n() + prog.m(),
                got: z0.n() + z0.m(),
            });
        }
        if !z0.is_finite() {
            return Err(Error::NonFinite { what: "starting point" });
        }
        if !z0.dual_feasible() {
            return Err(invalid("y0", "must be nonnegative"));
        }

        let mut result = SolveResult {
            termination: Termination::MaxIterations,
            iterations: 0,
            count_a: 0,
            count_b: 0,
            h: self.h,
            tau: self.tau,
            lambda1: None,
            pointwise: None,
            ergodic: None,
            trace: Vec::new(),
            records: Vec::new(),
            violations: InvariantViolations::default(),
            z_prev: z0.clone(),
            z_tilde: z0.clone(),
        };

        // Iterate zero: p = grad_x L(z0), q = -g - w with w = (-g)+.
        let s0 = saddle_operator(prog, z0)?;
        let g = -&s0.dual_block;
        let w = g.map(|gi| (-gi).max(0.0));
        let mut v0 = DVector::zeros(prog.n() + prog.m());
        v0.rows_mut(0, prog.n()).copy_from(&s0.primal_block);
        v0.rows_mut(prog.n(), prog.m()).copy_from(&(-&g - &w));
        let eps0 = z0.y.dot(&w);
        let mut best = Candidate {
            k: 0,
            z: z0.clone(),
            score: self.score(v0.norm(), eps0),
            v: v0,
            eps: eps0,
        };
        if self.meets(best.v.norm(), best.eps) {
            result.termination = Termination::Initial;
            result.pointwise = Some(pointwise_certificate(prog, &best.z, &best.v, best.eps, 0)?);
            return Ok(result);
        }

        let Some(mut state) = self.init(prog, z0)? else {
            result.termination = Termination::Initial;
            result.pointwise = Some(pointwise_certificate(prog, &best.z, &best.v, best.eps, 0)?);
            return Ok(result);
        };
        result.lambda1 = Some(state.lambda1);

        let mut steps = 0;
        loop {
            let cur = state.current();
            let (vn, e) = (cur.v.norm(), cur.eps);
            let s = self.score(vn, e);
            if s < best.score {
                best = Candidate {
                    k: state.k,
                    z: state.z_tilde.clone(),
                    v: cur.v.clone(),
                    eps: e,
                    score: s,
                };
            }
            if self.meets(vn, e) {
                result.termination = Termination::Pointwise;
                result.iterations = state.k;
                break;
            }
            if steps >= self.config.max_iters {
                result.iterations = steps;
                break;
            }
            let out = self.step(prog, &mut state)?;
            steps += 1;
            let row = &out.row;
            if row.neighborhood_margin < 0.0 {
                result.violations.neighborhood += 1;
            }
            if row.lambda_drift > 1e-12 {
                result.violations.lambda_identity += 1;
            }
            if let Some(rec) = out.record {
                if !check_sigma_inequality(&rec, self.config.sigma).holds {
                    result.violations.sigma_inequality += 1;
                }
                if self.config.keep_records {
                    result.records.push(rec);
                }
            }
            let erg_done = matches!((row.ergodic_v_norm, row.ergodic_eps), (Some(vn), Some(e)) if self.meets(vn, e));
            result.trace.push(out.row);
            if erg_done {
                result.termination = Termination::Ergodic;
                result.iterations = state.k - 1;
                break;
            }
        }

        result.count_a = state.count_a;
        result.count_b = state.count_b;
        result.pointwise = Some(pointwise_certificate(prog, &best.z, &best.v, best.eps, best.k)?);
        if let Some(avg) = state.accumulator.finalize() {
            match ergodic_certificate(prog, &avg, &self.config.sampling()) {
                Ok(c) => result.ergodic = Some(c),
                Err(e) if result.termination == Termination::Ergodic => return Err(e),
                Err(e) => log::warn!("ergodic certificate rejected: {e}"),
            }
        }
        result.z_prev = state.z_prev;
        result.z_tilde = state.z_tilde;
        Ok(result)
    }
}

pub fn run(prog: &ConvexProgram, z0: &PrimalDual, config: &SolverConfig) -> Result<SolveResult> {
    Solver::new(config.clone())?.run(prog, z0)
}

/// Convenience wrapper around [`Solver::step`] for a one-off configuration.
pub fn step(prog: &ConvexProgram, state: &mut SolverState, config: &SolverConfig) -> Result<StepOutcome> {
    Solver::new(config.clone())?.step(prog, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_problem, toy::*};
    use serde_json::json;

    #[test]
    fn kkt_start_stops_immediately() {
        let p = half_square_affine(1.0);
        let r = run(&p, &PrimalDual::from_slices(&[0.0], &[0.0]), &SolverConfig::default()).unwrap();
        assert_eq!(r.termination, Termination::Initial);
        assert_eq!(r.iterations, 0);
        assert!(r.trace.is_empty());
        assert_eq!(r.pointwise.unwrap().iteration, 0);
    }

    #[test]
    fn stationary_state_takes_b_and_stays() {
        // z~ = z_prev = KKT point: rho > 0 = sigma |z~ - z_prev|.
        let p = half_square_affine(1.0);
        let z = PrimalDual::from_slices(&[0.0], &[0.0]);
        let solver = Solver::new(SolverConfig {
            lambda1: Some(0.5),
            ..SolverConfig::default()
        })
        .unwrap();
        let mut st = SolverState {
            k: 1,
            z_prev: z.clone(),
            z_tilde: z.clone(),
            lambda: 0.5,
            lambda1: 0.5,
            count_a: 0,
            count_b: 0,
            accumulator: ErgodicAccumulator::new(1, 1),
            inner_tol: 0.0,
            current: psi(&p, &z, &z, 0.5).unwrap(),
        };
        let out = solver.step(&p, &mut st).unwrap();
        assert_eq!(out.row.branch, Branch::B);
        assert!(st.z_tilde.dist(&z) < 1e-12);
        assert!((st.lambda - 0.5 / (1.0 - solver.tau())).abs() < 1e-15);
    }

    #[test]
    fn small_budget_reports_not_converged() {
        let p = builtin_problem("quad_softplus", &json!({"n": 2, "m": 1, "a": [[1.0, 1.0]]})).unwrap();
        let cfg = SolverConfig {
            max_iters: 3,
            delta: 1e-14,
            eps: 1e-14,
            ..SolverConfig::default()
        };
        let r = run(&p, &PrimalDual::new(DVector::from_element(2, 1.0), DVector::zeros(1)), &cfg).unwrap();
        assert_eq!(r.termination, Termination::MaxIterations);
        assert!(!r.converged());
        assert_eq!(r.trace.len(), 3);
        assert!(r.trace.windows(2).all(|w| w[1].k == w[0].k + 1));
        assert!(r.pointwise.is_some());
    }

    #[test]
    fn converges_on_small_program() {
        let p = builtin_problem("known_kkt", &json!({"n": 3, "m": 2, "seed": 0})).unwrap();
        let z0 = PrimalDual::zeros(3, 2);
        let cfg = SolverConfig {
            keep_records: true,
            ..SolverConfig::default()
        };
        let r = run(&p, &z0, &cfg).unwrap();
        assert!(r.converged(), "{:?}", r.termination);
        assert_eq!(r.violations.total(), 0);
        for (i, row) in r.trace.iter().enumerate() {
            assert_eq!(row.k, i + 1);
        }
        let c = r.pointwise.unwrap();
        if r.termination == Termination::Pointwise {
            assert!(c.residual_norm <= 1e-6 && c.eps <= 1e-6);
        }
        assert_eq!(r.records.len(), r.count_a);
    }

    #[test]
    fn config_rejects_out_of_range() {
        for cfg in [
            SolverConfig { sigma: 1.0, ..Default::default() },
            SolverConfig { theta: 0.3, ..Default::default() },
            SolverConfig { delta: 0.0, ..Default::default() },
            SolverConfig { lambda1: Some(-1.0), ..Default::default() },
        ] {
            assert!(Solver::new(cfg).is_err());
        }
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = SolverConfig {
            lambda1: Some(0.1),
            seed: 7,
            ..Default::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SolverConfig>(&s).unwrap(), cfg);
        let d: SolverConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(d, SolverConfig::default());
    }
}
