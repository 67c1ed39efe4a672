//! Regularized saddle-point problem of a quadratic model:
//!
//! ```text
//! argmin_x max_{y >= 0}  f_m(x) + <y, g_m(x)> + (|x - xb|^2 - |y - yb|^2) / (2 lam)
//! ```
//!
//! The inner maximum is `y(x) = (lam g_m(x) + yb)+`, which leaves the
//! strongly monotone, piecewise smooth equation
//!
//! ```text
//! F(x) = lam (grad f_m(x) + grad g_m(x) y(x)) + x - xb = 0,
//! ```
//!
//! the gradient of `Theta(x) = lam f_m + |(lam g_m + yb)+|^2 / 2 + |x - xb|^2 / 2`.
//! It is solved by semismooth Newton with backtracking on `|F|^2`, falling
//! back to Newton steps safeguarded on `Theta` and finally gradient steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::problem::PrimalDual;
use crate::quad_model::QuadraticModel;
use crate::saddle::check_point;

#[derive(Clone, Debug)]
pub struct SubproblemOptions {
    pub max_newton_iters: usize,
    pub max_backtracks: usize,
    pub max_fallback_iters: usize,
}

impl Default for SubproblemOptions {
    fn default() -> Self {
        Self {
            max_newton_iters: 200,
            max_backtracks: 30,
            max_fallback_iters: 20_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SubproblemSolution {
    pub z_new: PrimalDual,
    /// `|F(x_new)|`; equals `sqrt(Psi)` of the model operator at `z_new`.
    pub residual_norm: f64,
    /// Tolerance actually enforced: `inner_tol`, raised to the rounding floor
    /// of `F` when the latter is larger.
    pub tolerance: f64,
    pub newton_iters: usize,
    pub fallback_used: bool,
}

struct Eval {
    f: DVector<f64>,
    norm: f64,
    y: DVector<f64>,
    shifted: DVector<f64>,
    grads: DMatrix<f64>,
    /// Magnitude of the terms summed in `F`, for the rounding floor.
    scale: f64,
    /// Frobenius bound on the generalized Jacobian at `x`.
    jac_scale: f64,
}

struct Reduced<'a> {
    model: &'a QuadraticModel,
    z_bar: &'a PrimalDual,
    lambda: f64,
}

impl Reduced<'_> {
    fn eval(&self, x: &DVector<f64>) -> Result<Eval> {
        let m = self.model;
        let lam = self.lambda;
        let grads = m.g_jacobian_t(x);
        let shifted = m.g_values(x) * lam + &self.z_bar.y;
        let y = shifted.map(|s| s.max(0.0));
        let gf = m.f_gradient(x);
        let gy = &grads * &y;
        let f = (&gf + &gy) * lam + x - &self.z_bar.x;
        if !f.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "subproblem residual",
            });
        }
        let scale = lam * (gf.norm() + gy.norm()) + x.norm() + self.z_bar.x.norm();
        let mut jac_scale = 1.0 + lam * m.f_hessian.norm();
        for (i, h) in m.g_hessians.iter().enumerate() {
            jac_scale += lam * y[i] * h.norm();
            if shifted[i] > 0.0 {
                jac_scale += lam * lam * grads.column(i).norm_squared();
            }
        }
        Ok(Eval {
            norm: f.norm(),
            f,
            y,
            shifted,
            grads,
            scale,
            jac_scale,
        })
    }

    fn theta(&self, x: &DVector<f64>) -> f64 {
        let m = self.model;
        let shifted = m.g_values(x) * self.lambda + &self.z_bar.y;
        let plus = shifted.map(|s| s.max(0.0));
        self.lambda * m.f_value(x) + 0.5 * plus.norm_squared() + 0.5 * (x - &self.z_bar.x).norm_squared()
    }

    /// Generalized Jacobian `I + lam (H_f + sum y_i H_i) + lam^2 sum_{active} a_i a_i'`.
    /// Kinks (`lam g_i + yb_i = 0`) are treated as inactive.
    fn jacobian(&self, e: &Eval) -> DMatrix<f64> {
        let m = self.model;
        let n = m.n();
        let lam = self.lambda;
        let mut j = &m.f_hessian * lam + DMatrix::identity(n, n);
        for (i, h) in m.g_hessians.iter().enumerate() {
            if e.y[i] > 0.0 {
                j += h * (lam * e.y[i]);
            }
            if e.shifted[i] > 0.0 {
                let a = e.grads.column(i);
                j += a * a.transpose() * (lam * lam);
            }
        }
        (&j + j.transpose()) * 0.5
    }

    fn newton_direction(&self, e: &Eval) -> Option<DVector<f64>> {
        let j = self.jacobian(e);
        let rhs = -&e.f;
        let d = match j.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => j.lu().solve(&rhs)?,
        };
        d.iter().all(|v| v.is_finite()).then_some(d)
    }
}

/// Rounding error of the summation in `F`.
fn summation_floor(e: &Eval, x: &DVector<f64>) -> f64 {
    16.0 * f64::EPSILON * (x.len() as f64).sqrt() * e.scale
}

/// Worst-case residual from rounding: the summation error plus the Jacobian
/// acting on a half-ulp perturbation of `x`. Solves that stall above the
/// summation floor are accepted below this level, reporting the residual
/// actually reached as their tolerance.
fn jacobian_floor(e: &Eval, x: &DVector<f64>) -> f64 {
    summation_floor(e, x) + 16.0 * f64::EPSILON * (x.len() as f64).sqrt() * e.jac_scale * x.amax()
}

/// Solves with default options, starting Newton at the expansion point.
pub fn solve_model_saddle(
    model: &QuadraticModel,
    z_bar: &PrimalDual,
    lambda: f64,
    inner_tol: f64,
) -> Result<SubproblemSolution> {
    SubproblemSolver::default().solve(model, z_bar, lambda, inner_tol)
}

#[derive(Clone, Debug, Default)]
pub struct SubproblemSolver {
    pub options: SubproblemOptions,
}

impl SubproblemSolver {
    pub fn new(options: SubproblemOptions) -> Self {
        Self { options }
    }

    pub fn solve(
        &self,
        model: &QuadraticModel,
        z_bar: &PrimalDual,
        lambda: f64,
        inner_tol: f64,
    ) -> Result<SubproblemSolution> {
        self.solve_from(model, z_bar, lambda, inner_tol, &model.x_tilde)
    }

    pub fn solve_from(
        &self,
        model: &QuadraticModel,
        z_bar: &PrimalDual,
        lambda: f64,
        inner_tol: f64,
        x_start: &DVector<f64>,
    ) -> Result<SubproblemSolution> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be positive and finite, got {lambda}")));
        }
        if !(inner_tol > 0.0) {
            return Err(invalid("inner_tol", "must be positive"));
        }
        check_point(model.n(), model.m(), z_bar)?;
        if x_start.len() != model.n() {
            return Err(Error::DimensionMismatch {
                context: "subproblem start",
                expected: model.n(),
                got: x_start.len(),
            });
        }
        let red = Reduced {
            model,
            z_bar,
            lambda,
        };

        let mut x = x_start.clone();
        let mut e = red.eval(&x)?;
        let mut best = (x.clone(), e.norm);
        let mut iters = 0;
        let target = |e: &Eval, x: &DVector<f64>| inner_tol.max(summation_floor(e, x));

        let finish = |x: DVector<f64>, e: Eval, iters, fallback| SubproblemSolution {
            tolerance: target(&e, &x),
            residual_norm: e.norm,
            z_new: PrimalDual::new(x, e.y),
            newton_iters: iters,
            fallback_used: fallback,
        };

        let mut stalled = false;
        while iters < self.options.max_newton_iters {
            if e.norm <= target(&e, &x) {
                return Ok(finish(x, e, iters, false));
            }
            let Some(d) = red.newton_direction(&e) else {
                stalled = true;
                break;
            };
            iters += 1;
            let phi0 = e.norm * e.norm;
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=self.options.max_backtracks {
                let xt = &x + &d * t;
                let et = red.eval(&xt)?;
                if et.norm * et.norm <= (1.0 - 1e-4 * t) * phi0 {
                    accepted = Some((xt, et));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((xt, et)) => {
                    x = xt;
                    e = et;
                    if e.norm < best.1 {
                        best = (x.clone(), e.norm);
                    }
                }
                None => {
                    stalled = true;
                    break;
                }
            }
        }
        if e.norm <= target(&e, &x) {
            return Ok(finish(x, e, iters, false));
        }
        log::debug!(
            "semismooth Newton {} after {iters} iterations (|F| = {:e}); using fallback",
            if stalled { "stalled" } else { "hit its cap" },
            best.1
        );

        x = best.0.clone();
        e = red.eval(&x)?;
        let mut theta_x = red.theta(&x);
        for _ in 0..self.options.max_fallback_iters {
            if e.norm <= target(&e, &x) {
                return Ok(finish(x, e, iters, true));
            }
            let grad = e.f.clone();
            let dir = red
                .newton_direction(&e)
                .filter(|d| d.dot(&grad) < 0.0)
                .unwrap_or_else(|| -&grad);
            let slope = dir.dot(&grad);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let xt = &x + &dir * t;
                let et = red.eval(&xt)?;
                let theta_t = red.theta(&xt);
                if theta_t <= theta_x + 1e-4 * t * slope || et.norm <= (1.0 - 1e-4 * t) * e.norm {
                    accepted = Some((xt, et, theta_t));
                    break;
                }
                t *= 0.5;
            }
            let Some((xt, et, theta_t)) = accepted else {
                break;
            };
            x = xt;
            e = et;
            theta_x = theta_t;
            if e.norm < best.1 {
                best = (x.clone(), e.norm);
            }
        }
        if e.norm <= target(&e, &x) {
            return Ok(finish(x, e, iters, true));
        }
        if best.1 < e.norm {
            x = best.0;
            e = red.eval(&x)?;
        }
        if e.norm <= inner_tol.max(jacobian_floor(&e, &x)) {
            log::debug!("subproblem stopped at the rounding level |F| = {:e}", e.norm);
            return Ok(SubproblemSolution {
                tolerance: inner_tol.max(e.norm),
                residual_norm: e.norm,
                z_new: PrimalDual::new(x, e.y),
                newton_iters: iters,
                fallback_used: true,
            });
        }
        Err(Error::Subproblem {
            iterations: iters,
            best_residual: e.norm.min(best.1),
            target: target(&e, &x),
        })
    }
}
