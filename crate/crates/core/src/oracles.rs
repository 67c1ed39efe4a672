//! Slow, independent reference computations used to cross-check the solver.
//!
//! Nothing here calls the numerical kernels it is meant to check: the model
//! is re-evaluated from its raw coefficients, the inner minimizer of `Psi` is
//! found on a grid, and ergodic averages are formed in two passes.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::hpe::HpeRecord;
use crate::problem::{ConvexProgram, PrimalDual};
use crate::quad_model::QuadraticModel;

#[derive(Clone, Debug)]
pub struct OracleConfig {
    pub grid_points: usize,
    pub max_iters: usize,
    pub initial_lipschitz: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid_points: 200_001,
            max_iters: 5_000_000,
            initial_lipschitz: 1.0,
            seed: 0,
        }
    }
}

/// The reduced residual `lam (grad f_m + grad g_m (lam g_m + yb)+) + x - xb`
/// and the projected dual, evaluated term by term.
fn reduced_residual(
    model: &QuadraticModel,
    z_bar: &PrimalDual,
    lambda: f64,
    x: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = x.len();
    let m = model.g_const.len();
    let d: Vec<f64> = (0..n).map(|k| x[k] - model.x_tilde[k]).collect();
    let quad = |h: &DMatrix<f64>| -> (Vec<f64>, f64) {
        let hd: Vec<f64> = (0..n).map(|r| (0..n).map(|c| h[(r, c)] * d[c]).sum()).collect();
        let dhd = (0..n).map(|r| d[r] * hd[r]).sum();
        (hd, dhd)
    };
    let (hf_d, _) = quad(&model.f_hessian);
    let mut res: Vec<f64> = (0..n)
        .map(|k| lambda * (model.f_linear[k] + hf_d[k]) + x[k] - z_bar.x[k])
        .collect();
    let mut y = DVector::zeros(m);
    for i in 0..m {
        let (hi_d, dhd) = quad(&model.g_hessians[i]);
        let lin: f64 = (0..n).map(|k| model.g_linear[(k, i)] * d[k]).sum();
        let gi = model.g_const[i] + lin + 0.5 * dhd;
        let yi = (lambda * gi + z_bar.y[i]).max(0.0);
        y[i] = yi;
        if yi > 0.0 {
            for k in 0..n {
                res[k] += lambda * yi * (model.g_linear[(k, i)] + hi_d[k]);
            }
        }
    }
    (DVector::from_vec(res), y)
}

/// Solves the model subproblem by `x <- x - F(x) / L` with a local Lipschitz
/// estimate `L` of `F` (doubled on failure, relaxed on success).
pub fn reference_subproblem(
    model: &QuadraticModel,
    z_bar: &PrimalDual,
    lambda: f64,
    tol: f64,
    cfg: &OracleConfig,
) -> Result<PrimalDual> {
    if !(lambda > 0.0) {
        return Err(invalid("lambda", "must be positive"));
    }
    let mut x = model.x_tilde.clone();
    let (mut f, mut y) = reduced_residual(model, z_bar, lambda, &x);
    let mut lip = cfg.initial_lipschitz.max(1.0);
    for iter in 0..cfg.max_iters {
        if f.norm() <= tol {
            return Ok(PrimalDual::new(x, y));
        }
        loop {
            let step = &f / lip;
            let xt = &x - &step;
            let (ft, yt) = reduced_residual(model, z_bar, lambda, &xt);
            if !ft.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "reference subproblem",
                });
            }
            // Co-coercivity of the gradient of a convex function with an
            // L-Lipschitz gradient: <F(a) - F(b), a - b> >= |F(a) - F(b)|^2 / L.
            let df = &ft - &f;
            let dx = -&step;
            if df.dot(&dx) * lip >= df.norm_squared() * (1.0 - 1e-12) || lip > 1e300 {
                x = xt;
                f = ft;
                y = yt;
                lip = (lip * 0.9).max(1.0);
                break;
            }
            lip *= 2.0;
        }
        if iter + 1 == cfg.max_iters {
            break;
        }
    }
    Err(Error::Subproblem {
        iterations: cfg.max_iters,
        best_residual: f.norm(),
        target: tol,
    })
}

/// Minimizes `(y_i - yb_i - lam g_i - lam w)^2 + 2 lam y_i w` over a grid on
/// `[0, W_i]` coordinate by coordinate. Returns the minimizer and the grid
/// spacing per coordinate.
pub fn grid_w_minimizer(
    prog: &ConvexProgram,
    z: &PrimalDual,
    z_bar: &PrimalDual,
    lambda: f64,
    grid_points: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if grid_points < 2 {
        return Err(invalid("grid_points", "need at least two grid points"));
    }
    let g = prog.constraint_values(&z.x)?;
    let m = g.len();
    let mut w = DVector::zeros(m);
    let mut spacing = DVector::zeros(m);
    for i in 0..m {
        // The minimizer never exceeds |g_i| + |yb_i| / lam.
        let upper = g[i].abs() + z_bar.y[i].abs() / lambda + 1.0;
        let h = upper / (grid_points - 1) as f64;
        let obj = |wi: f64| {
            let r = z.y[i] - z_bar.y[i] - lambda * g[i] - lambda * wi;
            r * r + 2.0 * lambda * z.y[i] * wi
        };
        let (mut best_w, mut best) = (0.0, obj(0.0));
        for k in 1..grid_points {
            let wi = k as f64 * h;
            let val = obj(wi);
            if val < best {
                best = val;
                best_w = wi;
            }
        }
        w[i] = best_w;
        spacing[i] = h;
    }
    Ok((w, spacing))
}

/// Ergodic averages computed directly from the full record list.
pub fn two_pass_ergodic(records: &[HpeRecord]) -> Result<(PrimalDual, DVector<f64>, f64)> {
    let first = records
        .first()
        .ok_or_else(|| invalid("records", "must be nonempty"))?;
    let n = first.z_tilde.n();
    let dim = first.v.len();
    let weights: Vec<f64> = records.iter().map(|r| r.tau * r.lambda).collect();
    let total: f64 = weights.iter().sum();
    let mut z = DVector::zeros(dim);
    let mut v = DVector::zeros(dim);
    for (r, w) in records.iter().zip(&weights) {
        z += r.z_tilde.stacked() * *w;
        v += &r.v * *w;
    }
    z /= total;
    v /= total;
    let mut eps = 0.0;
    for (r, w) in records.iter().zip(&weights) {
        eps += w * (r.eps + (r.z_tilde.stacked() - &z).dot(&(&r.v - &v)));
    }
    Ok((PrimalDual::from_stacked(&z, n), v, eps / total))
}

/// Largest relative central-difference errors of the oracles at `x`.
#[derive(Clone, Debug, Default)]
pub struct DerivativeReport {
    pub objective_gradient: f64,
    pub objective_hessian: f64,
    pub constraint_gradient: f64,
    pub constraint_hessian: f64,
}

pub fn finite_difference_report(prog: &ConvexProgram, x: &DVector<f64>, h: f64) -> Result<DerivativeReport> {
    let n = prog.n();
    let fe = prog.objective(x)?;
    let ge = prog.constraints(x)?;
    let rel = |fd: f64, exact: f64| (fd - exact).abs() / exact.abs().max(1.0);
    let mut rep = DerivativeReport::default();
    for k in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let (fp, fm) = (prog.objective(&xp)?, prog.objective(&xm)?);
        let (gp, gm) = (prog.constraints(&xp)?, prog.constraints(&xm)?);
        rep.objective_gradient = rep
            .objective_gradient
            .max(rel((fp.value - fm.value) / (2.0 * h), fe.gradient[k]));
        for r in 0..n {
            let fd = (fp.gradient[r] - fm.gradient[r]) / (2.0 * h);
            rep.objective_hessian = rep.objective_hessian.max(rel(fd, fe.hessian[(r, k)]));
        }
        for i in 0..prog.m() {
            let fd = (gp.values[i] - gm.values[i]) / (2.0 * h);
            rep.constraint_gradient = rep.constraint_gradient.max(rel(fd, ge.jacobian_t[(k, i)]));
            for r in 0..n {
                let fd = (gp.jacobian_t[(r, i)] - gm.jacobian_t[(r, i)]) / (2.0 * h);
                rep.constraint_hessian = rep.constraint_hessian.max(rel(fd, ge.hessians[i][(r, k)]));
            }
        }
    }
    Ok(rep)
}
