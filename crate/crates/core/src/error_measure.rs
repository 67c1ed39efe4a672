//! The error measure `Psi` of an approximate proximal step, its
//! decomposition `(w, v, eps)`, the radius `rho(y, alpha)` and the
//! neighborhoods built from it.
//!
//! Sign conventions: `(u)+ = max(u, 0)` and `(u)- = max(-u, 0)`, both
//! componentwise and both nonnegative, so `u = (u)+ - (u)-`.
//!
//! For `y >= 0`,
//!
//! ```text
//! Psi(z) = |lam (grad f + grad g y) + x - xb|^2 + |y - (lam g + yb)+|^2 + 2 <y, (lam g + yb)->
//!        = |lam S(z) + z - zb|^2 - |(lam g + yb)-|^2
//! ```

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::problem::{ConvexProgram, PrimalDual};
use crate::saddle::{check_point, SaddleMap, SaddleValue};

fn pos(u: f64) -> f64 {
    u.max(0.0)
}

fn neg(u: f64) -> f64 {
    (-u).max(0.0)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda", format!("must be positive and finite, got {lambda}")));
    }
    Ok(())
}

fn check_dual_feasible(z: &PrimalDual) -> Result<()> {
    if let Some(i) = z.y.iter().position(|&v| v < 0.0) {
        return Err(invalid(
            "y",
            format!("must be nonnegative, entry {i} is {}", z.y[i]),
        ));
    }
    Ok(())
}

/// Everything `Psi` is made of at one point.
#[derive(Clone, Debug)]
pub struct PsiEvaluation {
    pub psi: f64,
    /// Minimizer of the inner problem over `w >= 0`.
    pub w: DVector<f64>,
    /// `S(z) - (0, w)`, stacked.
    pub v: DVector<f64>,
    /// `<y, w>`
    pub eps: f64,
    /// `lam v + z - zb`, stacked.
    pub residual: DVector<f64>,
    pub saddle: SaddleValue,
}

impl PsiEvaluation {
    pub fn sqrt_psi(&self) -> f64 {
        self.psi.sqrt()
    }
}

fn w_from(g: &DVector<f64>, y_bar: &DVector<f64>, lambda: f64) -> DVector<f64> {
    g.zip_map(y_bar, |gi, yb| neg(gi + yb / lambda))
}

/// `(g(x) + yb / lam)-`.
pub fn optimal_w<M: SaddleMap + ?Sized>(
    op: &M,
    z: &PrimalDual,
    z_bar: &PrimalDual,
    lambda: f64,
) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    check_point(op.primal_dim(), op.dual_dim(), z)?;
    check_point(op.primal_dim(), op.dual_dim(), z_bar)?;
    let s = op.saddle_value(z)?;
    Ok(w_from(&-s.dual_block, &z_bar.y, lambda))
}

/// Evaluates `Psi` with its three-term form and returns the decomposition.
/// Debug builds also cross-check against the subtractive form.
pub fn psi<M: SaddleMap + ?Sized>(
    op: &M,
    z: &PrimalDual,
    z_bar: &PrimalDual,
    lambda: f64,
) -> Result<PsiEvaluation> {
    check_lambda(lambda)?;
    let (n, m) = (op.primal_dim(), op.dual_dim());
    check_point(n, m, z)?;
    check_point(n, m, z_bar)?;
    check_dual_feasible(z)?;
    let saddle = op.saddle_value(z)?;
    let g = -&saddle.dual_block;

    let r_x = &saddle.primal_block * lambda + &z.x - &z_bar.x;
    let shifted = &g * lambda + &z_bar.y;
    let r_y = z.y.zip_map(&shifted, |y, s| y - pos(s));
    let gap: f64 = z.y.zip_map(&shifted, |y, s| y * neg(s)).sum();
    let value = r_x.norm_squared() + r_y.norm_squared() + 2.0 * gap;

    let w = w_from(&g, &z_bar.y, lambda);
    let eps = z.y.dot(&w);
    let mut v = saddle.stacked();
    for i in 0..m {
        v[n + i] -= w[i];
    }
    let mut residual = DVector::zeros(n + m);
    residual.rows_mut(0, n).copy_from(&r_x);
    residual.rows_mut(n, m).copy_from(&r_y);

    if !value.is_finite() {
        return Err(Error::NonFinite { what: "Psi" });
    }
    debug_assert!({
        let alt = psi_subtractive_parts(&saddle, z, z_bar, lambda);
        let scale = 1.0 + alt.1;
        (alt.0 - value).abs() <= 1e-10 * scale
    });

    Ok(PsiEvaluation {
        psi: value,
        w,
        v,
        eps,
        residual,
        saddle,
    })
}

fn psi_subtractive_parts(
    saddle: &SaddleValue,
    z: &PrimalDual,
    z_bar: &PrimalDual,
    lambda: f64,
) -> (f64, f64) {
    let full = (saddle.stacked() * lambda + z.stacked() - z_bar.stacked()).norm_squared();
    let shifted = -&saddle.dual_block * lambda + &z_bar.y;
    let minus = shifted.map(neg).norm_squared();
    (full - minus, full)
}

/// `|lam S(z) + z - zb|^2 - |(lam g + yb)-|^2`. Loses precision when the
/// first term is large; kept for cross-checks.
pub fn psi_subtractive<M: SaddleMap + ?Sized>(
    op: &M,
    z: &PrimalDual,
    z_bar: &PrimalDual,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    check_point(op.primal_dim(), op.dual_dim(), z)?;
    check_point(op.primal_dim(), op.dual_dim(), z_bar)?;
    let saddle = op.saddle_value(z)?;
    Ok(psi_subtractive_parts(&saddle, z, z_bar, lambda).0)
}

/// `d Psi / d lam = 2 <S(z), lam (S(z) - (0, w)) + z - zb>`.
pub fn psi_lambda_derivative<M: SaddleMap + ?Sized>(
    op: &M,
    z: &PrimalDual,
    z_bar: &PrimalDual,
    lambda: f64,
) -> Result<f64> {
    let e = psi(op, z, z_bar, lambda)?;
    let r = &e.v * lambda + z.stacked() - z_bar.stacked();
    Ok(2.0 * e.saddle.stacked().dot(&r))
}

/// `(v, eps, w)` of an approximate solution; satisfies
/// `|lam v + z~ - zb|^2 + 2 lam eps = Psi(z~)`.
#[derive(Clone, Debug)]
pub struct ResidualPair {
    pub v: DVector<f64>,
    pub eps: f64,
    pub w: DVector<f64>,
}

pub fn extract_vk_eps<M: SaddleMap + ?Sized>(
    op: &M,
    z_tilde: &PrimalDual,
    z_bar: &PrimalDual,
    lambda: f64,
) -> Result<ResidualPair> {
    let e = psi(op, z_tilde, z_bar, lambda)?;
    Ok(ResidualPair {
        v: e.v,
        eps: e.eps,
        w: e.w,
    })
}

/// Largest root of `(a + b rho) rho = alpha`.
pub fn rho_from_coefficients(a: f64, b: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("alpha", format!("must be positive, got {alpha}")));
    }
    if a < 0.0 || b < 0.0 || (a == 0.0 && b == 0.0) {
        return Err(invalid(
            "rho coefficients",
            format!("need a, b >= 0 not both zero (a = {a}, b = {b})"),
        ));
    }
    if b == 0.0 {
        return Ok(alpha / a);
    }
    Ok(2.0 * alpha / (a + (a * a + 4.0 * b * alpha).sqrt()))
}

/// `rho(y, alpha)` with `a = (L0 + <Lg, |y|>)/2` and `b = 2 |Lg| / 3`.
pub fn rho_radius(prog: &ConvexProgram, y: &DVector<f64>, alpha: f64) -> Result<f64> {
    let a = 0.5 * (prog.l0() + prog.lg_dot_abs(y));
    let b = 2.0 * prog.lg_norm() / 3.0;
    rho_from_coefficients(a, b, alpha)
}

/// `sqrt(Psi)` against the radius `rho(y, theta / lam)`.
#[derive(Clone, Copy, Debug)]
pub struct NeighborhoodCheck {
    pub sqrt_psi: f64,
    pub radius: f64,
}

impl NeighborhoodCheck {
    pub fn contains(&self) -> bool {
        self.sqrt_psi <= self.radius
    }

    pub fn margin(&self) -> f64 {
        self.radius - self.sqrt_psi
    }
}

pub fn neighborhood_check(
    prog: &ConvexProgram,
    z: &PrimalDual,
    z_bar: &PrimalDual,
    lambda: f64,
    theta: f64,
) -> Result<NeighborhoodCheck> {
    if !(theta > 0.0) {
        return Err(invalid("theta", "must be positive"));
    }
    let e = psi(prog, z, z_bar, lambda)?;
    Ok(NeighborhoodCheck {
        sqrt_psi: e.sqrt_psi(),
        radius: rho_radius(prog, &z.y, theta / lambda)?,
    })
}

/// Membership of `z` in the neighborhood `N_theta(zb, lam)`.
pub fn neighborhood_contains(
    prog: &ConvexProgram,
    z: &PrimalDual,
    z_bar: &PrimalDual,
    lambda: f64,
    theta: f64,
) -> Result<bool> {
    Ok(neighborhood_check(prog, z, z_bar, lambda, theta)?.contains())
}

/// Relaxed extragradient step: `zb - tau lam v` and `(1 - tau) lam`.
///
/// The dual block is formed as `(1 - tau) yb + tau (lam g + yb)+`, which equals
/// `yb + tau (lam g + (lam g + yb)-)` and stays nonnegative in floating point.
pub fn relaxed_anchor_update(
    prog: &ConvexProgram,
    z_tilde: &PrimalDual,
    z_bar: &PrimalDual,
    lambda: f64,
    tau: f64,
) -> Result<(PrimalDual, f64)> {
    check_lambda(lambda)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid("tau", format!("must lie in [0, 1], got {tau}")));
    }
    check_point(prog.n(), prog.m(), z_tilde)?;
    check_point(prog.n(), prog.m(), z_bar)?;
    check_dual_feasible(z_tilde)?;
    if tau == 0.0 {
        return Ok((z_bar.clone(), lambda));
    }
    let s = prog.saddle_value(z_tilde)?;
    let x = &z_bar.x - &s.primal_block * (tau * lambda);
    let shifted = -&s.dual_block * lambda + &z_bar.y;
    let y = z_bar
        .y
        .zip_map(&shifted, |yb, sh| (1.0 - tau) * yb + tau * pos(sh));
    Ok((PrimalDual::new(x, y), (1.0 - tau) * lambda))
}
