//! Relaxation parameters, the initial stepsize and worst-case iteration budgets.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::decimal;
use crate::error::{invalid, Result};
use crate::error_measure::{neighborhood_contains, rho_radius};
use crate::problem::{ConvexProgram, PrimalDual};
use crate::saddle::saddle_operator;

fn check_sigma_theta(sigma: f64, theta: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(invalid("sigma", format!("must lie in (0, 1), got {sigma}")));
    }
    if !(theta > 0.0 && theta <= 0.25) {
        return Err(invalid("theta", format!("must lie in (0, 1/4], got {theta}")));
    }
    Ok(())
}

/// The positive root `h` of `theta (1 + h) (1 + h (1 + 1/sigma))^2 = 1` and
/// `tau = h / (1 + h)`.
pub fn derive_relaxation(sigma: f64, theta: f64) -> Result<(f64, f64)> {
    check_sigma_theta(sigma, theta)?;
    let k = 1.0 + 1.0 / sigma;
    let phi = |h: f64| theta * (1.0 + h) * (1.0 + h * k).powi(2) - 1.0;
    // phi(0) = theta - 1 < 0 and phi(1/theta) > 0.
    let (mut lo, mut hi) = (0.0_f64, 1.0 / theta);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let h = if phi(lo).abs() <= phi(hi).abs() { lo } else { hi };
    Ok((h, h / (1.0 + h)))
}

/// `lambda_1` making `z0` lie in `N_{theta^2}(z0, lambda_1)`: the positive root
/// of `(2 |Lg| |S0|^2 / 3) l^3 + ((L0 + <Lg, |y0|>)/2 |S0|) l^2 = theta^2`,
/// shrunk by a relative `1e-10` so that the membership test is not decided
/// by rounding. Returns `None` when `S(z0) = 0`.
pub fn initial_lambda(prog: &ConvexProgram, z0: &PrimalDual, theta: f64) -> Result<Option<f64>> {
    if !(theta > 0.0) {
        return Err(invalid("theta", "must be positive"));
    }
    if !z0.dual_feasible() {
        return Err(invalid("y0", "must be nonnegative"));
    }
    let s0 = saddle_operator(prog, z0)?.norm();
    if s0 == 0.0 {
        return Ok(None);
    }
    let c3 = 2.0 * prog.lg_norm() * s0 * s0 / 3.0;
    let c2 = 0.5 * (prog.l0() + prog.lg_dot_abs(&z0.y)) * s0;
    let t2 = theta * theta;
    let cubic = |l: f64| (c3 * l + c2) * l * l - t2;
    // Each term alone reaches theta^2 no later than the root does.
    let mut hi = (t2 / c3).cbrt();
    if c2 > 0.0 {
        hi = hi.min((t2 / c2).sqrt());
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cubic(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = lo * (1.0 - 1e-10);
    debug_assert!(neighborhood_contains(prog, z0, z0, lambda, t2)?);
    Ok(Some(lambda))
}

/// Worst-case iteration counts for reaching `(delta, eps)` with a pointwise
/// (`pointwise`) or ergodic (`ergodic`) certificate, with the constants they
/// are built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub pointwise: u64,
    pub ergodic: u64,
    #[serde(with = "decimal::scalar")]
    pub eta: f64,
    #[serde(with = "decimal::scalar")]
    pub c: f64,
    #[serde(with = "decimal::scalar")]
    pub rho_bar: f64,
}

#[derive(Clone, Debug)]
pub struct BudgetInputs<'a> {
    pub y0: &'a DVector<f64>,
    pub d0: f64,
    pub lambda1: f64,
    pub sigma: f64,
    pub theta: f64,
    pub tau: f64,
    pub delta: f64,
    pub eps: f64,
}

fn ceil_count(v: f64) -> u64 {
    if v <= 0.0 {
        0
    } else if v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v.ceil() as u64
    }
}

fn log_plus(v: f64) -> f64 {
    v.ln().max(0.0)
}

/// `eta = theta^2 / (sigma c)` with
/// `c = (L0 + <Lg, |y0|>)/2 + [1/2 + (1/2 + 2 sigma/3)/sqrt(1 - sigma^2)] d0 |Lg|`.
pub fn large_step_constant(prog: &ConvexProgram, y0: &DVector<f64>, d0: f64, sigma: f64, theta: f64) -> (f64, f64) {
    let c = 0.5 * (prog.l0() + prog.lg_dot_abs(y0))
        + (0.5 + (0.5 + 2.0 * sigma / 3.0) / (1.0 - sigma * sigma).sqrt()) * d0 * prog.lg_norm();
    (c, theta * theta / (sigma * c))
}

pub fn complexity_budget(prog: &ConvexProgram, inp: &BudgetInputs<'_>) -> Result<Budget> {
    check_sigma_theta(inp.sigma, inp.theta)?;
    for (name, v) in [
        ("d0", inp.d0),
        ("lambda1", inp.lambda1),
        ("tau", inp.tau),
        ("delta", inp.delta),
        ("eps", inp.eps),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(name, format!("must be positive and finite, got {v}")));
        }
    }
    if inp.tau >= 1.0 {
        return Err(invalid("tau", "must be below 1"));
    }
    let (sigma, theta, tau, d0) = (inp.sigma, inp.theta, inp.tau, inp.d0);
    let (delta, eps, lambda1) = (inp.delta, inp.eps, inp.lambda1);
    let (c, eta) = large_step_constant(prog, inp.y0, d0, sigma, theta);
    let rho_bar = rho_radius(prog, &DVector::zeros(prog.m()), theta * theta / lambda1)?;

    let s2 = 1.0 - sigma * sigma;
    let log_term = log_plus((1.0 + 1.0 / sigma) * rho_bar / (delta * lambda1))
        .max(log_plus(rho_bar * rho_bar / (2.0 * eps * lambda1)))
        / (1.0 / (1.0 - tau)).ln();
    let tail = ceil_count(log_term);

    let pt = (d0 * d0 / (delta * tau * (1.0 - sigma) * eta))
        .max(sigma.powf(4.0 / 3.0) * d0 * d0 / (eps.powf(2.0 / 3.0) * tau * s2 * (2.0 * eta).powf(2.0 / 3.0)));
    let erg = (2f64.powf(2.0 / 3.0) * d0.powf(4.0 / 3.0)
        / (delta.powf(2.0 / 3.0) * tau * (eta * (1.0 - sigma).sqrt()).powf(2.0 / 3.0)))
    .max(2f64.powf(2.0 / 3.0) * d0 * d0 / (eps.powf(2.0 / 3.0) * tau * (eta * s2).powf(2.0 / 3.0)));

    Ok(Budget {
        pointwise: ceil_count(pt).saturating_mul(2).saturating_add(tail),
        ergodic: ceil_count(erg).saturating_mul(2).saturating_add(tail),
        eta,
        c,
        rho_bar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::toy::*;

    #[test]
    fn relaxation_for_default_parameters() {
        let (h, tau) = derive_relaxation(0.5, 0.25).unwrap();
        assert!((h - 0.260_469_837_248_078_2).abs() < 1e-14);
        assert!((tau - 0.206_645_037_866_791_94).abs() < 1e-14);
        assert!((0.25 * (1.0 + h) * (1.0 + 3.0 * h).powi(2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn larger_theta_gives_smaller_h() {
        let mut prev = f64::INFINITY;
        for k in 1..=50 {
            let theta = 0.25 * k as f64 / 50.0;
            let (h, _) = derive_relaxation(0.3, theta).unwrap();
            let resid = theta * (1.0 + h) * (1.0 + h * (1.0 + 1.0 / 0.3)).powi(2) - 1.0;
            assert!(resid.abs() < 1e-12);
            assert!(h < prev);
            prev = h;
        }
        assert!(derive_relaxation(0.5, 0.3).is_err());
        assert!(derive_relaxation(1.0, 0.2).is_err());
    }

    #[test]
    fn initial_lambda_cube_root_example() {
        // |S(z0)| = 1 at z0 = (1, 0): grad f = 1, g = 0. Lg = 3, L0 = 0.
        let p = half_square_affine(3.0);
        let z0 = PrimalDual::from_slices(&[1.0], &[0.0]);
        let l = initial_lambda(&p, &z0, 0.25).unwrap().unwrap();
        let exact = (1.0f64 / 32.0).cbrt();
        assert!((l - 0.314_980_262_473_718_3).abs() < 2e-10 * exact);
        assert!(l <= exact);
        assert!(neighborhood_contains(&p, &z0, &z0, l, 0.0625).unwrap());
    }

    #[test]
    fn initial_lambda_none_at_zero_operator() {
        let p = zero_identity();
        assert!(initial_lambda(&p, &PrimalDual::from_slices(&[0.0], &[0.0]), 0.25)
            .unwrap()
            .is_none());
    }

    #[test]
    fn budget_constants_example() {
        let p = half_square_affine(3.0);
        let y0 = DVector::zeros(1);
        let (_, tau) = derive_relaxation(0.5, 0.25).unwrap();
        let inp = BudgetInputs {
            y0: &y0,
            d0: 1.0,
            lambda1: 0.3,
            sigma: 0.5,
            theta: 0.25,
            tau,
            delta: 1e-3,
            eps: 1e-3,
        };
        let b = complexity_budget(&p, &inp).unwrap();
        assert!((b.c - 4.386_751_345_948_128_8).abs() < 1e-14);
        assert!((b.eta - 0.028_494_890_670_167_031).abs() < 1e-15);
        let looser = complexity_budget(&p, &BudgetInputs { delta: 2e-3, eps: 2e-3, ..inp.clone() }).unwrap();
        assert!(looser.pointwise <= b.pointwise && looser.ergodic <= b.ergodic);
    }
}
