//! Lagrangian, extended Lagrangian and the saddle-point operator
//! `S(x, y) = (grad f(x) + grad g(x) y, -g(x))`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problem::{ConvexProgram, PrimalDual};

/// Value of `S` at a point, split into primal and dual blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct SaddleValue {
    /// `grad f(x) + grad g(x) y`
    pub primal_block: DVector<f64>,
    /// `-g(x)`
    pub dual_block: DVector<f64>,
}

impl SaddleValue {
    pub fn stacked(&self) -> DVector<f64> {
        let (n, m) = (self.primal_block.len(), self.dual_block.len());
        let mut v = DVector::zeros(n + m);
        v.rows_mut(0, n).copy_from(&self.primal_block);
        v.rows_mut(n, m).copy_from(&self.dual_block);
        v
    }

    pub fn as_primal_dual(&self) -> PrimalDual {
        PrimalDual::new(self.primal_block.clone(), self.dual_block.clone())
    }

    pub fn norm(&self) -> f64 {
        (self.primal_block.norm_squared() + self.dual_block.norm_squared()).sqrt()
    }
}

/// Anything that evaluates a saddle operator of the form
/// `(grad_x L(x, y), -g(x))`: the true program or one of its quadratic models.
pub trait SaddleMap {
    fn primal_dim(&self) -> usize;
    fn dual_dim(&self) -> usize;
    fn saddle_value(&self, z: &PrimalDual) -> Result<SaddleValue>;
}

impl SaddleMap for ConvexProgram {
    fn primal_dim(&self) -> usize {
        self.n()
    }

    fn dual_dim(&self) -> usize {
        self.m()
    }

    fn saddle_value(&self, z: &PrimalDual) -> Result<SaddleValue> {
        saddle_operator(self, z)
    }
}

pub(crate) fn check_point(n: usize, m: usize, z: &PrimalDual) -> Result<()> {
    if z.n() != n {
        return Err(Error::DimensionMismatch {
            context: "primal point",
            expected: n,
            got: z.n(),
        });
    }
    if z.m() != m {
        return Err(Error::DimensionMismatch {
            context: "dual point",
            expected: m,
            got: z.m(),
        });
    }
    if !z.is_finite() {
        return Err(Error::NonFinite { what: "point" });
    }
    Ok(())
}

/// `f(x) + <y, g(x)>`.
pub fn lagrangian(prog: &ConvexProgram, z: &PrimalDual) -> Result<f64> {
    check_point(prog.n(), prog.m(), z)?;
    let f = prog.objective_value(&z.x)?;
    let g = prog.constraint_values(&z.x)?;
    Ok(f + z.y.dot(&g))
}

/// Value of the extended Lagrangian, which is `-inf` off the dual orthant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtendedValue {
    Finite(f64),
    NegInfinity,
}

impl ExtendedValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedValue::Finite(v) => Some(v),
            ExtendedValue::NegInfinity => None,
        }
    }
}

pub fn extended_lagrangian(prog: &ConvexProgram, z: &PrimalDual) -> Result<ExtendedValue> {
    check_point(prog.n(), prog.m(), z)?;
    if z.dual_feasible() {
        lagrangian(prog, z).map(ExtendedValue::Finite)
    } else {
        Ok(ExtendedValue::NegInfinity)
    }
}

pub fn saddle_operator(prog: &ConvexProgram, z: &PrimalDual) -> Result<SaddleValue> {
    check_point(prog.n(), prog.m(), z)?;
    let fe = prog.objective(&z.x)?;
    let ge = prog.constraints(&z.x)?;
    Ok(SaddleValue {
        primal_block: fe.gradient + ge.jacobian_t * &z.y,
        dual_block: -ge.values,
    })
}

/// Outcome of [`eps_saddle_subgradient_check`].
#[derive(Clone, Debug)]
pub struct SubgradientCheck {
    pub holds: bool,
    /// Smallest `lhs - rhs` over the samples (`+inf` if no sample was finite).
    pub worst_margin: f64,
    pub worst_sample: Option<usize>,
}

/// Checks `Lbar(x, y~) - Lbar(x~, y) >= <p, x - x~> + <q, y - y~> - eps` for
/// every sample `(x, y)`, with `v = (p, q)` stacked.
///
/// A sample with negative dual entries makes the left side `+inf` and is
/// trivially satisfied. The comparison allows rounding slack proportional to
/// the magnitudes involved.
pub fn eps_saddle_subgradient_check(
    prog: &ConvexProgram,
    z_tilde: &PrimalDual,
    v: &DVector<f64>,
    eps: f64,
    samples: &[PrimalDual],
) -> Result<SubgradientCheck> {
    let (n, m) = (prog.n(), prog.m());
    check_point(n, m, z_tilde)?;
    if v.len() != n + m {
        return Err(Error::DimensionMismatch {
            context: "v",
            expected: n + m,
            got: v.len(),
        });
    }
    let p = v.rows(0, n);
    let q = v.rows(n, m);
    let f_tilde = prog.objective_value(&z_tilde.x)?;
    let g_tilde = prog.constraint_values(&z_tilde.x)?;
    let y_tilde_dual_feasible = z_tilde.dual_feasible();

    let mut out = SubgradientCheck {
        holds: true,
        worst_margin: f64::INFINITY,
        worst_sample: None,
    };
    for (idx, s) in samples.iter().enumerate() {
        check_point(n, m, s)?;
        if !s.dual_feasible() {
            continue;
        }
        if !y_tilde_dual_feasible {
            // Lbar(., y~) is -inf everywhere: the inclusion can never hold.
            out.holds = false;
            out.worst_margin = f64::NEG_INFINITY;
            out.worst_sample = Some(idx);
            return Ok(out);
        }
        let l_x = prog.objective_value(&s.x)? + z_tilde.y.dot(&prog.constraint_values(&s.x)?);
        let l_y = f_tilde + s.y.dot(&g_tilde);
        let dx = &s.x - &z_tilde.x;
        let dy = &s.y - &z_tilde.y;
        let rhs_lin = p.dot(&dx) + q.dot(&dy);
        let margin = (l_x - l_y) - (rhs_lin - eps);
        let scale = 1.0 + l_x.abs() + l_y.abs() + rhs_lin.abs() + eps.abs();
        if margin < out.worst_margin {
            out.worst_margin = margin;
            out.worst_sample = Some(idx);
        }
        if margin < -1e-12 * scale {
            out.holds = false;
        }
    }
    Ok(out)
}

/// Sample points for [`eps_saddle_subgradient_check`]: half uniform in a box
/// of half-width `radius` around `z~`, half along `z~ -/+ t S(z~)` for
/// geometrically spread `t`. Dual blocks are clipped to the orthant.
pub fn saddle_samples(
    prog: &ConvexProgram,
    z_tilde: &PrimalDual,
    radius: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<PrimalDual>> {
    let s = saddle_operator(prog, z_tilde)?;
    let dir = s.as_primal_dual();
    let dir_norm = dir.norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let clip = |z: PrimalDual| PrimalDual::new(z.x, z.y.map(|v| v.max(0.0)));
    for k in 0..count {
        if k % 2 == 0 || dir_norm == 0.0 {
            let x = z_tilde.x.map(|c| c + rng.gen_range(-radius..=radius));
            let y = z_tilde.y.map(|c| c + rng.gen_range(-radius..=radius));
            out.push(clip(PrimalDual::new(x, y)));
        } else {
            let t = radius * 10f64.powf(rng.gen_range(-6.0..=0.0)) / dir_norm;
            let sign = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            // -S is a descent direction of Lbar(., y~) - Lbar(x~, .) in both blocks.
            let x = &z_tilde.x + &dir.x * (sign * t);
            let y = &z_tilde.y + &dir.y * (sign * t);
            out.push(clip(PrimalDual::new(x, y)));
        }
    }
    Ok(out)
}
