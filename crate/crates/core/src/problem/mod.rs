//! Smooth convex programs `min f(x) s.t. g(x) <= 0` and their oracles.
//!
//! A [`ConvexProgram`] bundles first- and second-order oracles for `f` and
//! `g = (g_1, ..., g_m)` together with declared Lipschitz constants of the
//! Hessians (`L0` for `f`, `Lg = (L_1, ..., L_m)` for the constraints). The
//! declared constants are upper bounds supplied by the caller or by a
//! registry family; [`ConvexProgram::validate_sampled`] can only gather
//! evidence for them.

mod registry;

pub use registry::{
    builtin_problem, KnownKktParams, ProblemDescriptor, QuadSoftplusParams, SmoothedBallParams,
    BALL_HESSIAN_LIPSCHITZ, SOFTPLUS_THIRD_DERIVATIVE_MAX,
};

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Value, gradient and Hessian of the objective at a point.
#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Values, Jacobian-transpose (`n x m`, column `i` is `grad g_i`) and
/// Hessians of the constraints at a point.
#[derive(Clone, Debug)]
pub struct ConstraintEval {
    pub values: DVector<f64>,
    pub jacobian_t: DMatrix<f64>,
    pub hessians: Vec<DMatrix<f64>>,
}

/// Differential oracles of a smooth program. Implementations must be pure
/// functions of `x`.
pub trait Oracles: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn objective(&self, x: &DVector<f64>) -> ObjectiveEval;
    fn constraints(&self, x: &DVector<f64>) -> ConstraintEval;

    fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.objective(x).value
    }

    fn constraint_values(&self, x: &DVector<f64>) -> DVector<f64> {
        self.constraints(x).values
    }
}

type ObjectiveFn = dyn Fn(&DVector<f64>) -> ObjectiveEval + Send + Sync;
type ConstraintFn = dyn Fn(&DVector<f64>) -> ConstraintEval + Send + Sync;

/// Oracles given by closures. Handy for small hand-written programs.
pub struct FnOracles {
    n: usize,
    m: usize,
    objective: Box<ObjectiveFn>,
    constraints: Box<ConstraintFn>,
}

impl FnOracles {
    pub fn new(
        n: usize,
        m: usize,
        objective: impl Fn(&DVector<f64>) -> ObjectiveEval + Send + Sync + 'static,
        constraints: impl Fn(&DVector<f64>) -> ConstraintEval + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            m,
            objective: Box::new(objective),
            constraints: Box::new(constraints),
        }
    }
}

impl fmt::Debug for FnOracles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnOracles")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl Oracles for FnOracles {
    fn dim(&self) -> usize {
        self.n
    }

    fn num_constraints(&self) -> usize {
        self.m
    }

    fn objective(&self, x: &DVector<f64>) -> ObjectiveEval {
        (self.objective)(x)
    }

    fn constraints(&self, x: &DVector<f64>) -> ConstraintEval {
        (self.constraints)(x)
    }
}

/// A point `z = (x, y)` of `R^n x R^m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalDual {
    #[serde(with = "dvec_serde")]
    pub x: DVector<f64>,
    #[serde(with = "dvec_serde")]
    pub y: DVector<f64>,
}

impl PrimalDual {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Self {
        Self { x, y }
    }

    pub fn from_slices(x: &[f64], y: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(x), DVector::from_column_slice(y))
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self::new(DVector::zeros(n), DVector::zeros(m))
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    /// `(x, y)` stacked into one vector of length `n + m`.
    pub fn stacked(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.n() + self.m());
        v.rows_mut(0, self.n()).copy_from(&self.x);
        v.rows_mut(self.n(), self.m()).copy_from(&self.y);
        v
    }

    pub fn from_stacked(v: &DVector<f64>, n: usize) -> Self {
        let m = v.len() - n;
        Self::new(v.rows(0, n).into_owned(), v.rows(n, m).into_owned())
    }

    pub fn norm_squared(&self) -> f64 {
        self.x.norm_squared() + self.y.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn sub(&self, other: &PrimalDual) -> PrimalDual {
        PrimalDual::new(&self.x - &other.x, &self.y - &other.y)
    }

    pub fn dist(&self, other: &PrimalDual) -> f64 {
        self.sub(other).norm()
    }

    pub fn dot(&self, other: &PrimalDual) -> f64 {
        self.x.dot(&other.x) + self.y.dot(&other.y)
    }

    /// True when every dual component is nonnegative.
    pub fn dual_feasible(&self) -> bool {
        self.y.iter().all(|&v| v >= 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }
}

pub(crate) mod dvec_serde {
    use nalgebra::DVector;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        crate::decimal::vec::serialize(v.as_slice(), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        crate::decimal::vec::deserialize(d).map(DVector::from_vec)
    }
}

/// A smooth convex program with declared Hessian-Lipschitz constants.
#[derive(Clone)]
pub struct ConvexProgram {
    oracles: Arc<dyn Oracles>,
    l0: f64,
    lg: DVector<f64>,
    descriptor: Option<ProblemDescriptor>,
    known_solution: Option<PrimalDual>,
}

impl fmt::Debug for ConvexProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexProgram")
            .field("n", &self.n())
            .field("m", &self.m())
            .field("l0", &self.l0)
            .field("lg", &self.lg.as_slice())
            .field("descriptor", &self.descriptor)
            .finish()
    }
}

impl ConvexProgram {
    /// Wraps oracles with declared Lipschitz constants.
    ///
    /// At least one constraint constant must be strictly positive; overestimates
    /// are always admissible, so affine constraints may declare any positive value.
    pub fn new(oracles: impl Oracles + 'static, l0: f64, lg: Vec<f64>) -> Result<Self> {
        Self::from_arc(Arc::new(oracles), l0, lg)
    }

    pub fn from_arc(oracles: Arc<dyn Oracles>, l0: f64, lg: Vec<f64>) -> Result<Self> {
        let (n, m) = (oracles.dim(), oracles.num_constraints());
        if n == 0 {
            return Err(invalid("n", "must be positive"));
        }
        if m == 0 {
            return Err(invalid("m", "must be positive"));
        }
        if lg.len() != m {
            return Err(Error::DimensionMismatch {
                context: "Lg",
                expected: m,
                got: lg.len(),
            });
        }
        if !(l0.is_finite() && l0 >= 0.0) {
            return Err(invalid("L0", "must be finite and nonnegative"));
        }
        if lg.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(invalid("Lg", "entries must be finite and nonnegative"));
        }
        if lg.iter().all(|&l| l == 0.0) {
            return Err(invalid("Lg", "at least one entry must be strictly positive"));
        }
        Ok(Self {
            oracles,
            l0,
            lg: DVector::from_vec(lg),
            descriptor: None,
            known_solution: None,
        })
    }

    pub fn with_descriptor(mut self, d: ProblemDescriptor) -> Self {
        self.descriptor = Some(d);
        self
    }

    pub fn with_known_solution(mut self, z: PrimalDual) -> Self {
        self.known_solution = Some(z);
        self
    }

    pub fn n(&self) -> usize {
        self.oracles.dim()
    }

    pub fn m(&self) -> usize {
        self.oracles.num_constraints()
    }

    pub fn l0(&self) -> f64 {
        self.l0
    }

    pub fn lg(&self) -> &DVector<f64> {
        &self.lg
    }

    pub fn lg_norm(&self) -> f64 {
        self.lg.norm()
    }

    /// `<Lg, |y|>`.
    pub fn lg_dot_abs(&self, y: &DVector<f64>) -> f64 {
        self.lg.iter().zip(y.iter()).map(|(l, v)| l * v.abs()).sum()
    }

    pub fn descriptor(&self) -> Option<&ProblemDescriptor> {
        self.descriptor.as_ref()
    }

    /// The constructed KKT point, for families that build one.
    pub fn known_solution(&self) -> Option<&PrimalDual> {
        self.known_solution.as_ref()
    }

    pub fn oracles(&self) -> &dyn Oracles {
        self.oracles.as_ref()
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "primal point",
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> Result<ObjectiveEval> {
        self.check_x(x)?;
        let e = self.oracles.objective(x);
        if !e.value.is_finite() {
            return Err(Error::NonFinite { what: "f(x)" });
        }
        if !all_finite(e.gradient.iter()) {
            return Err(Error::NonFinite { what: "grad f(x)" });
        }
        if !all_finite(e.hessian.iter()) {
            return Err(Error::NonFinite { what: "hess f(x)" });
        }
        Ok(e)
    }

    pub fn constraints(&self, x: &DVector<f64>) -> Result<ConstraintEval> {
        self.check_x(x)?;
        let e = self.oracles.constraints(x);
        if e.values.len() != self.m() {
            return Err(Error::DimensionMismatch {
                context: "g(x)",
                expected: self.m(),
                got: e.values.len(),
            });
        }
        if !all_finite(e.values.iter()) {
            return Err(Error::NonFinite { what: "g(x)" });
        }
        if !all_finite(e.jacobian_t.iter()) {
            return Err(Error::NonFinite { what: "grad g(x)" });
        }
        if e.hessians.iter().any(|h| !all_finite(h.iter())) {
            return Err(Error::NonFinite { what: "hess g_i(x)" });
        }
        Ok(e)
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_x(x)?;
        let v = self.oracles.objective_value(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { what: "f(x)" })
        }
    }

    pub fn constraint_values(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_x(x)?;
        let v = self.oracles.constraint_values(x);
        if all_finite(v.iter()) {
            Ok(v)
        } else {
            Err(Error::NonFinite { what: "g(x)" })
        }
    }

    /// Samples points in a box of half-width `radius` around `center` and
    /// collects evidence for convexity and the declared Lipschitz constants.
    pub fn validate_sampled(
        &self,
        center: &DVector<f64>,
        radius: f64,
        samples: usize,
        seed: u64,
    ) -> Result<ValidationReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.n();
        let draw = |rng: &mut ChaCha8Rng| {
            DVector::from_fn(n, |i, _| center[i] + rng.gen_range(-radius..=radius))
        };
        let mut report = ValidationReport {
            min_hessian_eigenvalue: f64::INFINITY,
            max_l0_ratio: 0.0,
            max_lg_ratio: vec![0.0; self.m()],
        };
        for _ in 0..samples {
            let a = draw(&mut rng);
            // Short and long separations both matter for the Lipschitz ratio.
            let scale = if rng.gen_bool(0.5) { 1e-3 } else { 1.0 };
            let b = DVector::from_fn(n, |i, _| a[i] + scale * rng.gen_range(-radius..=radius));
            let (fa, fb) = (self.objective(&a)?, self.objective(&b)?);
            let (ga, gb) = (self.constraints(&a)?, self.constraints(&b)?);
            report.min_hessian_eigenvalue = report
                .min_hessian_eigenvalue
                .min(min_eigenvalue(&fa.hessian));
            for h in &ga.hessians {
                report.min_hessian_eigenvalue = report.min_hessian_eigenvalue.min(min_eigenvalue(h));
            }
            let dist = (&a - &b).norm();
            if dist == 0.0 {
                continue;
            }
            let r0 = spectral_norm(&(&fa.hessian - &fb.hessian)) / dist;
            report.max_l0_ratio = report.max_l0_ratio.max(r0);
            for (i, ratio) in report.max_lg_ratio.iter_mut().enumerate() {
                let r = spectral_norm(&(&ga.hessians[i] - &gb.hessians[i])) / dist;
                *ratio = ratio.max(r);
            }
        }
        Ok(report)
    }
}

/// Evidence gathered by [`ConvexProgram::validate_sampled`].
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub min_hessian_eigenvalue: f64,
    pub max_l0_ratio: f64,
    pub max_lg_ratio: Vec<f64>,
}

impl ValidationReport {
    /// No sampled evidence against convexity or the declared constants.
    pub fn consistent_with(&self, prog: &ConvexProgram, slack: f64) -> bool {
        self.min_hessian_eigenvalue >= -slack
            && self.max_l0_ratio <= prog.l0() + slack
            && self
                .max_lg_ratio
                .iter()
                .zip(prog.lg().iter())
                .all(|(r, l)| *r <= l + slack)
    }
}

pub(crate) fn all_finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
    it.all(|v| v.is_finite())
}

pub(crate) fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let sym = (h + h.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub(crate) fn spectral_norm(h: &DMatrix<f64>) -> f64 {
    let sym = (h + h.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.amax()
}

/// Residual blocks of the KKT system at `z`.
#[derive(Clone, Debug)]
pub struct KktResidual {
    /// `grad f(x) + grad g(x) y`
    pub stationarity: DVector<f64>,
    /// `max(g(x), 0)`
    pub primal_violation: DVector<f64>,
    /// `max(-y, 0)`
    pub dual_violation: DVector<f64>,
    /// `|<y, g(x)>|`
    pub comp_gap: f64,
}

impl KktResidual {
    pub fn max_abs(&self) -> f64 {
        self.stationarity
            .amax()
            .max(self.primal_violation.amax())
            .max(self.dual_violation.amax())
            .max(self.comp_gap)
    }
}

pub fn kkt_residual(prog: &ConvexProgram, z: &PrimalDual) -> Result<KktResidual> {
    if z.m() != prog.m() {
        return Err(Error::DimensionMismatch {
            context: "dual point",
            expected: prog.m(),
            got: z.m(),
        });
    }
    let fe = prog.objective(&z.x)?;
    let ge = prog.constraints(&z.x)?;
    Ok(KktResidual {
        stationarity: fe.gradient + &ge.jacobian_t * &z.y,
        primal_violation: ge.values.map(|g| g.max(0.0)),
        dual_violation: z.y.map(|y| (-y).max(0.0)),
        comp_gap: z.y.dot(&ge.values).abs(),
    })
}

#[cfg(test)]
pub(crate) mod toy {
    //! Small hand-written programs shared by unit tests.
    use super::*;

    /// `f(x) = x^2/2`, `g(x) = x - 1`; `Lg` declared as `lg` (affine, so any
    /// positive value is a valid bound).
    pub fn half_square_affine(lg: f64) -> ConvexProgram {
        let o = FnOracles::new(
            1,
            1,
            |x| ObjectiveEval {
                value: 0.5 * x[0] * x[0],
                gradient: DVector::from_element(1, x[0]),
                hessian: DMatrix::from_element(1, 1, 1.0),
            },
            |x| ConstraintEval {
                values: DVector::from_element(1, x[0] - 1.0),
                jacobian_t: DMatrix::from_element(1, 1, 1.0),
                hessians: vec![DMatrix::zeros(1, 1)],
            },
        );
        ConvexProgram::new(o, 0.0, vec![lg]).unwrap()
    }

    pub fn sigmoid(t: f64) -> f64 {
        1.0 / (1.0 + (-t).exp())
    }

    /// `f(x) = log(1 + e^x)`, `g(x) = -x`.
    pub fn softplus_negx() -> ConvexProgram {
        let o = FnOracles::new(
            1,
            1,
            |x| {
                let s = sigmoid(x[0]);
                ObjectiveEval {
                    value: x[0].exp().ln_1p(),
                    gradient: DVector::from_element(1, s),
                    hessian: DMatrix::from_element(1, 1, s * (1.0 - s)),
                }
            },
            |x| ConstraintEval {
                values: DVector::from_element(1, -x[0]),
                jacobian_t: DMatrix::from_element(1, 1, -1.0),
                hessians: vec![DMatrix::zeros(1, 1)],
            },
        );
        ConvexProgram::new(o, SOFTPLUS_THIRD_DERIVATIVE_MAX, vec![1.0]).unwrap()
    }

    /// `f = 0`, `g(x) = x`.
    pub fn zero_identity() -> ConvexProgram {
        let o = FnOracles::new(
            1,
            1,
            |_| ObjectiveEval {
                value: 0.0,
                gradient: DVector::zeros(1),
                hessian: DMatrix::zeros(1, 1),
            },
            |x| ConstraintEval {
                values: DVector::from_element(1, x[0]),
                jacobian_t: DMatrix::from_element(1, 1, 1.0),
                hessians: vec![DMatrix::zeros(1, 1)],
            },
        );
        ConvexProgram::new(o, 0.0, vec![1.0]).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::toy::*;
    use super::*;

    #[test]
    fn interior_kkt_point_has_zero_residual() {
        let p = half_square_affine(1.0);
        let r = kkt_residual(&p, &PrimalDual::from_slices(&[0.0], &[0.0])).unwrap();
        assert_eq!(r.max_abs(), 0.0);
    }

    #[test]
    fn residual_blocks_at_infeasible_point() {
        let p = half_square_affine(1.0);
        let r = kkt_residual(&p, &PrimalDual::from_slices(&[2.0], &[0.0])).unwrap();
        assert_eq!(r.stationarity[0], 2.0);
        assert_eq!(r.primal_violation[0], 1.0);
        assert_eq!(r.dual_violation[0], 0.0);
        assert_eq!(r.comp_gap, 0.0);
    }

    #[test]
    fn softplus_stationarity_is_one_half() {
        let p = softplus_negx();
        let r = kkt_residual(&p, &PrimalDual::from_slices(&[0.0], &[0.0])).unwrap();
        assert_eq!(r.stationarity[0], 0.5);
        assert_eq!(r.primal_violation[0], 0.0);
        assert_eq!(r.dual_violation[0], 0.0);
        assert_eq!(r.comp_gap, 0.0);
    }

    #[test]
    fn non_finite_oracle_output_is_reported() {
        let o = FnOracles::new(
            1,
            1,
            |x| ObjectiveEval {
                value: x[0].ln(),
                gradient: DVector::from_element(1, 1.0 / x[0]),
                hessian: DMatrix::from_element(1, 1, 0.0),
            },
            |x| ConstraintEval {
                values: DVector::from_element(1, x[0]),
                jacobian_t: DMatrix::from_element(1, 1, 1.0),
                hessians: vec![DMatrix::zeros(1, 1)],
            },
        );
        let p = ConvexProgram::new(o, 0.0, vec![1.0]).unwrap();
        let err = kkt_residual(&p, &PrimalDual::from_slices(&[-1.0], &[0.0])).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn all_zero_constraint_constants_rejected() {
        let o = FnOracles::new(
            1,
            1,
            |_| ObjectiveEval {
                value: 0.0,
                gradient: DVector::zeros(1),
                hessian: DMatrix::zeros(1, 1),
            },
            |x| ConstraintEval {
                values: DVector::from_element(1, x[0]),
                jacobian_t: DMatrix::from_element(1, 1, 1.0),
                hessians: vec![DMatrix::zeros(1, 1)],
            },
        );
        assert!(ConvexProgram::new(o, 0.0, vec![0.0]).is_err());
    }

    #[test]
    fn stacked_round_trip() {
        let z = PrimalDual::from_slices(&[1.0, 2.0], &[3.0]);
        assert_eq!(PrimalDual::from_stacked(&z.stacked(), 2), z);
    }
}
