//! Second-order Taylor models of `f` and `g` frozen at an expansion point.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::problem::{ConvexProgram, PrimalDual};
use crate::saddle::{check_point, SaddleMap, SaddleValue};

/// `f(x~) + <grad f(x~), d> + d' H d / 2` with `d = x - x~`, and the same for
/// every `g_i`.
#[derive(Clone, Debug)]
pub struct QuadraticModel {
    pub x_tilde: DVector<f64>,
    pub f_const: f64,
    pub f_linear: DVector<f64>,
    pub f_hessian: DMatrix<f64>,
    pub g_const: DVector<f64>,
    /// `n x m`; column `i` is `grad g_i(x~)`.
    pub g_linear: DMatrix<f64>,
    pub g_hessians: Vec<DMatrix<f64>>,
}

pub fn build_model(prog: &ConvexProgram, x_tilde: &DVector<f64>) -> Result<QuadraticModel> {
    let fe = prog.objective(x_tilde)?;
    let ge = prog.constraints(x_tilde)?;
    Ok(QuadraticModel {
        x_tilde: x_tilde.clone(),
        f_const: fe.value,
        f_linear: fe.gradient,
        f_hessian: fe.hessian,
        g_const: ge.values,
        g_linear: ge.jacobian_t,
        g_hessians: ge.hessians,
    })
}

impl QuadraticModel {
    pub fn n(&self) -> usize {
        self.x_tilde.len()
    }

    pub fn m(&self) -> usize {
        self.g_const.len()
    }

    pub fn f_value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.x_tilde;
        self.f_const + self.f_linear.dot(&d) + 0.5 * d.dot(&(&self.f_hessian * &d))
    }

    pub fn f_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x - &self.x_tilde;
        &self.f_linear + &self.f_hessian * d
    }

    pub fn g_values(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x - &self.x_tilde;
        let mut out = &self.g_const + self.g_linear.tr_mul(&d);
        for (i, h) in self.g_hessians.iter().enumerate() {
            out[i] += 0.5 * d.dot(&(h * &d));
        }
        out
    }

    /// Columns are the model constraint gradients at `x`.
    pub fn g_jacobian_t(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x - &self.x_tilde;
        let mut out = self.g_linear.clone();
        for (i, h) in self.g_hessians.iter().enumerate() {
            let hd = h * &d;
            let mut col = out.column_mut(i);
            col += hd;
        }
        out
    }
}

pub fn model_saddle_operator(model: &QuadraticModel, z: &PrimalDual) -> SaddleValue {
    SaddleValue {
        primal_block: model.f_gradient(&z.x) + model.g_jacobian_t(&z.x) * &z.y,
        dual_block: -model.g_values(&z.x),
    }
}

impl SaddleMap for QuadraticModel {
    fn primal_dim(&self) -> usize {
        self.n()
    }

    fn dual_dim(&self) -> usize {
        self.m()
    }

    fn saddle_value(&self, z: &PrimalDual) -> Result<SaddleValue> {
        check_point(self.n(), self.m(), z)?;
        Ok(model_saddle_operator(self, z))
    }
}

/// Upper bound on `|S(x, y) - S_[x~](x, y)|`:
/// `((L0 + <Lg, |y|>)/2) r^2 + (|Lg|/6) r^3` with `r = |x - x~|`.
pub fn model_gap_bound(prog: &ConvexProgram, z: &PrimalDual, x_tilde: &DVector<f64>) -> f64 {
    let r = (&z.x - x_tilde).norm();
    0.5 * (prog.l0() + prog.lg_dot_abs(&z.y)) * r * r + prog.lg_norm() / 6.0 * r.powi(3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_problem, toy::*, ConstraintEval, FnOracles, ObjectiveEval};
    use crate::saddle::saddle_operator;
    use proptest::prelude::*;
    use serde_json::json;

    fn ball_1d() -> ConvexProgram {
        let o = FnOracles::new(
            1,
            1,
            |_| ObjectiveEval {
                value: 0.0,
                gradient: DVector::zeros(1),
                hessian: DMatrix::zeros(1, 1),
            },
            |x| {
                let phi = (1.0 + x[0] * x[0]).sqrt();
                ConstraintEval {
                    values: DVector::from_element(1, phi),
                    jacobian_t: DMatrix::from_element(1, 1, x[0] / phi),
                    hessians: vec![DMatrix::from_element(1, 1, phi.powi(-3))],
                }
            },
        );
        ConvexProgram::new(o, 0.0, vec![crate::problem::BALL_HESSIAN_LIPSCHITZ]).unwrap()
    }

    #[test]
    fn quadratic_objective_is_its_own_model() {
        let p = half_square_affine(1.0);
        let m = build_model(&p, &DVector::from_element(1, 0.7)).unwrap();
        for x in [-3.0, 0.0, 2.5] {
            let x = DVector::from_element(1, x);
            assert!((m.f_value(&x) - p.objective_value(&x).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn softplus_model_coefficients() {
        let p = softplus_negx();
        let m = build_model(&p, &DVector::zeros(1)).unwrap();
        assert!((m.f_const - 2f64.ln()).abs() < 1e-15);
        assert_eq!(m.f_linear[0], 0.5);
        assert_eq!(m.f_hessian[(0, 0)], 0.25);
        let z = PrimalDual::from_slices(&[1.0], &[0.0]);
        assert_eq!(model_saddle_operator(&m, &z).primal_block[0], 0.75);
    }

    #[test]
    fn ball_model_coefficients() {
        let m = build_model(&ball_1d(), &DVector::zeros(1)).unwrap();
        let x = DVector::from_element(1, 0.3);
        assert!((m.g_values(&x)[0] - (1.0 + 0.045)).abs() < 1e-15);
    }

    #[test]
    fn gap_bound_examples() {
        let p = half_square_affine(3.0);
        let z = PrimalDual::from_slices(&[1.0], &[0.0]);
        assert_eq!(model_gap_bound(&p, &z, &DVector::zeros(1)), 0.5);
        assert_eq!(model_gap_bound(&p, &z, &z.x), 0.0);
    }

    proptest! {
        #[test]
        fn model_matches_operator_at_expansion_point(seed in 0u64..30, y0 in 0.0..3.0f64, y1 in 0.0..3.0f64) {
            let p = builtin_problem("known_kkt", &json!({"n": 3, "m": 2, "seed": seed})).unwrap();
            let xt = DVector::from_vec(vec![0.2, -0.4, 0.9]);
            let m = build_model(&p, &xt).unwrap();
            let z = PrimalDual::new(xt, DVector::from_vec(vec![y0, y1]));
            let a = saddle_operator(&p, &z).unwrap().stacked();
            let b = model_saddle_operator(&m, &z).stacked();
            prop_assert!((a - b).amax() <= 1e-12);
        }

        #[test]
        fn gap_within_bound(seed in 0u64..30, d in proptest::collection::vec(-2.0..2.0f64, 3),
                            y in proptest::collection::vec(0.0..3.0f64, 2)) {
            let p = builtin_problem("known_kkt", &json!({"n": 3, "m": 2, "seed": seed})).unwrap();
            let xt = DVector::from_vec(vec![0.1, 0.5, -0.3]);
            let m = build_model(&p, &xt).unwrap();
            let z = PrimalDual::new(&xt + DVector::from_vec(d), DVector::from_vec(y));
            let gap = (saddle_operator(&p, &z).unwrap().stacked() - model_saddle_operator(&m, &z).stacked()).norm();
            prop_assert!(gap <= model_gap_bound(&p, &z, &xt) + 1e-10);
        }
    }
}
