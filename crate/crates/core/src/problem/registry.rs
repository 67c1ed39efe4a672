//! Built-in problem families.
//!
//! Every family has a quadratic objective `f(x) = x'Qx/2 + c'x` (so `L0 = 0`)
//! and constraints drawn from two smooth convex shapes:
//!
//! * softplus: `g_i(x) = log(1 + exp(a_i'x - b_i)) - r_i`, with Hessian
//!   Lipschitz constant `|a_i|^3 * max_t |sigma''(t)|`;
//! * smoothed ball: `g_i(x) = sqrt(1 + |x - c_i|^2) - r_i`, with Hessian
//!   Lipschitz constant `48 / (25 sqrt 5)`.
//!
//! `known_kkt` builds a random instance around a prescribed KKT point.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{min_eigenvalue, ConstraintEval, ConvexProgram, ObjectiveEval, Oracles, PrimalDual};
use crate::decimal;
use crate::error::{invalid, Error, Result};

/// `max_t |s(1-s)(1-2s)|` with `s = sigmoid(t)`, attained at `s = 1/2 + 1/sqrt(12)`.
pub const SOFTPLUS_THIRD_DERIVATIVE_MAX: f64 = 0.096_225_044_864_937_63;

/// Sup over `u` of the third-derivative norm of `sqrt(1 + |u|^2)`, attained at `|u| = 1/2`.
pub const BALL_HESSIAN_LIPSCHITZ: f64 = 0.858_650_103_359_919_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSoftplusParams {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "Q", default, with = "decimal::opt_matrix", skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, with = "decimal::opt_vec", skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(with = "decimal::matrix")]
    pub a: Vec<Vec<f64>>,
    #[serde(default, with = "decimal::opt_vec", skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, with = "decimal::opt_vec", skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothedBallParams {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "Q", default, with = "decimal::opt_matrix", skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, with = "decimal::opt_vec", skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(with = "decimal::matrix")]
    pub centers: Vec<Vec<f64>>,
    #[serde(with = "decimal::vec")]
    pub radii: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnownKktParams {
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    /// Number of active constraints at the constructed solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<usize>,
}

/// JSON form `{"family": name, "params": {...}}` of a registry problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum ProblemDescriptor {
    QuadSoftplus(QuadSoftplusParams),
    SmoothedBall(SmoothedBallParams),
    KnownKkt(KnownKktParams),
}

#[derive(Deserialize)]
struct RawDescriptor {
    family: String,
    #[serde(default)]
    params: serde_json::Value,
}

fn parse_params<T: DeserializeOwned>(params: &serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(params).map_err(|e| {
        let path = e.path().to_string();
        Error::Descriptor {
            path: if path == "." {
                "params".into()
            } else {
                format!("params.{path}")
            },
            message: e.into_inner().to_string(),
        }
    })
}

impl ProblemDescriptor {
    pub fn family(&self) -> &'static str {
        match self {
            ProblemDescriptor::QuadSoftplus(_) => "quad_softplus",
            ProblemDescriptor::SmoothedBall(_) => "smoothed_ball",
            ProblemDescriptor::KnownKkt(_) => "known_kkt",
        }
    }

    /// Parses a family name and its parameter object, reporting the offending
    /// field path on failure.
    pub fn from_parts(family: &str, params: &serde_json::Value) -> Result<Self> {
        let params = if params.is_null() {
            &serde_json::Value::Object(Default::default())
        } else {
            params
        };
        match family {
            "quad_softplus" => parse_params(params).map(ProblemDescriptor::QuadSoftplus),
            "smoothed_ball" => parse_params(params).map(ProblemDescriptor::SmoothedBall),
            "known_kkt" => parse_params(params).map(ProblemDescriptor::KnownKkt),
            other => Err(Error::UnknownProblem(other.to_string())),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawDescriptor = {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(|e| Error::Descriptor {
                path: e.path().to_string(),
                message: e.into_inner().to_string(),
            })?
        };
        Self::from_parts(&raw.family, &raw.params)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serialization is infallible")
    }

    pub fn build(&self) -> Result<ConvexProgram> {
        let prog = match self {
            ProblemDescriptor::QuadSoftplus(p) => build_quad_softplus(p)?,
            ProblemDescriptor::SmoothedBall(p) => build_smoothed_ball(p)?,
            ProblemDescriptor::KnownKkt(p) => build_known_kkt(p)?,
        };
        Ok(prog.with_descriptor(self.clone()))
    }
}

/// Looks up a registry family by name and builds it from a JSON parameter map.
pub fn builtin_problem(name: &str, params: &serde_json::Value) -> Result<ConvexProgram> {
    ProblemDescriptor::from_parts(name, params)?.build()
}

#[derive(Clone, Debug)]
enum ConstraintTerm {
    Softplus {
        a: DVector<f64>,
        b: f64,
        r: f64,
    },
    Ball {
        center: DVector<f64>,
        r: f64,
    },
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl ConstraintTerm {
    fn lipschitz(&self) -> f64 {
        match self {
            ConstraintTerm::Softplus { a, .. } => a.norm().powi(3) * SOFTPLUS_THIRD_DERIVATIVE_MAX,
            ConstraintTerm::Ball { .. } => BALL_HESSIAN_LIPSCHITZ,
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            ConstraintTerm::Softplus { a, b, r } => softplus(a.dot(x) - b) - r,
            ConstraintTerm::Ball { center, r } => (1.0 + (x - center).norm_squared()).sqrt() - r,
        }
    }

    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        match self {
            ConstraintTerm::Softplus { a, b, r } => {
                let t = a.dot(x) - b;
                let s = sigmoid(t);
                (softplus(t) - r, a * s, a * a.transpose() * (s * (1.0 - s)))
            }
            ConstraintTerm::Ball { center, r } => {
                let u = x - center;
                let phi = (1.0 + u.norm_squared()).sqrt();
                let n = u.len();
                let hess = DMatrix::identity(n, n) / phi - &u * u.transpose() / phi.powi(3);
                (phi - r, &u / phi, hess)
            }
        }
    }
}

/// Quadratic objective plus a list of smooth convex constraint terms.
#[derive(Clone, Debug)]
struct CompositeProgram {
    q: DMatrix<f64>,
    c: DVector<f64>,
    terms: Vec<ConstraintTerm>,
}

impl Oracles for CompositeProgram {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn num_constraints(&self) -> usize {
        self.terms.len()
    }

    fn objective(&self, x: &DVector<f64>) -> ObjectiveEval {
        let qx = &self.q * x;
        ObjectiveEval {
            value: 0.5 * x.dot(&qx) + self.c.dot(x),
            gradient: qx + &self.c,
            hessian: self.q.clone(),
        }
    }

    fn constraints(&self, x: &DVector<f64>) -> ConstraintEval {
        let (n, m) = (self.dim(), self.num_constraints());
        let mut values = DVector::zeros(m);
        let mut jacobian_t = DMatrix::zeros(n, m);
        let mut hessians = Vec::with_capacity(m);
        for (i, term) in self.terms.iter().enumerate() {
            let (v, g, h) = term.eval(x);
            values[i] = v;
            jacobian_t.set_column(i, &g);
            hessians.push(h);
        }
        ConstraintEval {
            values,
            jacobian_t,
            hessians,
        }
    }

    fn objective_value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    fn constraint_values(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.terms.len(), self.terms.iter().map(|t| t.value(x)))
    }
}

impl CompositeProgram {
    fn into_program(self) -> Result<ConvexProgram> {
        let lg = self.terms.iter().map(ConstraintTerm::lipschitz).collect();
        ConvexProgram::new(self, 0.0, lg)
    }
}

fn check_len(name: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(invalid(
            name,
            format!("expected length {expected}, got {got}"),
        ));
    }
    Ok(())
}

fn check_dims(n: usize, m: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid("params.n", "must be positive"));
    }
    if m == 0 {
        return Err(invalid("params.m", "must be positive"));
    }
    Ok(())
}

fn psd_matrix(rows: &Option<Vec<Vec<f64>>>, n: usize) -> Result<DMatrix<f64>> {
    let Some(rows) = rows else {
        return Ok(DMatrix::identity(n, n));
    };
    check_len("params.Q", rows.len(), n)?;
    for (i, row) in rows.iter().enumerate() {
        check_len(&format!("params.Q[{i}]"), row.len(), n)?;
    }
    let q = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let scale = q.amax().max(1.0);
    if (&q - q.transpose()).amax() > 1e-12 * scale {
        return Err(invalid("params.Q", "must be symmetric"));
    }
    let lmin = min_eigenvalue(&q);
    if lmin < -1e-12 * scale {
        return Err(Error::NotConvex(format!(
            "Q has negative eigenvalue {lmin:e}"
        )));
    }
    Ok(q)
}

fn vector_or_zeros(v: &Option<Vec<f64>>, len: usize, name: &str) -> Result<DVector<f64>> {
    match v {
        Some(v) => {
            check_len(name, v.len(), len)?;
            Ok(DVector::from_column_slice(v))
        }
        None => Ok(DVector::zeros(len)),
    }
}

fn build_quad_softplus(p: &QuadSoftplusParams) -> Result<ConvexProgram> {
    check_dims(p.n, p.m)?;
    let q = psd_matrix(&p.q, p.n)?;
    let c = vector_or_zeros(&p.c, p.n, "params.c")?;
    check_len("params.a", p.a.len(), p.m)?;
    let b = vector_or_zeros(&p.b, p.m, "params.b")?;
    let r = vector_or_zeros(&p.r, p.m, "params.r")?;
    let mut terms = Vec::with_capacity(p.m);
    for (i, row) in p.a.iter().enumerate() {
        check_len(&format!("params.a[{i}]"), row.len(), p.n)?;
        terms.push(ConstraintTerm::Softplus {
            a: DVector::from_column_slice(row),
            b: b[i],
            r: r[i],
        });
    }
    CompositeProgram { q, c, terms }.into_program()
}

fn build_smoothed_ball(p: &SmoothedBallParams) -> Result<ConvexProgram> {
    check_dims(p.n, p.m)?;
    let q = psd_matrix(&p.q, p.n)?;
    let c = vector_or_zeros(&p.c, p.n, "params.c")?;
    check_len("params.centers", p.centers.len(), p.m)?;
    check_len("params.radii", p.radii.len(), p.m)?;
    let mut terms = Vec::with_capacity(p.m);
    for (i, row) in p.centers.iter().enumerate() {
        check_len(&format!("params.centers[{i}]"), row.len(), p.n)?;
        if p.radii[i] <= 1.0 {
            return Err(invalid(
                format!("params.radii[{i}]"),
                "must exceed 1 for the constraint set to have interior",
            ));
        }
        terms.push(ConstraintTerm::Ball {
            center: DVector::from_column_slice(row),
            r: p.radii[i],
        });
    }
    CompositeProgram { q, c, terms }.into_program()
}

fn build_known_kkt(p: &KnownKktParams) -> Result<ConvexProgram> {
    check_dims(p.n, p.m)?;
    let (n, m) = (p.n, p.m);
    let active = p.active.unwrap_or_else(|| m.div_ceil(2).min(n));
    if active > m || active > n {
        return Err(invalid(
            "params.active",
            format!("must not exceed min(n, m) = {}", n.min(m)),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut uniform = |lo: f64, hi: f64| rng.gen_range(lo..hi);

    let x_star = DVector::from_fn(n, |_, _| uniform(-1.0, 1.0));
    let basis = DMatrix::from_fn(n, n, |_, _| uniform(-1.0, 1.0));
    let q = basis.transpose() * &basis / n as f64 + DMatrix::identity(n, n) * 0.5;

    let mut terms = Vec::with_capacity(m);
    let mut y_star = DVector::zeros(m);
    for i in 0..m {
        // Active constraints vanish at x*, inactive ones sit strictly inside.
        let slack = if i < active { 0.0 } else { uniform(0.25, 1.0) };
        if i < active {
            y_star[i] = uniform(0.5, 1.5);
        }
        let term = if i % 2 == 0 {
            let a = DVector::from_fn(n, |_, _| uniform(-1.0, 1.0));
            let b = uniform(-0.5, 0.5);
            let r = softplus(a.dot(&x_star) - b) + slack;
            ConstraintTerm::Softplus { a, b, r }
        } else {
            let center = &x_star + DVector::from_fn(n, |_, _| uniform(-1.0, 1.0));
            let r = (1.0 + (&x_star - &center).norm_squared()).sqrt() + slack;
            ConstraintTerm::Ball { center, r }
        };
        terms.push(term);
    }

    let mut comp = CompositeProgram {
        q,
        c: DVector::zeros(n),
        terms,
    };
    let ge = comp.constraints(&x_star);
    comp.c = -(&comp.q * &x_star) - &ge.jacobian_t * &y_star;
    let solution = PrimalDual::new(x_star, y_star);
    Ok(comp.into_program()?.with_known_solution(solution))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::kkt_residual;
    use serde_json::json;

    fn sigma_third(t: f64) -> f64 {
        let s = 1.0 / (1.0 + (-t).exp());
        (s * (1.0 - s) * (1.0 - 2.0 * s)).abs()
    }

    #[test]
    fn softplus_constant_matches_grid_maximum() {
        let grid_max = (0..=2_000_000)
            .map(|k| -10.0 + 20.0 * k as f64 / 2_000_000.0)
            .map(sigma_third)
            .fold(0.0_f64, f64::max);
        assert!((grid_max - SOFTPLUS_THIRD_DERIVATIVE_MAX).abs() < 1e-10);
        assert!(grid_max <= SOFTPLUS_THIRD_DERIVATIVE_MAX);
    }

    #[test]
    fn quad_softplus_example_constants() {
        let p = builtin_problem(
            "quad_softplus",
            &json!({"n": 2, "m": 1, "Q": [[1, 0], [0, 1]], "c": [0, 0],
                    "a": [[1, 0]], "b": [0], "r": [0.5]}),
        )
        .unwrap();
        assert_eq!(p.l0(), 0.0);
        assert!((p.lg()[0] - 0.096_225_044_864_937_63).abs() < 1e-16);
    }

    #[test]
    fn rejects_indefinite_q() {
        let err = builtin_problem(
            "quad_softplus",
            &json!({"n": 2, "m": 1, "Q": [[1, 0], [0, -1]], "a": [[1, 0]]}),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotConvex(_)));
    }

    #[test]
    fn unknown_family_named() {
        let err = builtin_problem("rosenbrock", &json!({})).unwrap_err();
        assert!(err.to_string().contains("rosenbrock"));
    }

    #[test]
    fn malformed_field_is_named() {
        let err = ProblemDescriptor::from_json_str(
            r#"{"family": "quad_softplus", "params": {"n": 2, "m": 1, "a": [[1, "oops"]]}}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("params.a[0][1]"), "{msg}");
    }

    #[test]
    fn known_kkt_point_is_exact() {
        for seed in 0..5 {
            let p = builtin_problem("known_kkt", &json!({"n": 4, "m": 3, "seed": seed})).unwrap();
            let z = p.known_solution().unwrap().clone();
            let r = kkt_residual(&p, &z).unwrap();
            assert!(r.max_abs() <= 1e-12, "seed {seed}: {}", r.max_abs());
            assert!(z.y.iter().filter(|&&v| v > 0.0).count() == 2);
        }
    }

    #[test]
    fn ball_radius_must_exceed_one() {
        let err = builtin_problem(
            "smoothed_ball",
            &json!({"n": 1, "m": 1, "centers": [[0.0]], "radii": [0.9]}),
        )
        .unwrap_err();
        assert!(err.to_string().contains("radii[0]"));
    }

    #[test]
    fn descriptor_round_trip_is_exact() {
        let d = ProblemDescriptor::SmoothedBall(SmoothedBallParams {
            n: 2,
            m: 1,
            q: Some(vec![vec![0.1 + 0.2, 0.0], vec![0.0, 1.0 / 3.0]]),
            c: Some(vec![std::f64::consts::PI, -1e-300]),
            centers: vec![vec![0.7, 1.0 / 7.0]],
            radii: vec![2.0_f64.sqrt()],
        });
        let text = d.to_json_string();
        assert_eq!(ProblemDescriptor::from_json_str(&text).unwrap(), d);
    }
}
