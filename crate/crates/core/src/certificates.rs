//! Approximate KKT certificates.
//!
//! A pointwise certificate `((x, y), (p, q), eps)` satisfies
//!
//! ```text
//! p = grad f(x) + grad g(x) y,   g(x) + q <= 0,   y >= 0,   <y, g(x) + q> = -eps
//! ```
//!
//! and an ergodic one satisfies
//!
//! ```text
//! p in d_{x, eps'} Lbar(x, y),   g(x) + q <= 0,   y >= 0,   <y, g(x) + q> >= -eps
//! ```
//!
//! with `eps' = eps + <y, g(x) + q>`. Small `|(p, q)|` and `eps` make `(x, y)`
//! an approximate primal-dual solution.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decimal;
use crate::error::{Error, Result};
use crate::hpe::ErgodicAverage;
use crate::problem::{ConvexProgram, PrimalDual};
use crate::saddle::{check_point, eps_saddle_subgradient_check, saddle_samples, SubgradientCheck};

/// Absolute tolerance of the certificate relations, scaled by the size of
/// the quantities compared when those exceed one.
pub const RELATION_TOL: f64 = 1e-9;

/// Raw violations of the pointwise relations; all zero for an exact certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseResiduals {
    /// `max |p - grad f - grad g y|`
    #[serde(with = "decimal::scalar")]
    pub stationarity: f64,
    /// `max (g + q)+`
    #[serde(with = "decimal::scalar")]
    pub primal_feasibility: f64,
    /// `max (-y)+`
    #[serde(with = "decimal::scalar")]
    pub dual_feasibility: f64,
    /// `|<y, g + q> + eps|`
    #[serde(with = "decimal::scalar")]
    pub complementarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseCertificate {
    /// Iteration that produced the candidate (0 for the starting point).
    pub iteration: usize,
    pub z_tilde: PrimalDual,
    #[serde(with = "decimal::vec")]
    pub p: Vec<f64>,
    #[serde(with = "decimal::vec")]
    pub q: Vec<f64>,
    #[serde(with = "decimal::scalar")]
    pub eps: f64,
    #[serde(with = "decimal::scalar")]
    pub residual_norm: f64,
    pub residuals: PointwiseResiduals,
}

fn split(v: &DVector<f64>, n: usize) -> (DVector<f64>, DVector<f64>) {
    (v.rows(0, n).into_owned(), v.rows(n, v.len() - n).into_owned())
}

fn stacked(p: &[f64], q: &[f64]) -> DVector<f64> {
    DVector::from_iterator(p.len() + q.len(), p.iter().chain(q.iter()).copied())
}

fn fail(relation: &'static str, margin: f64) -> Error {
    Error::Certificate { relation, margin }
}

fn check_dims(prog: &ConvexProgram, z: &PrimalDual, v_len: usize) -> Result<()> {
    check_point(prog.n(), prog.m(), z)?;
    if v_len != prog.n() + prog.m() {
        return Err(Error::DimensionMismatch {
            context: "certificate residual",
            expected: prog.n() + prog.m(),
            got: v_len,
        });
    }
    Ok(())
}

fn pointwise_residuals(
    prog: &ConvexProgram,
    z: &PrimalDual,
    p: &DVector<f64>,
    q: &DVector<f64>,
    eps: f64,
) -> Result<(PointwiseResiduals, [f64; 4])> {
    let fe = prog.objective(&z.x)?;
    let ge = prog.constraints(&z.x)?;
    let gy = &ge.jacobian_t * &z.y;
    let grad = &fe.gradient + &gy;
    let gq = &ge.values + q;
    let ygq = z.y.dot(&gq);
    let res = PointwiseResiduals {
        stationarity: (p - &grad).amax(),
        primal_feasibility: gq.max().max(0.0),
        dual_feasibility: z.y.min().min(0.0).abs(),
        complementarity: (ygq + eps).abs(),
    };
    let scales = [
        1.0f64.max(fe.gradient.amax() + gy.amax()),
        1.0f64.max(ge.values.amax() + q.amax()),
        1.0,
        1.0f64.max(z.y.amax() * (ge.values.amax() + q.amax()) + eps),
    ];
    Ok((res, scales))
}

fn enforce_pointwise(res: &PointwiseResiduals, scales: &[f64; 4]) -> Result<()> {
    let checks = [
        ("stationarity", res.stationarity, scales[0]),
        ("primal feasibility", res.primal_feasibility, scales[1]),
        ("dual feasibility", res.dual_feasibility, scales[2]),
        ("complementarity", res.complementarity, scales[3]),
    ];
    for (name, value, scale) in checks {
        if value > RELATION_TOL * scale {
            return Err(fail(name, value));
        }
    }
    Ok(())
}

/// Splits `v = (p, q)` and verifies the pointwise relations at `z~`.
pub fn pointwise_certificate(
    prog: &ConvexProgram,
    z_tilde: &PrimalDual,
    v: &DVector<f64>,
    eps: f64,
    iteration: usize,
) -> Result<PointwiseCertificate> {
    check_dims(prog, z_tilde, v.len())?;
    let (p, q) = split(v, prog.n());
    let (residuals, scales) = pointwise_residuals(prog, z_tilde, &p, &q, eps)?;
    enforce_pointwise(&residuals, &scales)?;
    Ok(PointwiseCertificate {
        iteration,
        z_tilde: z_tilde.clone(),
        residual_norm: v.norm(),
        p: p.as_slice().to_vec(),
        q: q.as_slice().to_vec(),
        eps,
        residuals,
    })
}

/// Re-derives the residuals of a stored certificate from the oracles.
pub fn verify_pointwise(prog: &ConvexProgram, cert: &PointwiseCertificate) -> Result<PointwiseResiduals> {
    check_dims(prog, &cert.z_tilde, cert.p.len() + cert.q.len())?;
    if cert.p.len() != prog.n() {
        return Err(Error::DimensionMismatch {
            context: "certificate p",
            expected: prog.n(),
            got: cert.p.len(),
        });
    }
    let p = DVector::from_column_slice(&cert.p);
    let q = DVector::from_column_slice(&cert.q);
    let (res, scales) = pointwise_residuals(prog, &cert.z_tilde, &p, &q, cert.eps)?;
    enforce_pointwise(&res, &scales)?;
    Ok(res)
}

/// Sampling options for the epsilon-subgradient evidence checks.
#[derive(Clone, Debug)]
pub struct SamplingOptions {
    pub samples: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            samples: 256,
            radius: 1.0,
            seed: 0,
        }
    }
}

/// Evidence for `p in d_{x, eps'} Lbar(., y)(x~)`: checks
/// `L(x, y) - L(x~, y) >= <p, x - x~> - eps'` on box samples and on samples
/// along the descent direction `-(grad_x L(x~, y) - p)`.
pub fn x_subgradient_check(
    prog: &ConvexProgram,
    z_tilde: &PrimalDual,
    p: &DVector<f64>,
    eps_prime: f64,
    opts: &SamplingOptions,
) -> Result<SubgradientCheck> {
    check_point(prog.n(), prog.m(), z_tilde)?;
    let lagr = |x: &DVector<f64>| -> Result<f64> {
        Ok(prog.objective_value(x)? + z_tilde.y.dot(&prog.constraint_values(x)?))
    };
    let base = lagr(&z_tilde.x)?;
    let fe = prog.objective(&z_tilde.x)?;
    let ge = prog.constraints(&z_tilde.x)?;
    let dir = fe.gradient + ge.jacobian_t * &z_tilde.y - p;
    let dir_norm = dir.norm();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = SubgradientCheck {
        holds: true,
        worst_margin: f64::INFINITY,
        worst_sample: None,
    };
    for k in 0..opts.samples {
        let x = if k % 2 == 0 || dir_norm == 0.0 {
            z_tilde.x.map(|c| c + rng.gen_range(-opts.radius..=opts.radius))
        } else {
            let t = opts.radius * 10f64.powf(rng.gen_range(-6.0..=0.0)) / dir_norm;
            &z_tilde.x - &dir * t
        };
        let lx = lagr(&x)?;
        let lin = p.dot(&(&x - &z_tilde.x));
        let margin = (lx - base) - (lin - eps_prime);
        let scale = 1.0 + lx.abs() + base.abs() + lin.abs() + eps_prime.abs();
        if margin < out.worst_margin {
            out.worst_margin = margin;
            out.worst_sample = Some(k);
        }
        if margin < -1e-12 * scale {
            out.holds = false;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicResiduals {
    /// `max (g + q)+`
    #[serde(with = "decimal::scalar")]
    pub primal_feasibility: f64,
    /// `max (-y)+`
    #[serde(with = "decimal::scalar")]
    pub dual_feasibility: f64,
    /// `(-eps - <y, g + q>)+`
    #[serde(with = "decimal::scalar")]
    pub complementarity: f64,
    /// Distance of `eps'` from `[0, eps]`.
    #[serde(with = "decimal::scalar")]
    pub eps_prime_range: f64,
    /// Smallest sampled margin of the `x`-subgradient inequality.
    #[serde(with = "decimal::scalar")]
    pub subgradient_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicCertificate {
    /// Number of extragradient steps averaged.
    pub records: usize,
    #[serde(with = "decimal::scalar")]
    pub lambda_sum: f64,
    pub z_tilde: PrimalDual,
    #[serde(with = "decimal::vec")]
    pub p: Vec<f64>,
    #[serde(with = "decimal::vec")]
    pub q: Vec<f64>,
    #[serde(with = "decimal::scalar")]
    pub eps: f64,
    #[serde(with = "decimal::scalar")]
    pub eps_prime: f64,
    #[serde(with = "decimal::scalar")]
    pub residual_norm: f64,
    pub residuals: ErgodicResiduals,
}

fn ergodic_residuals(
    prog: &ConvexProgram,
    z: &PrimalDual,
    p: &DVector<f64>,
    q: &DVector<f64>,
    eps: f64,
    opts: &SamplingOptions,
) -> Result<(ErgodicResiduals, f64, f64)> {
    let g = prog.constraint_values(&z.x)?;
    let gq = &g + q;
    let ygq = z.y.dot(&gq);
    let eps_prime = eps + ygq;
    let scale = 1.0f64.max(g.amax() + q.amax()).max(eps.abs());
    let sub = x_subgradient_check(prog, z, p, eps_prime.max(0.0), opts)?;
    let range = if eps_prime < 0.0 {
        -eps_prime
    } else {
        (eps_prime - eps).max(0.0)
    };
    Ok((
        ErgodicResiduals {
            primal_feasibility: gq.max().max(0.0),
            dual_feasibility: z.y.min().min(0.0).abs(),
            complementarity: (-eps - ygq).max(0.0),
            eps_prime_range: range,
            subgradient_margin: sub.worst_margin,
        },
        eps_prime,
        scale * (1.0 + z.y.amax()),
    ))
}

fn enforce_ergodic(res: &ErgodicResiduals, scale: f64, subgradient_holds: bool) -> Result<()> {
    let checks = [
        ("primal feasibility", res.primal_feasibility),
        ("dual feasibility", res.dual_feasibility),
        ("complementarity", res.complementarity),
        ("eps-prime range", res.eps_prime_range),
    ];
    for (name, value) in checks {
        if value > RELATION_TOL * scale {
            return Err(fail(name, value));
        }
    }
    if !subgradient_holds {
        return Err(fail("x-subgradient", res.subgradient_margin));
    }
    Ok(())
}

/// Builds and verifies the ergodic certificate of an averaged sequence.
pub fn ergodic_certificate(
    prog: &ConvexProgram,
    avg: &ErgodicAverage,
    opts: &SamplingOptions,
) -> Result<ErgodicCertificate> {
    check_dims(prog, &avg.z_tilde, avg.v.len())?;
    let (p, q) = split(&avg.v, prog.n());
    let (residuals, eps_prime, scale) = ergodic_residuals(prog, &avg.z_tilde, &p, &q, avg.eps, opts)?;
    let holds = residuals.subgradient_margin >= -1e-12 * (1.0 + scale);
    enforce_ergodic(&residuals, scale, holds)?;
    Ok(ErgodicCertificate {
        records: avg.count,
        lambda_sum: avg.lambda_sum,
        z_tilde: avg.z_tilde.clone(),
        residual_norm: avg.v.norm(),
        p: p.as_slice().to_vec(),
        q: q.as_slice().to_vec(),
        eps: avg.eps,
        eps_prime,
        residuals,
    })
}

pub fn verify_ergodic(
    prog: &ConvexProgram,
    cert: &ErgodicCertificate,
    opts: &SamplingOptions,
) -> Result<ErgodicResiduals> {
    check_dims(prog, &cert.z_tilde, cert.p.len() + cert.q.len())?;
    let v = stacked(&cert.p, &cert.q);
    let (p, q) = split(&v, prog.n());
    let (res, _, scale) = ergodic_residuals(prog, &cert.z_tilde, &p, &q, cert.eps, opts)?;
    let holds = res.subgradient_margin >= -1e-12 * (1.0 + scale);
    enforce_ergodic(&res, scale, holds)?;
    Ok(res)
}

/// The three equivalent forms of `v in d_eps (Lbar(., y~) - Lbar(x~, .))(z~)`.
#[derive(Clone, Debug)]
pub struct TransposedForms {
    /// Sampled saddle inequality.
    pub form_a: bool,
    /// `w >= 0`, `<y~, w> <= eps`, sampled `p in d_{x, eps'} Lbar(., y~)`.
    pub form_b: bool,
    /// `0 <= eps' <= eps`, `-w` in the `(eps - eps')`-normal cone, sampled `p` membership.
    pub form_c: bool,
    pub eps_prime: f64,
    pub w: DVector<f64>,
}

pub fn transpose_conditions(
    prog: &ConvexProgram,
    z_tilde: &PrimalDual,
    v: &DVector<f64>,
    eps: f64,
    opts: &SamplingOptions,
) -> Result<TransposedForms> {
    check_dims(prog, z_tilde, v.len())?;
    let (p, q) = split(v, prog.n());
    let g = prog.constraint_values(&z_tilde.x)?;
    let w = -(&g + &q);
    let yw = z_tilde.y.dot(&w);
    let eps_prime = eps - yw;
    let tol = RELATION_TOL * 1.0f64.max(g.amax() + q.amax()) * (1.0 + z_tilde.y.amax());

    let sub = x_subgradient_check(prog, z_tilde, &p, eps_prime.max(0.0), opts)?;
    let w_nonneg = w.min() >= -tol;
    let form_b = w_nonneg && yw <= eps + tol && sub.holds;
    let in_cone = w_nonneg && yw <= (eps - eps_prime) + tol;
    let form_c = eps_prime >= -tol && eps_prime <= eps + tol && in_cone && sub.holds;

    let samples = saddle_samples(prog, z_tilde, opts.radius, opts.samples, opts.seed ^ 0x5eed)?;
    let form_a = eps_saddle_subgradient_check(prog, z_tilde, v, eps, &samples)?.holds;
    Ok(TransposedForms {
        form_a,
        form_b,
        form_c,
        eps_prime,
        w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_measure::extract_vk_eps;
    use crate::hpe::{ErgodicAccumulator, HpeRecord};
    use crate::problem::{builtin_problem, toy::*};
    use serde_json::json;

    #[test]
    fn worked_example_certificate() {
        let p = half_square_affine(1.0);
        let z = PrimalDual::from_slices(&[0.0], &[0.0]);
        let zb = PrimalDual::from_slices(&[1.0], &[0.0]);
        let r = extract_vk_eps(&p, &z, &zb, 1.0).unwrap();
        let c = pointwise_certificate(&p, &z, &r.v, r.eps, 1).unwrap();
        assert_eq!(c.p, vec![0.0]);
        assert_eq!(c.q, vec![0.0]);
        assert_eq!(c.eps, 0.0);
        assert_eq!(c.residuals.primal_feasibility, 0.0);
        assert_eq!(c.residuals.complementarity, 0.0);
    }

    #[test]
    fn exact_kkt_point_certificate() {
        let p = builtin_problem("known_kkt", &json!({"n": 4, "m": 4, "seed": 3})).unwrap();
        let z = p.known_solution().unwrap().clone();
        let r = extract_vk_eps(&p, &z, &z, 1.0).unwrap();
        let c = pointwise_certificate(&p, &z, &r.v, r.eps, 0).unwrap();
        assert!(DVector::from_vec(c.p.clone()).amax() < 1e-12);
        assert!(c.eps.abs() < 1e-12);
        let forms = transpose_conditions(&p, &z, &r.v, r.eps, &SamplingOptions::default()).unwrap();
        assert!(forms.form_a && forms.form_b && forms.form_c);
    }

    #[test]
    fn perturbed_stationarity_is_named() {
        let p = half_square_affine(1.0);
        let z = PrimalDual::from_slices(&[0.2], &[0.0]);
        let r = extract_vk_eps(&p, &z, &z, 1.0).unwrap();
        let mut c = pointwise_certificate(&p, &z, &r.v, r.eps, 1).unwrap();
        c.p[0] += 1e-3;
        match verify_pointwise(&p, &c) {
            Err(Error::Certificate { relation, .. }) => assert_eq!(relation, "stationarity"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_iterates_satisfy_relations_and_forms() {
        let prog = builtin_problem("known_kkt", &json!({"n": 3, "m": 3, "seed": 8})).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut acc = ErgodicAccumulator::new(3, 3);
        for k in 0..50 {
            let z = PrimalDual::new(
                DVector::from_fn(3, |_, _| rng.gen_range(-1.5..1.5)),
                DVector::from_fn(3, |_, _| rng.gen_range(0.0..2.0)),
            );
            let zb = PrimalDual::new(
                DVector::from_fn(3, |_, _| rng.gen_range(-1.5..1.5)),
                DVector::from_fn(3, |_, _| rng.gen_range(0.0..2.0)),
            );
            let lam = rng.gen_range(0.05..5.0);
            let r = extract_vk_eps(&prog, &z, &zb, lam).unwrap();
            pointwise_certificate(&prog, &z, &r.v, r.eps, k).unwrap();
            let forms = transpose_conditions(&prog, &z, &r.v, r.eps, &SamplingOptions { seed: k as u64, ..Default::default() }).unwrap();
            assert!(forms.form_a && forms.form_b && forms.form_c, "iterate {k}");
            assert!(forms.eps_prime.abs() <= 1e-12);
            acc.update(&HpeRecord {
                index: k,
                lambda: lam,
                z_tilde: z.clone(),
                v: r.v.clone(),
                eps: r.eps,
                tau: 0.2,
                z_prev: zb.clone(),
                z_next: zb,
            });
            let avg = acc.finalize().unwrap();
            assert!(avg.eps >= -1e-12);
            let cert = ergodic_certificate(&prog, &avg, &SamplingOptions::default()).unwrap();
            assert!(cert.eps_prime >= -1e-12 && cert.eps_prime <= cert.eps + 1e-12);
        }
    }

    #[test]
    fn single_record_ergodic_matches_pointwise() {
        let prog = builtin_problem("known_kkt", &json!({"n": 2, "m": 2, "seed": 4})).unwrap();
        let z = PrimalDual::from_slices(&[0.1, 0.2], &[0.5, 0.0]);
        let zb = PrimalDual::from_slices(&[0.0, 0.3], &[0.2, 0.1]);
        let r = extract_vk_eps(&prog, &z, &zb, 0.9).unwrap();
        let pc = pointwise_certificate(&prog, &z, &r.v, r.eps, 1).unwrap();
        let mut acc = ErgodicAccumulator::new(2, 2);
        acc.update(&HpeRecord {
            index: 1,
            lambda: 0.9,
            z_tilde: z.clone(),
            v: r.v.clone(),
            eps: r.eps,
            tau: 0.3,
            z_prev: zb.clone(),
            z_next: zb,
        });
        let ec = ergodic_certificate(&prog, &acc.finalize().unwrap(), &SamplingOptions::default()).unwrap();
        assert_eq!(ec.p, pc.p);
        assert_eq!(ec.q, pc.q);
        assert!(ec.eps_prime.abs() <= 1e-15);
    }

    #[test]
    fn certificate_json_round_trip() {
        let p = half_square_affine(1.0);
        let z = PrimalDual::from_slices(&[0.3], &[0.1]);
        let r = extract_vk_eps(&p, &z, &PrimalDual::from_slices(&[0.0], &[0.0]), 0.7).unwrap();
        let c = pointwise_certificate(&p, &z, &r.v, r.eps, 3).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: PointwiseCertificate = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
