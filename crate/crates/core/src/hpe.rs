//! Bookkeeping of the relaxed hybrid proximal extragradient scheme: the
//! relative-error test, ergodic averaging and the abstract rate bounds.

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::problem::PrimalDual;

/// One extragradient step: `z_next = z_prev - tau lam v`.
#[derive(Clone, Debug)]
pub struct HpeRecord {
    pub index: usize,
    pub lambda: f64,
    pub z_tilde: PrimalDual,
    /// Stacked `(p, q)`.
    pub v: DVector<f64>,
    pub eps: f64,
    pub tau: f64,
    pub z_prev: PrimalDual,
    pub z_next: PrimalDual,
}

/// Both sides of `|lam v + z~ - z_prev|^2 + 2 lam eps <= sigma^2 |z~ - z_prev|^2`.
#[derive(Clone, Copy, Debug)]
pub struct SigmaCheck {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

pub fn check_sigma_inequality(record: &HpeRecord, sigma: f64) -> SigmaCheck {
    let step = record.z_tilde.stacked() - record.z_prev.stacked();
    let lhs = (&record.v * record.lambda + &step).norm_squared() + 2.0 * record.lambda * record.eps;
    let rhs = sigma * sigma * step.norm_squared();
    SigmaCheck {
        holds: lhs <= rhs,
        lhs,
        rhs,
    }
}

/// Ergodic averages with weights `tau lam_j`.
#[derive(Clone, Debug)]
pub struct ErgodicAverage {
    /// `Lambda_i = tau sum lam_j`.
    pub lambda_sum: f64,
    pub z_tilde: PrimalDual,
    pub v: DVector<f64>,
    pub eps: f64,
    pub count: usize,
}

/// Online accumulator for [`ErgodicAverage`].
///
/// Sums are kept relative to the first record `(c, d)`; the correction term
/// of `eps^a` then follows from the expansion
/// `sum w_j <z_j - z^a, v_j - v^a> = sum w_j <z_j - c, v_j - d> - Lambda <z^a - c, v^a - d>`.
#[derive(Clone, Debug)]
pub struct ErgodicAccumulator {
    n: usize,
    count: usize,
    lambda_sum: f64,
    sum_dz: DVector<f64>,
    sum_dv: DVector<f64>,
    sum_eps_inner: f64,
    shift: Option<(DVector<f64>, DVector<f64>)>,
}

impl ErgodicAccumulator {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            count: 0,
            lambda_sum: 0.0,
            sum_dz: DVector::zeros(n + m),
            sum_dv: DVector::zeros(n + m),
            sum_eps_inner: 0.0,
            shift: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn update(&mut self, record: &HpeRecord) {
        let weight = record.tau * record.lambda;
        let z = record.z_tilde.stacked();
        let (c, d) = self
            .shift
            .get_or_insert_with(|| (z.clone(), record.v.clone()))
            .clone();
        let dz = &z - &c;
        let dv = &record.v - &d;
        self.lambda_sum += weight;
        self.sum_dz.axpy(weight, &dz, 1.0);
        self.sum_dv.axpy(weight, &dv, 1.0);
        self.sum_eps_inner += weight * (record.eps + dz.dot(&dv));
        self.count += 1;
    }

    pub fn finalize(&self) -> Option<ErgodicAverage> {
        if self.count == 0 {
            return None;
        }
        let l = self.lambda_sum;
        let (c, d) = self.shift.as_ref()?;
        let mean_dz = &self.sum_dz / l;
        let mean_dv = &self.sum_dv / l;
        let z = c + &mean_dz;
        let v = d + &mean_dv;
        let eps = self.sum_eps_inner / l - mean_dz.dot(&mean_dv);
        Some(ErgodicAverage {
            lambda_sum: l,
            z_tilde: PrimalDual::from_stacked(&z, self.n),
            v,
            eps,
            count: self.count,
        })
    }
}

pub fn ergodic_update(mut acc: ErgodicAccumulator, record: &HpeRecord) -> ErgodicAccumulator {
    acc.update(record);
    acc
}

/// Pointwise and ergodic bounds after `i` extragradient steps of a
/// large-step scheme with constant `eta`, started at distance `d0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateBounds {
    pub pointwise_v: f64,
    pub pointwise_eps: f64,
    pub ergodic_v: f64,
    pub ergodic_eps: f64,
}

pub fn abstract_rate_bounds(d0: f64, sigma: f64, tau: f64, eta: f64, i: usize) -> Result<RateBounds> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(invalid("sigma", "must lie in [0, 1)"));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(invalid("tau", "must lie in (0, 1]"));
    }
    if !(eta > 0.0) {
        return Err(invalid("eta", "must be positive"));
    }
    if !(d0 >= 0.0) {
        return Err(invalid("d0", "must be nonnegative"));
    }
    if i == 0 {
        return Err(invalid("i", "must be at least 1"));
    }
    let it = i as f64 * tau;
    let s2 = 1.0 - sigma * sigma;
    Ok(RateBounds {
        pointwise_v: d0 * d0 / (it * (1.0 - sigma) * eta),
        pointwise_eps: sigma * sigma * d0.powi(3) / (it.powf(1.5) * s2.powf(1.5) * 2.0 * eta),
        ergodic_v: 2.0 * d0 * d0 / (it.powf(1.5) * s2.sqrt() * eta),
        ergodic_eps: 2.0 * d0.powi(3) / (it.powf(1.5) * s2 * eta),
    })
}

/// Least-squares slope of `log values[i-1]` against `log i` over the indices
/// `i` in `[lo, hi]` present in `values`. `None` with fewer than two usable
/// points (non-positive values are skipped).
pub fn loglog_slope(values: &[f64], lo: usize, hi: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = (lo.max(1)..=hi.min(values.len()))
        .filter(|&i| values[i - 1] > 0.0)
        .map(|i| ((i as f64).ln(), values[i - 1].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(lambda: f64, z: &[f64], v: &[f64], eps: f64) -> HpeRecord {
        let zt = PrimalDual::from_slices(&z[..1], &z[1..]);
        HpeRecord {
            index: 1,
            lambda,
            z_tilde: zt.clone(),
            v: DVector::from_column_slice(v),
            eps,
            tau: 0.5,
            z_prev: zt.clone(),
            z_next: zt,
        }
    }

    #[test]
    fn exact_prox_passes_for_any_sigma() {
        let mut r = record(2.0, &[1.0, 1.0], &[0.5, 0.0], 0.0);
        r.z_prev = PrimalDual::from_slices(&[2.0], &[1.0]);
        assert!(check_sigma_inequality(&r, 0.0).holds);
    }

    #[test]
    fn degenerate_step_fails() {
        let r = record(1.0, &[1.0, 1.0], &[0.5, 0.0], 0.0);
        let c = check_sigma_inequality(&r, 0.9);
        assert!(!c.holds);
        assert_eq!(c.rhs, 0.0);
    }

    #[test]
    fn single_and_repeated_records() {
        let r = record(0.7, &[1.0, 2.0], &[0.3, -0.1], 0.05);
        let mut acc = ErgodicAccumulator::new(1, 1);
        acc.update(&r);
        let a = acc.finalize().unwrap();
        assert_eq!(a.z_tilde, r.z_tilde);
        assert_eq!(a.v, r.v);
        assert!((a.eps - r.eps).abs() <= 1e-16);
        acc.update(&r);
        let b = acc.finalize().unwrap();
        assert!((b.z_tilde.stacked() - r.z_tilde.stacked()).amax() < 1e-15);
        assert!((b.eps - r.eps).abs() < 1e-15);
        assert!((b.lambda_sum - 0.7).abs() < 1e-15);
    }

    #[test]
    fn rate_bound_examples() {
        let b = abstract_rate_bounds(1.0, 0.5, 1.0, 1.0, 1).unwrap();
        assert_eq!(b.pointwise_v, 2.0);
        assert!((b.pointwise_eps - 0.25 / (0.75f64.powf(1.5) * 2.0)).abs() < 1e-15);
        let b4 = abstract_rate_bounds(1.0, 0.5, 1.0, 1.0, 4).unwrap();
        assert!((b4.ergodic_v - b.ergodic_v / 8.0).abs() < 1e-15);
        assert!(abstract_rate_bounds(1.0, 1.0, 1.0, 1.0, 1).is_err());
        assert!(abstract_rate_bounds(1.0, 0.5, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let v: Vec<f64> = (1..=200).map(|i| 3.0 * (i as f64).powf(-1.5)).collect();
        assert!((loglog_slope(&v, 10, 100).unwrap() + 1.5).abs() < 1e-12);
        assert!(loglog_slope(&v[..10], 10, 100).is_none());
    }

    proptest! {
        #[test]
        fn online_matches_direct_evaluation(
            data in proptest::collection::vec(
                (0.01..5.0f64, proptest::collection::vec(-3.0..3.0f64, 3),
                 proptest::collection::vec(-3.0..3.0f64, 3), 0.0..1.0f64), 1..20)) {
            let mut acc = ErgodicAccumulator::new(1, 2);
            let recs: Vec<_> = data.iter().map(|(l, z, v, e)| record(*l, z, v, *e)).collect();
            for r in &recs {
                acc.update(r);
            }
            let a = acc.finalize().unwrap();
            let lsum: f64 = recs.iter().map(|r| r.tau * r.lambda).sum();
            let z: DVector<f64> = recs.iter().map(|r| r.z_tilde.stacked() * (r.tau * r.lambda)).sum::<DVector<f64>>() / lsum;
            let v: DVector<f64> = recs.iter().map(|r| &r.v * (r.tau * r.lambda)).sum::<DVector<f64>>() / lsum;
            let mut scale = 0.0;
            let eps = recs.iter().map(|r| {
                let t = r.eps + (r.z_tilde.stacked() - &z).dot(&(&r.v - &v));
                scale += r.tau * r.lambda * (r.eps + (r.z_tilde.stacked() - &z).norm() * (&r.v - &v).norm());
                r.tau * r.lambda * t
            }).sum::<f64>() / lsum;
            scale /= lsum;
            prop_assert!((a.eps - eps).abs() <= 1e-12 * scale.max(1e-300));
            prop_assert!((a.z_tilde.stacked() - z).amax() <= 1e-12 * 3.0);
            prop_assert!((a.v - v).amax() <= 1e-12 * 3.0);
        }
    }
}
