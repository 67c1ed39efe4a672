use hpemm::hpe::{check_sigma_inequality, ErgodicAccumulator};
use hpemm::oracles::two_pass_ergodic;
use hpemm::solver::{Solver, SolverConfig};
use hpemm::{builtin_problem, PrimalDual};
use proptest::prelude::*;
use serde_json::json;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_keep_their_invariants(n in 2usize..6, m in 1usize..5, seed in 0u64..1000, theta in 0.05f64..=0.25) {
        let prog = builtin_problem("known_kkt", &json!({"n": n, "m": m, "seed": seed})).unwrap();
        let cfg = SolverConfig { theta, delta: 1e-5, eps: 1e-5, keep_records: true, ..SolverConfig::default() };
        let result = Solver::new(cfg.clone()).unwrap().run(&prog, &PrimalDual::zeros(n, m)).unwrap();
        prop_assert!(result.converged());
        prop_assert_eq!(result.violations.total(), 0);
        prop_assert_eq!(result.count_a + result.count_b, result.trace.len());

        let zs = prog.known_solution().unwrap();
        let mut dist = zs.norm();
        for rec in &result.records {
            prop_assert!(check_sigma_inequality(rec, cfg.sigma).holds);
            let next = rec.z_next.dist(zs);
            prop_assert!(next <= dist + 1e-10);
            dist = next;
        }

        if !result.records.is_empty() {
            let mut acc = ErgodicAccumulator::new(n, m);
            for rec in &result.records {
                acc.update(rec);
            }
            let a = acc.finalize().unwrap();
            let (z, v, eps) = two_pass_ergodic(&result.records).unwrap();
            prop_assert!(a.z_tilde.dist(&z) <= 1e-10 * (1.0 + z.norm()));
            prop_assert!((&a.v - &v).norm() <= 1e-10 * (1.0 + v.norm()));
            prop_assert!((a.eps - eps).abs() <= 1e-10 * (1.0 + eps.abs()));
        }
    }
}
