use hpemm::oracles::finite_difference_report;
use hpemm::{builtin_problem, ConvexProgram, ProblemDescriptor};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn families() -> Vec<ConvexProgram> {
    vec![
        builtin_problem(
            "quad_softplus",
            &json!({"n": 3, "m": 2, "c": [1.0, -2.0, 0.5],
                    "a": [[1.0, 0.5, -0.2], [-0.3, 1.0, 0.4]], "b": [0.1, -0.2]}),
        )
        .unwrap(),
        builtin_problem(
            "smoothed_ball",
            &json!({"n": 3, "m": 2, "centers": [[0.5, 0.0, 0.0], [0.0, -0.5, 0.2]], "radii": [1.5, 2.0]}),
        )
        .unwrap(),
        builtin_problem("known_kkt", &json!({"n": 5, "m": 4, "seed": 3})).unwrap(),
    ]
}

#[test]
fn derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for prog in families() {
        for _ in 0..20 {
            let x = DVector::from_fn(prog.n(), |_, _| rng.gen_range(-2.0..2.0));
            let r = finite_difference_report(&prog, &x, 1e-5).unwrap();
            let worst = r
                .objective_gradient
                .max(r.objective_hessian)
                .max(r.constraint_gradient)
                .max(r.constraint_hessian);
            assert!(worst < 1e-6, "{:?}: {r:?}", prog.descriptor());
        }
    }
}

#[test]
fn declared_constants_survive_sampling() {
    for prog in families() {
        let center = DVector::zeros(prog.n());
        let report = prog.validate_sampled(&center, 3.0, 2000, 5).unwrap();
        assert!(report.consistent_with(&prog, 1e-9), "{:?}: {report:?}", prog.descriptor());
    }
}

#[test]
fn descriptors_round_trip() {
    for prog in families() {
        let d = prog.descriptor().unwrap();
        let back = ProblemDescriptor::from_json_str(&d.to_json_string()).unwrap();
        assert_eq!(&back, d);
        let rebuilt = back.build().unwrap();
        let x = DVector::from_element(prog.n(), 0.3);
        assert_eq!(prog.objective_value(&x).unwrap(), rebuilt.objective_value(&x).unwrap());
        assert_eq!(prog.constraint_values(&x).unwrap(), rebuilt.constraint_values(&x).unwrap());
    }
}

#[test]
fn known_kkt_solution_is_a_kkt_point() {
    for seed in 0..5 {
        let prog = builtin_problem("known_kkt", &json!({"n": 6, "m": 4, "seed": seed})).unwrap();
        let z = prog.known_solution().unwrap();
        let r = hpemm::problem::kkt_residual(&prog, z).unwrap();
        assert!(r.max_abs() < 1e-10, "seed {seed}: {r:?}");
    }
}
