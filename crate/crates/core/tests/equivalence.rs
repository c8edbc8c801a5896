use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgopt::cartpole::*;
use sgopt::elimination::{extract_feedback_gain, min_degree_ordering, solve, solve_with_net, structured_ordering};
use sgopt::solvers::{assemble_dense_lti, riccati_lqr};
use sgopt::VariableKey;

fn random_case(rng: &mut ChaCha8Rng) -> (ProblemConfig, CartPoleParams) {
    let n = rng.gen_range(1..=5);
    let m = rng.gen_range(1..=n);
    let t = rng.gen_range(2..=15);
    let mut cfg = ProblemConfig::new(n, Actuation::Count(m), t);
    cfg.x0 = (0..4 * n).map(|_| rng.gen_range(-0.05..0.05)).collect();
    cfg.weights = CostWeights {
        qx: rng.gen_range(0.1..20.0),
        qtheta: rng.gen_range(0.1..20.0),
        qu: rng.gen_range(0.01..1.0),
        qxf: rng.gen_range(1.0..3000.0),
        qthetaf: rng.gen_range(1.0..3000.0),
    };
    let p = CartPoleParams {
        spring: rng.gen_range(0.0..1000.0),
        damping: rng.gen_range(0.0..2.0),
        dt: rng.gen_range(0.01..0.05),
        ..CartPoleParams::default()
    };
    (cfg, p)
}

#[test]
fn sgopt_matches_riccati_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..40 {
        let (cfg, p) = random_case(&mut rng);
        let d = local_linear_dynamics(&p);
        let graph = build_ocp_graph(&cfg, &d).unwrap();
        let lqr = riccati_lqr(&assemble_dense_lti(&cfg, &d).unwrap(), cfg.horizon, &cfg.x0).unwrap();
        for ordering in [structured_ordering(&cfg), min_degree_ordering(&graph)] {
            let (sol, _) = solve(&graph, &ordering).unwrap();
            let rel = (sol.total_cost - lqr.cost).abs() / lqr.cost.max(1e-300);
            assert!(rel <= 1e-6, "case {case}: cost {} vs {}", sol.total_cost, lqr.cost);
            assert!(sol.max_constraint_violation <= 1e-8);
            let traj = solution_to_trajectory(&cfg, &sol, None).unwrap();
            let scale = lqr.controls.iter().flatten().fold(1.0f64, |a, u| a.max(u.abs()));
            for (a, b) in traj.controls.iter().flatten().zip(lqr.controls.iter().flatten()) {
                assert!((a - b).abs() <= 1e-6 * scale, "case {case}: control {a} vs {b}");
            }
        }
    }
}

#[test]
fn one_step_gains_match_riccati_gain() {
    // T = 2: the only control sees the full initial state, so the gain is
    // the dense LQR gain restricted to the separator.
    let p = CartPoleParams::default();
    let cfg = ProblemConfig::new(1, Actuation::Count(1), 2).with_uniform_tilt(0.1);
    let d = local_linear_dynamics(&p);
    let graph = build_ocp_graph(&cfg, &d).unwrap();
    let (_, net, _) = solve_with_net(&graph, &structured_ordering(&cfg)).unwrap();
    let gain = extract_feedback_gain(net.conditional(&VariableKey::control(0, 0)).unwrap()).unwrap();
    let lqr = riccati_lqr(&assemble_dense_lti(&cfg, &d).unwrap(), 2, &cfg.x0).unwrap();
    // u = K sep + k, with the separator the t = 0 cart then pendulum
    assert_eq!(gain.separator, vec![VariableKey::cart(0, 0), VariableKey::pendulum(0, 0)]);
    for j in 0..4 {
        assert!((gain.k[(0, j)] + lqr.gains[0][(0, j)]).abs() < 1e-9, "entry {j}");
    }
    assert!(gain.offset[0].abs() < 1e-12);
}
