use approx::assert_relative_eq;
use netmax_core::config::*;
use netmax_core::consensus::{self, GradientOracle, ModelVector, QuadraticLoss, UpdateParams};
use netmax_core::linalg::{self, Matrix, PowerOptions};
use netmax_core::metrics;
use netmax_core::network::Topology;
use netmax_core::policy::{self, PolicyError, PolicySearch};
use netmax_core::sim;
use netmax_core::suite;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, n: usize, spread: f64) -> (Topology, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = suite::random_connected_topology(n, 0.5, &mut rng);
    let times = suite::random_times(&topo, 0.5, 0.5 + spread, &mut rng);
    (topo, times)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_solutions_are_feasible(seed in any::<u64>(), n in 3usize..7, k in 1usize..16, frac in 0.05f64..0.95) {
        let (topo, times) = instance(seed, n, 2.0);
        let alpha = 0.1;
        let rho = k as f64 * (0.5 / alpha) / 16.0;
        if let Ok((lo, hi)) = policy::tbar_interval(alpha, rho, &times, &topo) {
            let tbar = lo + frac * (hi - lo);
            if let Ok(p) = policy::solve_policy_lp(alpha, rho, tbar, &times, &topo, policy::DEFAULT_MARGIN) {
                let rep = policy::check_feasibility(&p, alpha, rho, &times, &topo, policy::DEFAULT_MARGIN);
                prop_assert!(rep.all_passed(), "{rep:?}");
            }
        }
    }

    #[test]
    fn per_row_lp_matches_joint_lp(seed in any::<u64>(), n in 2usize..6, frac in 0.05f64..0.95) {
        let (topo, times) = instance(seed, n, 1.5);
        let (alpha, rho) = (0.1, 0.5);
        let Ok((lo, hi)) = policy::tbar_interval(alpha, rho, &times, &topo) else { return Ok(()) };
        let tbar = lo + frac * (hi - lo);
        let rows = policy::solve_policy_lp(alpha, rho, tbar, &times, &topo, policy::DEFAULT_MARGIN);
        let joint = policy::solve_policy_lp_joint(alpha, rho, tbar, &times, &topo, policy::DEFAULT_MARGIN);
        match (rows, joint) {
            (Ok(p), Ok((_, obj))) => {
                let diag: f64 = (0..n).map(|i| p.get(i, i)).sum();
                prop_assert!((diag - obj).abs() < 1e-9, "{diag} vs {obj}");
            }
            (Err(PolicyError::Infeasible), Err(PolicyError::Infeasible)) => {}
            (a, b) => prop_assert!(false, "routes disagree: {:?} vs {:?}", a.map(|_| ()), b.map(|_| ())),
        }
    }

    #[test]
    fn update_matches_operator(n in 2usize..8, i in 0usize..8, m in 0usize..8, rho in 0.01f64..4.0, p in 0.05f64..1.0, xs in prop::collection::vec(-5.0f64..5.0, 8)) {
        let (i, m) = (i % n, m % n);
        prop_assume!(i != m);
        let alpha = 0.1;
        let d = consensus::update_operator(i, m, alpha, rho, 1.0 / p, n);
        let via_d = d.mul_vec(&xs[..n]);
        let params = UpdateParams { alpha, rho, d_sum: 2.0, p_im: p };
        let got = consensus::two_step_update(&ModelVector(vec![xs[i]]), &ModelVector(vec![0.0]), &ModelVector(vec![xs[m]]), params).unwrap();
        prop_assert!((got.0[0] - via_d[i]).abs() < 1e-12);
        for (k, v) in via_d.iter().enumerate() {
            if k != i {
                prop_assert_eq!(*v, xs[k]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), dim in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..dim).map(|k| (k as f64 * 0.7).sin()).collect();
        let loss = QuadraticLoss::random_spd(dim, 0.5, 3.0, b, 0.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..dim).map(|k| (k as f64 * 1.3).cos() * 2.0).collect();
        let g = loss.exact_gradient(&x);
        let h = 1e-5;
        for k in 0..dim {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (loss.value(&up) - loss.value(&dn)) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()), "{fd} vs {}", g[k]);
        }
    }

    #[test]
    fn power_iteration_matches_dense_oracle(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = suite::random_connected_topology(n, 0.5, &mut rng);
        let times = suite::random_times(&topo, 0.5, 2.0, &mut rng);
        if let Ok(res) = policy::generate_policy_matrix(&PolicySearch { outer_rounds: 8, inner_rounds: 8, ..PolicySearch::default() }, &times, &topo) {
            let y = policy::build_gossip_expectation(&res.policy, 0.1, res.rho, &topo).unwrap();
            let power = linalg::second_largest_eigenvalue(&y.y, PowerOptions::default()).unwrap();
            let jac = linalg::second_eigenvalue_jacobi(&y.y).unwrap();
            let dm = nalgebra::DMatrix::from_row_slice(n, n, y.y.as_slice());
            let mut eig: Vec<f64> = dm.symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(|a, b| b.total_cmp(a));
            prop_assert!((power - jac).abs() < 1e-8, "{power} vs {jac}");
            prop_assert!((power - eig[1]).abs() < 1e-8, "{power} vs {}", eig[1]);
        }
    }

    #[test]
    fn deviation_matches_naive_loop(xs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..6), star in prop::collection::vec(-3.0f64..3.0, 3)) {
        let models: Vec<ModelVector> = xs.iter().cloned().map(ModelVector).collect();
        let mut naive = 0.0;
        for x in &xs {
            for k in 0..3 {
                naive += (x[k] - star[k]) * (x[k] - star[k]);
            }
        }
        assert_relative_eq!(metrics::deviation(&models, &ModelVector(star)), naive, max_relative = 1e-12, epsilon = 1e-15);
    }

    #[test]
    fn ema_stays_between_inputs(prev in 0.0f64..10.0, obs in 0.0f64..10.0, beta in 0.0f64..=1.0) {
        let v = sim::ema_update(Some(prev), obs, beta).unwrap();
        prop_assert!(v >= prev.min(obs) - 1e-12 && v <= prev.max(obs) + 1e-12);
    }

    #[test]
    fn selection_probabilities_sum_to_one(ts in prop::collection::vec(0.01f64..100.0, 1..10)) {
        let p = policy::selection_probabilities_from_times(&ts).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_are_reproducible_and_consistent(seed in any::<u64>(), protocol in prop::sample::select(vec![Protocol::Netmax, Protocol::UniformAsync, Protocol::UniformAsyncWithMonitor, Protocol::SyncAllreduce])) {
        let mut cfg = ExperimentConfig::canonical_heterogeneous();
        cfg.topology = TopologySpec::FullyConnected { nodes: 5 };
        cfg.stop = StopSpec { max_time: Some(60.0), max_steps: None, target_epsilon: None };
        let a = sim::run(&cfg, protocol, seed).unwrap();
        let b = sim::run(&cfg, protocol, seed).unwrap();
        prop_assert_eq!(metrics::trace_jsonl(&a.trace), metrics::trace_jsonl(&b.trace));
        let usage: u64 = sim::link_usage(&a.trace).iter().map(|(_, c)| c).sum();
        let non_self = a.trace.iter().filter(|r| r.node.is_some() && r.neighbor.is_some() && r.node != r.neighbor).count() as u64;
        prop_assert_eq!(usage, non_self);
        prop_assert_eq!(a.local_steps.iter().sum::<u64>(), a.steps());
        let eps = [0.5, 0.1, 0.05, 0.01];
        let times: Vec<Option<f64>> = eps.iter().map(|&e| a.time_to_epsilon(e)).collect();
        for w in times.windows(2) {
            if let (Some(hi), Some(lo)) = (w[1], w[0]) {
                prop_assert!(lo <= hi);
            }
            if w[0].is_none() {
                prop_assert!(w[1].is_none());
            }
        }
        prop_assert!(a.lambda_history.iter().all(|p| p.lambda2 < 1.0));
    }
}

#[test]
fn homogeneous_policies_are_uniform() {
    for n in 2..=8 {
        let topo = Topology::fully_connected(n).unwrap();
        let times = Matrix::from_fn(n, n, |i, m| if i == m { 0.0 } else { 1.0 });
        let res = policy::generate_policy_matrix(&PolicySearch::default(), &times, &topo).unwrap();
        assert!(res.policy.off_diagonal_spread(&topo) <= 1e-4, "M={n}");
    }
}

#[test]
fn operator_sequence_matches_simulated_updates() {
    // a chain of D operators equals the same chain of pairwise updates
    let n = 4;
    let (alpha, rho, p) = (0.1, 0.7, 0.4);
    let moves = [(0, 1), (2, 3), (1, 2), (3, 0), (0, 2)];
    let mut xs = vec![1.0, -2.0, 0.5, 3.0];
    let mut ys = xs.clone();
    for &(i, m) in &moves {
        let d = consensus::update_operator(i, m, alpha, rho, 1.0 / p, n);
        xs = d.mul_vec(&xs);
        let params = UpdateParams { alpha, rho, d_sum: 2.0, p_im: p };
        ys[i] = consensus::two_step_update(&ModelVector(vec![ys[i]]), &ModelVector(vec![0.0]), &ModelVector(vec![ys[m]]), params).unwrap().0[0];
    }
    for (a, b) in xs.iter().zip(&ys) {
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }
}
