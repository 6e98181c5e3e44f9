//! Slowing one link should not raise that link's probability. This holds on
//! the canonical one-slow-link instance but is not a general property of the
//! policy program; the second test pins a counterexample.

use netmax_core::linalg::Matrix;
use netmax_core::network::Topology;
use netmax_core::policy::{self, PolicySearch};

fn scaled(t: &Matrix, i: usize, m: usize, f: f64) -> Matrix {
    Matrix::from_fn(t.rows(), t.cols(), |a, b| if (a, b) == (i, m) { t[(a, b)] * f } else { t[(a, b)] })
}

#[test]
fn slower_link_never_gains_probability_on_canonical_instance() {
    let topo = Topology::fully_connected(4).unwrap();
    let times = Matrix::from_fn(4, 4, |i, m| if i == m { 0.0 } else if i + m == 1 { 4.0 } else { 1.0 });
    let search = PolicySearch::default();
    let base = policy::generate_policy_matrix(&search, &times, &topo).unwrap();
    let mut checked = 0;
    for i in 0..4 {
        for m in 0..4 {
            if i == m {
                continue;
            }
            for f in [1.01, 1.1, 1.5, 2.0, 4.0, 8.0] {
                let Ok(r) = policy::generate_policy_matrix(&search, &scaled(&times, i, m, f), &topo) else { continue };
                checked += 1;
                assert!(
                    r.policy.get(i, m) <= base.policy.get(i, m) + 1e-9,
                    "({i},{m}) x{f}: {} -> {}",
                    base.policy.get(i, m),
                    r.policy.get(i, m)
                );
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn monotonicity_is_not_general() {
    // equal per-node time forces row 0 to shift mass toward the slowed link
    // once its self-probability is exhausted
    let topo = Topology::fully_connected(3).unwrap();
    let times = Matrix::from_fn(3, 3, |i, m| if i == m { 0.0 } else if i + m == 3 { 3.0 } else { 1.0 });
    let search = PolicySearch::default();
    let before = policy::generate_policy_matrix(&search, &times, &topo).unwrap();
    let after = policy::generate_policy_matrix(&search, &scaled(&times, 0, 1, 1.5), &topo).unwrap();
    assert!(after.policy.get(0, 1) > before.policy.get(0, 1) + 0.1);
}
