mod common;

use apnet::graph::{PropagationConfig, PropagationMode};
use common::*;

fn assert_check(check: &GradCheck) {
    assert!(check.edge_margin > 1e-4, "seed {}: edge within {} of threshold", check.seed, check.edge_margin);
    for t in &check.tensors {
        assert!(t.ok, "seed {} {}: rel err {:e} (norm {:e})", check.seed, t.name, t.rel_err, t.analytic_norm);
    }
}

#[test]
fn learned_two_step_matches_finite_differences() {
    for seed in 0..5 {
        assert_check(&gradient_check(seed, &PropagationConfig::default()));
    }
}

#[test]
fn complete_graph_exercises_attention() {
    let prop = PropagationConfig {
        epsilon: -1.0,
        ..Default::default()
    };
    for seed in 10..13 {
        let check = gradient_check(seed, &prop);
        assert_eq!(check.off_diagonal_edges, 20);
        for t in &check.tensors {
            assert!(t.ok, "seed {seed} {}: rel err {:e}", t.name, t.rel_err);
        }
        let edge_w = check.tensors.iter().find(|t| t.name == "edge_f.weight").unwrap();
        assert!(edge_w.analytic_norm > 1e-6);
    }
}

#[test]
fn other_modes_match_finite_differences() {
    for mode in [PropagationMode::None, PropagationMode::FixedHop] {
        let prop = PropagationConfig {
            mode,
            ..Default::default()
        };
        for seed in 0..2 {
            let check = gradient_check(seed, &prop);
            for t in &check.tensors {
                assert!(t.ok, "{mode} seed {seed} {}: rel err {:e}", t.name, t.rel_err);
                if t.name.starts_with("edge_f") {
                    assert_eq!(t.analytic_norm, 0.0);
                }
            }
        }
    }
}

#[test]
fn single_step_and_deeper_propagation() {
    for steps in [1, 3] {
        let prop = PropagationConfig {
            steps,
            epsilon: 0.0,
            ..Default::default()
        };
        let check = gradient_check(21, &prop);
        for t in &check.tensors {
            assert!(t.ok, "T={steps} {}: rel err {:e}", t.name, t.rel_err);
        }
    }
}
