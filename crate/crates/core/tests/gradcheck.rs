mod common;

use common::gradsuite::{layer_cases, loss_cases, op_cases, FD_TOLERANCE};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn assert_cases(cases: Vec<(&'static str, f64)>, seed: u64) {
    let bad: Vec<_> = cases
        .iter()
        .filter(|(_, e)| e.is_nan() || *e >= FD_TOLERANCE)
        .collect();
    assert!(bad.is_empty(), "seed {seed}: {bad:?}");
}

#[test]
fn tape_ops_match_finite_differences() {
    for seed in SEEDS {
        assert_cases(op_cases(seed), seed);
    }
}

#[test]
fn layer_params_match_finite_differences() {
    for seed in SEEDS {
        assert_cases(layer_cases(seed), seed);
    }
}

#[test]
fn objectives_match_finite_differences() {
    for seed in SEEDS {
        assert_cases(loss_cases(seed), seed);
    }
}

#[test]
fn perturbed_rule_is_caught() {
    // the checker itself must notice a wrong gradient
    use itae::{Tape, Tensor5};
    let x = Tensor5::full([1, 1, 1, 1, 4], 1.5);
    let err = common::check_inputs(&[x], 0, |t: &Tape, v| {
        let wrong = t.record(v[0].value().map(|a| a * a), &[&v[0]], |g, _| {
            vec![Some(g.clone())]
        });
        Ok(wrong.sum())
    });
    assert!(err > 0.1, "error {err}");
}
