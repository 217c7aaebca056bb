use proptest::prelude::*;

use swinlstm::selfcheck::{check_block_pair, check_full_model, check_ops, check_two_cell_steps, op_suite};
use swinlstm::tensor::{grad_check, kernels};
use swinlstm::{Tape, Tensor};

const OP_TOL: f64 = 1e-5;
const COMPOSITE_TOL: f64 = 1e-4;

#[test]
fn every_primitive_over_ten_seeds() {
    for seed in 0..10 {
        for (label, rep) in check_ops(seed, None).unwrap() {
            assert!(rep.passed(OP_TOL), "seed {seed} {label}: {}", rep.max_rel_error);
        }
    }
}

#[test]
fn composites_over_three_seeds() {
    for seed in 0..3 {
        assert!(check_block_pair(seed, None).unwrap().passed(COMPOSITE_TOL));
        assert!(check_two_cell_steps(seed, None).unwrap().passed(COMPOSITE_TOL));
        assert!(check_full_model(seed, None).unwrap().passed(COMPOSITE_TOL));
    }
}

#[test]
fn every_corrupted_rule_is_caught() {
    let mut names: Vec<&str> = op_suite(0).iter().map(|c| c.name).collect();
    names.sort();
    names.dedup();
    for name in names {
        let reports = check_ops(0, Some(name)).unwrap();
        assert!(
            reports.iter().any(|(_, r)| !r.passed(OP_TOL)),
            "corrupting `{name}` went unnoticed"
        );
    }
}

#[test]
fn gelu_uses_the_tanh_form() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[3], vec![-1.0, 0.0, 1.0]).unwrap());
    let y = tape.value(tape.gelu(x).unwrap());
    // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    assert!((y.data()[2] - 0.8411919906082768).abs() < 1e-12);
    assert!((y.data()[0] + 0.15880800939172324).abs() < 1e-12);
    assert_eq!(y.data()[1], 0.0);
}

#[test]
fn softmax_is_shift_invariant_and_stable() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[1, 3], vec![1000.0, 1001.0, 1002.0]).unwrap());
    let y = tape.value(tape.softmax(x, 1).unwrap());
    let z = tape.constant(Tensor::new(&[1, 3], vec![0.0, 1.0, 2.0]).unwrap());
    let w = tape.value(tape.softmax(z, 1).unwrap());
    assert!(y.max_abs_diff(&w) < 1e-15);
}

fn small_tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0..2.0f64, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_equals_triple_loop(a in small_tensor(vec![3, 4]), b in small_tensor(vec![4, 2])) {
        let c = kernels::matmul(&a, false, &b, false).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let want: f64 = (0..4).map(|k| a.get(&[i, k]) * b.get(&[k, j])).sum();
                prop_assert!((c.get(&[i, j]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_gradient_is_linear(x in small_tensor(vec![2, 3]), y in small_tensor(vec![2, 3]), a in -2.0..2.0f64) {
        // d/dx [a * sum(concat(x, y)^2)] = 2 a x
        let tape = Tape::<f64>::new();
        let (xv, yv) = (tape.leaf(x.clone(), true), tape.leaf(y, true));
        let cat = tape.concat(&[xv, yv], 0).unwrap();
        let loss = tape.scale(tape.sum(tape.square(cat).unwrap()).unwrap(), a).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gx = grads.wrt(xv).unwrap();
        for (g, v) in gx.data().iter().zip(x.data()) {
            prop_assert!((g - 2.0 * a * v).abs() < 1e-12);
        }
    }

    #[test]
    fn broadcast_gradient_sums_over_repeats(x in small_tensor(vec![4, 3]), b in small_tensor(vec![3])) {
        let tape = Tape::<f64>::new();
        let (xv, bv) = (tape.leaf(x, true), tape.leaf(b, true));
        let loss = tape.sum(tape.add(xv, bv).unwrap()).unwrap();
        let grads = tape.backward(loss).unwrap();
        prop_assert!(grads.wrt(bv).unwrap().data().iter().all(|&g| g == 4.0));
    }

    #[test]
    fn tanh_gradient_matches_finite_differences(x in small_tensor(vec![5])) {
        let rep = grad_check(|t, v| t.tanh(v), &x, 1e-6).unwrap();
        prop_assert!(rep.passed(OP_TOL));
    }

    #[test]
    fn permute_roundtrip(x in small_tensor(vec![2, 3, 4])) {
        let p = kernels::permute(&x, &[2, 0, 1]).unwrap();
        let back = kernels::permute(&p, &[1, 2, 0]).unwrap();
        prop_assert_eq!(back, x);
    }
}
