mod common;

use common::gradcheck::{primitive_error, MODEL_SUITES, PRIMITIVES, PRIMITIVE_TOL, TRIALS};
use common::{random_tensor, rng};
use pufm::nn::{Graph, Tensor};

#[test]
fn every_primitive_matches_central_differences() {
    let mut failures = Vec::new();
    for (i, name) in PRIMITIVES.iter().enumerate() {
        let err = primitive_error(name, TRIALS, 100 + i as u64);
        if !(err < PRIMITIVE_TOL) {
            failures.push(format!("{name}: {err:e}"));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn layers_models_and_losses_match_central_differences() {
    for (i, (name, suite, tol)) in MODEL_SUITES.iter().enumerate() {
        let err = suite(TRIALS, 500 + i as u64);
        assert!(err < *tol, "{name}: {err:e}");
    }
}

#[test]
fn detach_blocks_gradient() {
    let mut g = Graph::new();
    let x = g.input(random_tensor(&mut rng(1), 3, 2, 0.1)).unwrap();
    let d = g.detach(x).unwrap();
    let y = g.mul(d, d).unwrap();
    let s = g.sum(y).unwrap();
    let grads = g.backward(s);
    let gx = grads.get_or_zeros(x, g.value(x));
    assert!(gx.data().iter().all(|&v| v == 0.0));
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut g = Graph::new();
    let mut r = rng(2);
    let x = Tensor::matrix(4, 5, random_tensor(&mut r, 4, 5, 0.0).data().iter().map(|v| 30.0 * v).collect()).unwrap();
    let x = g.input(x).unwrap();
    let s = g.softmax_rows(x).unwrap();
    for i in 0..4 {
        let row = g.value(s).row(i);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| p > 0.0));
    }
}

#[test]
fn two_layer_chain_rule_by_hand() {
    // L = sum(relu(x W1) W2) with x = [1, 2], W1 = [[1, -1], [1, -1]], W2 = [[2], [3]].
    let mut g = Graph::new();
    let x = g.input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
    let w1 = g.input(Tensor::matrix(2, 2, vec![1.0, -1.0, 1.0, -1.0]).unwrap()).unwrap();
    let w2 = g.input(Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap()).unwrap();
    let h = g.matmul(x, w1).unwrap();
    let a = g.relu(h).unwrap();
    let y = g.matmul(a, w2).unwrap();
    let l = g.sum(y).unwrap();
    assert_eq!(g.value(l).item(), 6.0);
    let grads = g.backward(l);
    assert_eq!(grads.get(w2).unwrap().data(), &[3.0, 0.0]);
    assert_eq!(grads.get(w1).unwrap().data(), &[2.0, 0.0, 4.0, 0.0]);
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn max_pool_routes_gradient_to_lowest_tied_row() {
    let mut g = Graph::new();
    let x = g.input(Tensor::matrix(3, 1, vec![2.0, 2.0, 1.0]).unwrap()).unwrap();
    let m = g.max_pool(x).unwrap();
    let s = g.sum(m).unwrap();
    let grads = g.backward(s);
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn matmul_backward_within_one_in_a_million() {
    let err = primitive_error("matmul", TRIALS, 7);
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn non_finite_values_are_rejected() {
    let mut g = Graph::new();
    assert!(g.input(Tensor::matrix(1, 1, vec![f64::NAN]).unwrap()).is_err());
    let x = g.input(Tensor::matrix(1, 1, vec![1e300]).unwrap()).unwrap();
    assert!(g.scale(x, 1e300).is_err());
}
