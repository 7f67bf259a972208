use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>())
}

/// Central differences of `f` at `x`.
fn numeric_grad(x: &Tensor<f64>, f: &dyn Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    let h = 1e-5;
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

fn assert_grad_close(analytic: &[f64], numeric: &[f64]) {
    for (a, n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        if scale < 1e-3 {
            assert!((a - n).abs() < 1e-7, "analytic {a} numeric {n}");
        } else {
            assert!((a - n).abs() / scale < 1e-4, "analytic {a} numeric {n}");
        }
    }
}

#[test]
fn add_is_elementwise() {
    let tape = Tape::new();
    let out = tape.add(&t(&[2], &[1.0, 2.0]), &t(&[2], &[3.0, 4.0])).unwrap();
    assert_eq!(out.data(), &[4.0, 6.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let tape = Tape::new();
    let out = tape.softmax(&t(&[1, 3], &[0.0, 0.0, 0.0])).unwrap();
    for v in out.data() {
        assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, &[2, 3]);
    let b = random(&mut rng, &[3, 2]);
    let tape = Tape::new();
    let out = tape.matmul(&a, &b).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..3 {
                s += a.at(i, k) * b.at(k, j);
            }
            assert_abs_diff_eq!(out.at(i, j), s, epsilon = 1e-12);
        }
    }
}

#[test]
fn broadcasting_follows_numpy_rules() {
    let tape = Tape::new();
    let m = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let row = t(&[3], &[10.0, 20.0, 30.0]);
    let col = t(&[2, 1], &[100.0, 200.0]);
    assert_eq!(tape.add(&m, &row).unwrap().data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    assert_eq!(
        tape.add(&m, &col).unwrap().data(),
        &[101.0, 102.0, 103.0, 204.0, 205.0, 206.0]
    );
    let err = tape.add(&m, &t(&[2], &[1.0, 2.0])).unwrap_err();
    assert!(matches!(err, Error::Shape { op: "add", .. }), "{err}");
}

#[test]
fn domain_errors_are_reported_not_nan() {
    let tape = Tape::new();
    assert!(matches!(
        tape.log(&t(&[2], &[1.0, 0.0])),
        Err(Error::Domain { op: "log", .. })
    ));
    assert!(matches!(
        tape.div(&t(&[1], &[1.0]), &t(&[1], &[0.0])),
        Err(Error::Domain { op: "div", .. })
    ));
    assert!(matches!(
        tape.pow(&t(&[1], &[-1.0]), 0.5),
        Err(Error::Domain { op: "pow", .. })
    ));
    assert!(tape.matmul(&t(&[2, 3], &[0.0; 6]), &t(&[2, 3], &[0.0; 6])).is_err());
}

#[test]
fn square_sum_gradient() {
    let tape = Tape::new();
    let x = tape.param(&t(&[3], &[1.0, 2.0, 3.0]));
    let loss = tape.sum(&tape.mul(&x, &x).unwrap()).unwrap();
    let g = tape.backward(&loss).unwrap();
    assert_eq!(g.get(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn constant_loss_gives_zero_gradients() {
    let tape = Tape::new();
    let x = tape.param(&t(&[2], &[1.0, 2.0]));
    let c = t(&[2], &[5.0, 6.0]);
    let loss = tape.sum(&c).unwrap();
    let g = tape.backward(&loss).unwrap();
    assert_eq!(g.get(&x).unwrap().data(), &[0.0, 0.0]);
    assert!(g.get(&c).is_none());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let tape = Tape::new();
    let x = tape.param(&t(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.backward(&x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn foreign_tensor_is_rejected() {
    let a = Tape::<f64>::new();
    let b = Tape::<f64>::new();
    let x = a.param(&t(&[1], &[1.0]));
    assert!(matches!(b.exp(&x), Err(Error::ForeignTensor)));
}

fn two_layer(tape: &Tape<f64>, x: &Tensor<f64>, w1: &Tensor<f64>, w2: &Tensor<f64>) -> Tensor<f64> {
    let h = tape.tanh(&tape.matmul(x, w1).unwrap()).unwrap();
    let y = tape.tanh(&tape.matmul(&h, w2).unwrap()).unwrap();
    tape.sum(&tape.mul(&y, &y).unwrap()).unwrap()
}

#[test]
fn two_layer_tanh_net_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, &[4, 3]);
    let w1 = random(&mut rng, &[3, 5]);
    let w2 = random(&mut rng, &[5, 2]);
    let tape = Tape::new();
    let p1 = tape.param(&w1);
    let p2 = tape.param(&w2);
    let g = tape.backward(&two_layer(&tape, &x, &p1, &p2)).unwrap();
    let f1 = |w: &Tensor<f64>| two_layer(&Tape::new(), &x, w, &w2).item();
    let f2 = |w: &Tensor<f64>| two_layer(&Tape::new(), &x, &w1, w).item();
    assert_grad_close(g.get(&p1).unwrap().data(), &numeric_grad(&w1, &f1));
    assert_grad_close(g.get(&p2).unwrap().data(), &numeric_grad(&w2, &f2));
}

#[test]
fn every_op_passes_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = random(&mut rng, &[3, 4]);
    let y0 = random(&mut rng, &[3, 4]);
    let build = |tape: &Tape<f64>, x: &Tensor<f64>, y: &Tensor<f64>| -> Tensor<f64> {
        let pos = tape.shift(&tape.mul(x, x).unwrap(), 0.5).unwrap();
        let parts = [
            tape.add(x, y).unwrap(),
            tape.sub(x, y).unwrap(),
            tape.div(y, &pos).unwrap(),
            tape.log(&pos).unwrap(),
            tape.pow(&pos, 1.5).unwrap(),
            tape.exp(&tape.scale(x, 0.3).unwrap()).unwrap(),
            tape.softmax(x).unwrap(),
            tape.log_softmax(y).unwrap(),
            tape.sigmoid(x).unwrap(),
            tape.relu(&tape.shift(x, 0.0123).unwrap()).unwrap(),
            tape.smooth_l1(&tape.sub(x, y).unwrap(), 1.0).unwrap(),
            tape.neg(x).unwrap(),
        ];
        let refs: Vec<&Tensor<f64>> = parts.iter().collect();
        let cat = tape.concat(&refs, 1).unwrap();
        let gathered = tape.gather_rows(&cat, &[2, 0, 0, 1]).unwrap();
        let tr = tape.transpose(&gathered).unwrap();
        let mm = tape.matmul(&gathered, &tape.tanh(&tr).unwrap()).unwrap();
        let rs = tape.reshape(&mm, &[16]).unwrap();
        let bc = tape.broadcast(&tape.sum_axis(&x.clone(), 0).unwrap(), &[3, 4]).unwrap();
        let m1 = tape.mean_axis(&tape.mul(&bc, y).unwrap(), 1).unwrap();
        let total = tape.add(&tape.mean(&rs).unwrap(), &tape.sum(&m1).unwrap()).unwrap();
        tape.mul(&total, &total).unwrap()
    };
    let tape = Tape::new();
    let x = tape.param(&x0);
    let y = tape.param(&y0);
    let g = tape.backward(&build(&tape, &x, &y)).unwrap();
    let fx = |v: &Tensor<f64>| build(&Tape::new(), v, &y0).item();
    let fy = |v: &Tensor<f64>| build(&Tape::new(), &x0, v).item();
    assert_grad_close(g.get(&x).unwrap().data(), &numeric_grad(&x0, &fx));
    assert_grad_close(g.get(&y).unwrap().data(), &numeric_grad(&y0, &fy));
}

#[test]
fn backward_is_deterministic_and_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x0 = random(&mut rng, &[5]);
    let tape = Tape::new();
    let x = tape.param(&x0);
    let f = tape.sum(&tape.tanh(&x).unwrap()).unwrap();
    let h = tape.sum(&tape.exp(&x).unwrap()).unwrap();
    let (a, b) = (1.7, -0.4);
    let combo = tape
        .add(&tape.scale(&f, a).unwrap(), &tape.scale(&h, b).unwrap())
        .unwrap();
    let g1 = tape.backward(&combo).unwrap().get(&x).unwrap();
    let g2 = tape.backward(&combo).unwrap().get(&x).unwrap();
    assert_eq!(g1, g2);
    let gf = tape.backward(&f).unwrap().get(&x).unwrap();
    let gh = tape.backward(&h).unwrap().get(&x).unwrap();
    for i in 0..5 {
        assert_abs_diff_eq!(g1.data()[i], a * gf.data()[i] + b * gh.data()[i], epsilon = 1e-12);
    }
}

#[test]
fn straight_through_copies_gradient() {
    let tape = Tape::new();
    let z = tape.param(&t(&[2], &[0.3, -0.2]));
    let q = tape.straight_through(&z, &t(&[2], &[1.0, 0.0])).unwrap();
    assert_eq!(q.data(), &[1.0, 0.0]);
    let loss = tape.sum(&tape.scale(&q, 3.0).unwrap()).unwrap();
    assert_eq!(tape.backward(&loss).unwrap().get(&z).unwrap().data(), &[3.0, 3.0]);
}

#[test]
fn sgd_step() {
    let mut opt = Optimizer::new(OptimMethod::Sgd, 0.1).unwrap();
    let mut p = Tensor::vector(vec![1.0]);
    opt.step(&mut [&mut p], &[Tensor::vector(vec![2.0])]).unwrap();
    assert_abs_diff_eq!(p.data()[0], 0.8, epsilon = 1e-15);
    assert_eq!(opt.step_count(), 1);
    opt.step(&mut [&mut p], &[Tensor::vector(vec![0.0])]).unwrap();
    assert_abs_diff_eq!(p.data()[0], 0.8, epsilon = 1e-15);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // t = 1: mhat = g, vhat = g^2, so the step is lr * g / (|g| + eps).
    let mut opt = Optimizer::new(OptimMethod::adam(), 1e-3).unwrap();
    let mut p = Tensor::vector(vec![0.5]);
    opt.step(&mut [&mut p], &[Tensor::vector(vec![1.0])]).unwrap();
    assert_abs_diff_eq!(p.data()[0], 0.5 - 1e-3 / (1.0 + 1e-8), epsilon = 1e-15);
}

#[test]
fn non_positive_learning_rate_is_rejected() {
    assert!(Optimizer::<f64>::new(OptimMethod::Sgd, 0.0).is_err());
    assert!(Optimizer::<f64>::new(OptimMethod::adam(), -1.0).is_err());
}

#[test]
fn single_precision_tape() {
    let tape = Tape::<f32>::new();
    let x = tape.param(&Tensor::vector(vec![1.0f32, 2.0]));
    let loss = tape.sum(&tape.mul(&x, &x).unwrap()).unwrap();
    assert_eq!(tape.backward(&loss).unwrap().get(&x).unwrap().data(), &[2.0f32, 4.0]);
}
