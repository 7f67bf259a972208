use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec_t(v: &[f64]) -> Tensor<f64> {
    Tensor::vector(v.to_vec())
}

fn check_fd(x: &Tensor<f64>, f: &dyn Fn(&Tape<f64>, &Tensor<f64>) -> Tensor<f64>) {
    let tape = Tape::new();
    let xp = tape.param(x);
    let out = f(&tape, &xp);
    let analytic = tape.backward(&out).unwrap().get(&xp).unwrap();
    let eval = |x: &Tensor<f64>| f(&Tape::new(), x).item();
    let h = 1e-5;
    for i in 0..x.len() {
        let (mut plus, mut minus) = (x.clone(), x.clone());
        plus.data_mut()[i] += h;
        minus.data_mut()[i] -= h;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let a = analytic.data()[i];
        let scale = a.abs().max(numeric.abs());
        if scale < 1e-3 {
            assert!((a - numeric).abs() < 1e-7, "entry {i}: {a} vs {numeric}");
        } else {
            assert!((a - numeric).abs() / scale < 1e-4, "entry {i}: {a} vs {numeric}");
        }
    }
}

fn weighted_sum(tape: &Tape<f64>, t: &Tensor<f64>) -> Tensor<f64> {
    let w = Tensor::new(t.shape().to_vec(), (0..t.len()).map(|i| 0.3 + i as f64 * 0.7).collect()).unwrap();
    tape.sum(&tape.mul(t, &w).unwrap()).unwrap()
}

#[test]
fn cat_concrete_zero_noise_unit_temperature_is_identity() {
    let tape = Tape::new();
    let p = vec_t(&[0.2, 0.3, 0.5]);
    let out = cat_concrete(&tape, &p, 1.0, &Tensor::zeros(vec![3])).unwrap();
    for (o, e) in out.data().iter().zip(p.data()) {
        assert!((o - e).abs() < 1e-9);
    }
}

#[test]
fn cat_concrete_cold_limit_is_one_hot() {
    let tape = Tape::new();
    let p = vec_t(&[0.2, 0.3, 0.5]);
    let g = vec_t(&[0.9, 0.1, -0.2]);
    let out = cat_concrete(&tape, &p, 1e-6, &g).unwrap();
    let scores: Vec<f64> = p.data().iter().zip(g.data()).map(|(p, g)| p.ln() + g).collect();
    let arg = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    for (k, v) in out.data().iter().enumerate() {
        assert!((v - if k == arg { 1.0 } else { 0.0 }).abs() < 1e-12);
    }
}

#[test]
fn cat_concrete_errors() {
    let tape = Tape::new();
    let p = vec_t(&[0.5, 0.5]);
    let g = Tensor::zeros(vec![2]);
    assert!(matches!(cat_concrete(&tape, &p, 0.0, &g), Err(Error::InvalidArgument(_))));
    assert!(cat_concrete(&tape, &p, -1.0, &g).is_err());
    assert!(cat_concrete(&tape, &vec_t(&[0.5, 0.7]), 1.0, &g).is_err());
    assert!(cat_concrete(&tape, &p, 1.0, &Tensor::zeros(vec![3])).is_err());
}

#[test]
fn cat_concrete_argmax_frequencies_follow_p() {
    let n = 100_000;
    let p = [0.2, 0.3, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let g: Tensor<f64> = NoiseSpec::new(NoiseFamily::Gumbel, vec![3]).sample_batch(&mut rng, Some(n));
    let tape = Tape::new();
    let out = cat_concrete(&tape, &vec_t(&p), 0.5, &g).unwrap();
    let mut counts = [0usize; 3];
    for i in 0..n {
        let row = out.row(i);
        counts[(0..3).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()] += 1;
    }
    for k in 0..3 {
        let sd = (n as f64 * p[k] * (1.0 - p[k])).sqrt();
        assert!((counts[k] as f64 - n as f64 * p[k]).abs() < 3.0 * sd, "category {k}: {}", counts[k]);
    }
}

#[test]
fn gumbel_draws_are_finite_with_right_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|_| gumbel(&mut rng)).collect();
    assert!(draws.iter().all(|d| d.is_finite()));
    let mean = draws.iter().sum::<f64>() / n as f64;
    // Euler-Mascheroni constant; Gumbel variance is pi^2/6.
    let sd = (std::f64::consts::PI.powi(2) / 6.0 / n as f64).sqrt();
    assert!((mean - 0.577_215_664_9).abs() < 3.0 * sd);
}

#[test]
fn gaussian_reparam_examples() {
    let tape = Tape::new();
    let mu = vec_t(&[1.0, -2.0]);
    let out = gaussian_reparam(&tape, &mu, &vec_t(&[2.0, 3.0]), &Tensor::zeros(vec![2])).unwrap();
    assert_eq!(out.data(), mu.data());
    let out = gaussian_reparam(&tape, &vec_t(&[0.0]), &vec_t(&[1.0]), &vec_t(&[1.5])).unwrap();
    assert_eq!(out.data(), &[1.5]);
    assert!(gaussian_reparam(&tape, &mu, &vec_t(&[1.0, 0.0]), &Tensor::zeros(vec![2])).is_err());
    assert!(gaussian_reparam(&tape, &mu, &vec_t(&[1.0, -1.0]), &Tensor::zeros(vec![2])).is_err());
}

#[test]
fn gaussian_reparam_moments() {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u: Tensor<f64> = NoiseSpec::new(NoiseFamily::Gaussian, vec![n]).sample(&mut rng);
    let tape = Tape::new();
    let x = gaussian_reparam(&tape, &vec_t(&[2.0]), &vec_t(&[3.0]), &u).unwrap();
    let mean = x.sum() / n as f64;
    let sd = (x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((mean - 2.0).abs() < 3.0 * 3.0 / (n as f64).sqrt());
    assert!((sd - 3.0).abs() < 0.02 * 3.0);
}

#[test]
fn poisson_gaussian_examples() {
    let tape = Tape::new();
    let z = vec_t(&[0.0, 1.0]);
    let rates = vec_t(&[10f64.ln(), 16f64.ln()]);
    let x = poisson_gaussian(&tape, &z, &rates, &vec_t(&[0.0])).unwrap();
    assert!((x.item() - 16.0).abs() < 1e-12);
    let x = poisson_gaussian(&tape, &z, &rates, &vec_t(&[1.0])).unwrap();
    assert!((x.item() - 20.0).abs() < 1e-12);
    assert!(poisson_gaussian(&tape, &vec_t(&[1.0, 0.0, 0.0]), &rates, &vec_t(&[0.0])).is_err());
}

#[test]
fn poisson_gaussian_moments() {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u: Tensor<f64> = NoiseSpec::new(NoiseFamily::Gaussian, vec![n]).sample(&mut rng);
    let z = Tensor::matrix(n, 2, (0..n).flat_map(|_| [1.0, 0.0]).collect()).unwrap();
    let tape = Tape::new();
    let x = poisson_gaussian(&tape, &z, &vec_t(&[10f64.ln(), 0.0]), &u).unwrap();
    let mean = x.sum() / n as f64;
    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - 10.0).abs() < 3.0 * (10.0 / n as f64).sqrt());
    assert!((var - 10.0).abs() < 0.5);
}

#[test]
fn dirichlet_laplace_examples() {
    let tape = Tape::new();
    let (mu, sigma) = dirichlet_laplace(&tape, &Tensor::full(vec![10], 3.7)).unwrap();
    assert!(mu.data().iter().all(|m: &f64| m.abs() < 1e-12));
    let (_, sigma_small) = dirichlet_laplace(&tape, &Tensor::full(vec![10], 0.1)).unwrap();
    // Direct evaluation of the variance formula.
    let oracle = |alpha: &[f64], k: usize| {
        let kk = alpha.len() as f64;
        (1.0 / alpha[k]) * (1.0 - 2.0 / kk) + alpha.iter().map(|a| 1.0 / a).sum::<f64>() / (kk * kk)
    };
    for v in sigma_small.data() {
        assert!((v - oracle(&[0.1; 10], 0)).abs() < 1e-12);
        assert!((v - 9.0).abs() < 1e-12);
    }
    let (_, s2) = dirichlet_laplace(&tape, &vec_t(&[1.0, 1.0])).unwrap();
    assert!(s2.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    assert!(sigma.data().iter().all(|v| *v > 0.0));
    assert!(dirichlet_laplace(&tape, &vec_t(&[1.0, 0.0])).is_err());
    assert!(dirichlet_laplace(&tape, &vec_t(&[1.0, -2.0])).is_err());
}

#[test]
fn dirichlet_laplace_uniform_alpha_has_uniform_mean() {
    let n = 100_000;
    let k = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u: Tensor<f64> = NoiseSpec::new(NoiseFamily::Gaussian, vec![k]).sample_batch(&mut rng, Some(n));
    let tape = Tape::new();
    let theta = dirichlet_laplace_sample(&tape, &Tensor::full(vec![k], 0.5), &u).unwrap();
    for j in 0..k {
        let col: Vec<f64> = (0..n).map(|i| theta.at(i, j)).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 1.0 / k as f64).abs() < 3.0 * sd / (n as f64).sqrt(), "component {j}: {mean}");
    }
}

#[test]
fn quantize_examples() {
    let centroids = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, -1.0]]).unwrap();
    let ones = Tensor::full(vec![3, 2], 1.0);
    let tape = Tape::new();
    let (k, mu) = quantize(&tape, &vec_t(&[5.0, -1.0]), &centroids, &ones).unwrap();
    assert_eq!(k, 2);
    assert_eq!(mu.data(), &[5.0, -1.0]);
    let (k, _) = quantize(&tape, &vec_t(&[0.5, 0.5]), &centroids, &ones).unwrap();
    assert_eq!(k, 0);
    // A wide second centroid wins under Mahalanobis but not under Euclid.
    let sig = Tensor::from_rows(&[vec![1.0, 1.0], vec![100.0, 100.0], vec![1.0, 1.0]]).unwrap();
    let z = vec_t(&[-0.4, 0.0]);
    assert_eq!(quantize(&tape, &z, &centroids, &ones).unwrap().0, 0);
    assert_eq!(quantize(&tape, &z, &centroids, &sig).unwrap().0, 1);
    assert_eq!(quantize(&tape, &vec_t(&[3.0, 3.0]), &centroids, &sig).unwrap().0, 1);
}

#[test]
fn quantize_gradient_is_straight_through() {
    let centroids = Tensor::from_rows(&[vec![0.0, 0.0], vec![4.0, 4.0]]).unwrap();
    let tape = Tape::new();
    let z = tape.param(&vec_t(&[3.0, 3.5]));
    let (_, mu) = quantize(&tape, &z, &centroids, &Tensor::full(vec![2, 2], 1.0)).unwrap();
    let loss = weighted_sum(&tape, &mu);
    let g = tape.backward(&loss).unwrap().get(&z).unwrap();
    assert_eq!(g.data(), &[0.3, 1.0]);
}

#[test]
fn reparam_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g: Tensor<f64> = NoiseSpec::new(NoiseFamily::Gumbel, vec![3]).sample_batch(&mut rng, Some(2));
    let u: Tensor<f64> = NoiseSpec::new(NoiseFamily::Gaussian, vec![3]).sample_batch(&mut rng, Some(2));

    check_fd(&vec_t(&[0.2, -0.4, 0.9]), &|tape, x| {
        weighted_sum(tape, &cat_concrete_logits(tape, x, 0.7, &g).unwrap())
    });
    check_fd(&vec_t(&[0.1, 1.4, 0.3]), &|tape, x| {
        weighted_sum(tape, &gaussian_reparam(tape, x, &vec_t(&[0.5, 1.0, 2.0]), &u).unwrap())
    });
    check_fd(&vec_t(&[0.5, 1.0, 2.0]), &|tape, x| {
        weighted_sum(tape, &gaussian_reparam(tape, &vec_t(&[0.1, 1.4, 0.3]), x, &u).unwrap())
    });
    let z = Tensor::from_rows(&[vec![0.1, 0.7, 0.2], vec![0.0, 0.0, 1.0]]).unwrap();
    let un = vec_t(&[0.4, -1.1]);
    check_fd(&vec_t(&[2.0, 2.5, 3.0]), &|tape, x| {
        weighted_sum(tape, &poisson_gaussian(tape, &z, x, &un).unwrap())
    });
    check_fd(&vec_t(&[0.3, 1.5, 0.8]), &|tape, x| {
        weighted_sum(tape, &dirichlet_laplace_sample(tape, x, &u).unwrap())
    });
}

#[test]
fn cat_concrete_gradient_wrt_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g: Tensor<f64> = NoiseSpec::new(NoiseFamily::Gumbel, vec![3]).sample(&mut rng);
    let tape = Tape::new();
    let p = tape.param(&vec_t(&[0.2, 0.3, 0.5]));
    let out = weighted_sum(&tape, &cat_concrete(&tape, &p, 0.8, &g).unwrap());
    let analytic = tape.backward(&out).unwrap().get(&p).unwrap();
    // Oracle: differentiate the closed form directly.
    let f = |p: &[f64]| {
        let s: Vec<f64> = p.iter().zip(g.data()).map(|(p, g)| ((p + 1e-10).ln() + g) / 0.8).collect();
        let m = s.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
        s.iter().enumerate().map(|(i, v)| (v - m).exp() / z * (0.3 + 0.7 * i as f64)).sum::<f64>()
    };
    for i in 0..3 {
        let mut plus = vec![0.2, 0.3, 0.5];
        let mut minus = plus.clone();
        plus[i] += 1e-6;
        minus[i] -= 1e-6;
        let num = (f(&plus) - f(&minus)) / 2e-6;
        assert!((num - analytic.data()[i]).abs() < 1e-6 * num.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cat_concrete_stays_in_simplex(seed in any::<u64>(), k in 2usize..8, tau in 0.01f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        let p = vec_t(&raw.iter().map(|v| v / s).collect::<Vec<_>>());
        let g: Tensor<f64> = NoiseSpec::new(NoiseFamily::Gumbel, vec![k]).sample(&mut rng);
        let out = cat_concrete(&Tape::new(), &p, tau, &g).unwrap();
        prop_assert!((out.sum() - 1.0).abs() < 1e-9);
        prop_assert!(out.data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn unit_sigma_quantize_is_nearest_euclidean(seed in any::<u64>(), k in 1usize..6, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centroids = Tensor::matrix(k, d, (0..k * d).map(|_| rng.random::<f64>()).collect()).unwrap();
        let z: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let got = nearest_centroid(&z, &centroids, &Tensor::full(vec![k, d], 1.0)).unwrap();
        let dist = |j: usize| centroids.row(j).iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let brute = (0..k).fold(0, |best, j| if dist(j) < dist(best) { j } else { best });
        prop_assert_eq!(got, brute);
    }
}

#[test]
fn cold_cat_concrete_argmax_agrees_with_gumbel_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 10_000;
    let k = 5;
    let g: Tensor<f64> = NoiseSpec::new(NoiseFamily::Gumbel, vec![k]).sample_batch(&mut rng, Some(trials));
    let raw: Vec<f64> = (0..trials * k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let rows: Vec<Vec<f64>> = raw
        .chunks(k)
        .map(|c| {
            let s: f64 = c.iter().sum();
            c.iter().map(|v| v / s).collect()
        })
        .collect();
    let p = Tensor::from_rows(&rows).unwrap();
    let out = cat_concrete(&Tape::new(), &p, 0.01, &g).unwrap();
    for i in 0..trials {
        let argmax = |v: &[f64]| (0..k).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        let scores: Vec<f64> = (0..k).map(|j| (p.at(i, j) + 1e-10).ln() + g.at(i, j)).collect();
        assert_eq!(argmax(out.row(i)), argmax(&scores));
    }
}

#[test]
fn ties_go_to_lowest_index() {
    let centroids = Tensor::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
    assert_eq!(nearest_centroid(&[0.0], &centroids, &Tensor::full(vec![2, 1], 1.0)).unwrap(), 0);
    let zero_dist = nearest_centroid(&[1.0], &centroids, &Tensor::full(vec![2, 1], 2.0)).unwrap();
    assert_eq!(zero_dist, 1);
}

#[test]
fn noise_spec_roundtrips_through_json() {
    let spec = NoiseSpec::new(NoiseFamily::Uniform, vec![2, 3]);
    let json = serde_json::to_string(&spec).unwrap();
    assert_eq!(serde_json::from_str::<NoiseSpec>(&json).unwrap(), spec);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let u: Tensor<f64> = spec.sample(&mut rng);
    assert_eq!(u.shape(), &[2, 3]);
    assert!(u.data().iter().all(|v| *v > 0.0 && *v < 1.0));
}
