use super::*;
use crate::graph::{
    ancestral_sample, register_forward_params, BackwardMap, DagModel, DagSpec, Domain, ForwardSpec, NodeSpec, SampleMode,
};
use crate::reparam::{NoiseFamily, NoiseSpec};
use rand::{Rng, SeedableRng};

fn t(v: &[f64]) -> Tensor<f64> {
    Tensor::matrix(v.len(), 1, v.to_vec()).unwrap()
}

fn cost(target: &[f64], recon: &[f64], kind: CostKind) -> f64 {
    let tape = Tape::new();
    reconstruction_cost(&tape, &t(target), &t(recon), kind).unwrap().item()
}

/// Z ~ N(0, 1) hidden, X = mu + Z observed.
fn location_spec(mu: f64) -> DagSpec {
    DagSpec {
        nodes: vec![
            NodeSpec {
                name: "z".into(),
                domain: Domain::Real { dim: 1 },
                exogenous: NoiseSpec::new(NoiseFamily::Gaussian, vec![1]),
                forward: ForwardSpec::Linear {
                    weight: vec![],
                    bias: vec![0.0],
                    scale: vec![1.0],
                },
                frozen: vec!["bias".into(), "scale".into()],
            },
            NodeSpec {
                name: "x".into(),
                domain: Domain::Real { dim: 1 },
                exogenous: NoiseSpec::new(NoiseFamily::Gaussian, vec![1]),
                forward: ForwardSpec::Linear {
                    weight: vec![vec![1.0]],
                    bias: vec![mu],
                    scale: vec![0.0],
                },
                frozen: vec!["weight".into(), "scale".into()],
            },
        ],
        edges: vec![[0, 1]],
        observed: vec![1],
    }
}

fn location_data(mu: f64, n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = location_spec(mu);
    let mut store = ParamStore::new();
    register_forward_params(&spec, &mut store).unwrap();
    ancestral_sample(&spec, &store, n, &mut rng, SampleMode::Hard).unwrap().remove(1)
}

fn location_model(mu_init: f64, data: Tensor<f64>, seed: u64) -> (DagModel<f64>, ParamStore<f64>) {
    let model = DagModel::with_amortized_backward(location_spec(mu_init), vec![data], &[16]).unwrap();
    let mut store = ParamStore::new();
    model.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (model, store)
}

#[test]
fn reconstruction_cost_examples() {
    for kind in [CostKind::SquaredError, CostKind::SmoothL1] {
        assert_eq!(cost(&[0.3, -1.0], &[0.3, -1.0], kind), 0.0);
    }
    let tape = Tape::new();
    let p = Tensor::from_rows(&[vec![0.2, 0.8], vec![1.0, 0.0]]).unwrap();
    let ce: f64 = reconstruction_cost(&tape, &p, &p, CostKind::CrossEntropy).unwrap().item();
    assert!(ce.abs() < 1e-9);
    assert_eq!(cost(&[0.0], &[2.0], CostKind::SquaredError), 4.0);
    assert_eq!(cost(&[0.0], &[0.5], CostKind::SmoothL1), 0.125);
    assert_eq!(cost(&[0.0], &[2.0], CostKind::SmoothL1), 1.5);
    // Row sums, batch mean.
    assert_eq!(cost(&[0.0, 0.0], &[1.0, 3.0], CostKind::SquaredError), 5.0);
    assert!(reconstruction_cost(&tape, &t(&[0.0]), &t(&[0.0, 1.0]), CostKind::SquaredError).is_err());
}

#[test]
fn config_validation() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        TrainConfig { batch_size: 1, ..ok.clone() },
        TrainConfig { eta: -0.1, ..ok.clone() },
        TrainConfig { lr: 0.0, ..ok.clone() },
        TrainConfig { tau: 0.0, ..ok.clone() },
        TrainConfig {
            divergence: DivergenceKind::sinkhorn(0.0),
            ..ok.clone()
        },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    let json = serde_json::to_string(&ok).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), ok);
}

#[test]
fn report_identity_and_serialisation() {
    let mut report = LossReport::new(vec!["a".into(), "b".into()], 0.5);
    let step = |recon: f64, d: [f64; 2]| StepRecord {
        step: 0,
        epoch: 0,
        total: recon + 0.5 * (d[0] + d[1]),
        recon,
        divergences: d.to_vec(),
    };
    report.push_epoch(0, &[step(1.0, [0.2, 0.4]), step(3.0, [0.1, 0.1])]);
    let e = &report.epochs[0];
    assert!((e.total - (e.recon + 0.5 * e.divergences.iter().sum::<f64>())).abs() < 1e-12);
    let csv = report.to_csv().unwrap();
    assert!(csv.starts_with("epoch,total,recon,div_a,div_b\n"));
    assert!(csv.contains("0,2.2,2,0.15,0.25"), "{csv}");
    let back: LossReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    assert_eq!(format_float(1.0 / 3.0), "0.333333333");
    assert_eq!(format_float(123456789012.0), "123456789000");
}

/// Backward that emits `offset + noise`, ignoring the input.
struct Shifted(f64);

impl BackwardMap<f64> for Shifted {
    fn register(&self, _: &mut ParamStore<f64>, _: &mut dyn RngCore) -> Result<()> {
        Ok(())
    }
    fn draw_noise(&self, rows: usize, rng: &mut dyn RngCore) -> Tensor<f64> {
        NoiseSpec::new(NoiseFamily::Gaussian, vec![1]).sample_batch(rng, Some(rows))
    }
    fn sample(&self, tape: &Tape<f64>, _: &Bound<'_, f64>, _: &Tensor<f64>, u: &Tensor<f64>, _: f64) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![tape.shift(u, self.0)?])
    }
}

fn penalty(offset: f64, seed: u64, divergence: DivergenceKind) -> f64 {
    let data = location_data(0.0, 200, seed);
    let model = DagModel::new(location_spec(0.0), vec![data], vec![Box::new(Shifted(offset))]).unwrap();
    let mut store = ParamStore::new();
    register_forward_params(model.spec(), &mut store).unwrap();
    let config = TrainConfig {
        divergence,
        ..TrainConfig::default()
    };
    let batch: Vec<usize> = (0..200).collect();
    let noise = model.draw_noise(&batch, &config, &mut ChaCha8Rng::seed_from_u64(seed + 1000)).unwrap();
    let tape = Tape::new();
    let terms = model.evaluate(&tape, &store.bind(&tape), &batch, &noise, &config).unwrap();
    assert_eq!(terms.divergences.len(), 1);
    let total = terms.total(&tape, config.eta).unwrap().item();
    assert!((total - (terms.recon.item() + config.eta * terms.divergences[0].1.item())).abs() < 1e-12);
    terms.divergences[0].1.item()
}

#[test]
fn penalty_of_exact_posterior_matches_same_distribution_baseline() {
    // The baseline compares two independent model minibatches directly.
    let baseline = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 5000);
        let a: Vec<f64> = (0..200).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let b: Vec<f64> = (0..200).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        crate::ot::wasserstein_1d(&a, &b, 2).unwrap()
    };
    let kind = DivergenceKind::Wasserstein1d { p: 2 };
    let ours: Vec<f64> = (0..50).map(|s| penalty(0.0, s, kind)).collect();
    let base: Vec<f64> = (0..50).map(baseline).collect();
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
    };
    let ((m1, v1), (m2, v2)) = (stats(&ours), stats(&base));
    let welch = (m1 - m2) / (v1 / 50.0 + v2 / 50.0).sqrt();
    assert!(welch.abs() < 3.0, "welch t {welch}");
}

#[test]
fn shifted_backward_pays_translation_cost() {
    for kind in [DivergenceKind::Wasserstein1d { p: 2 }, DivergenceKind::Exact { ground: GroundMetric::SquaredEuclidean }] {
        for seed in 0..5 {
            let diff = penalty(10.0, seed, kind) - penalty(0.0, seed, kind);
            assert!((diff - 100.0).abs() < 6.0, "{kind:?}: {diff}");
        }
    }
}

#[test]
fn location_model_recovers_mean() {
    let data = location_data(3.0, 2000, 1);
    let (model, mut store) = location_model(0.0, data, 2);
    let config = TrainConfig {
        eta: 1.0,
        batch_size: 100,
        epochs: 200,
        lr: 0.05,
        backward_lr: Some(0.01),
        divergence: DivergenceKind::Wasserstein1d { p: 2 },
        seed: 3,
        ..TrainConfig::default()
    };
    let report = train(&model, &mut store, &config).unwrap();
    assert_eq!(report.epochs.len(), 200);
    let mu = store.get("x.bias").unwrap().item();
    assert!((mu - 3.0).abs() < 0.1, "mu {mu}");
    for e in &report.epochs {
        assert!((e.total - (e.recon + config.eta * e.divergences[0])).abs() < 1e-9);
    }
}

#[test]
fn zero_penalty_weight_autoencodes_without_matching_prior() {
    let data = location_data(3.0, 500, 4);
    let (model, mut store) = location_model(0.0, data, 5);
    store.set("backward.x.p0.log_sigma.l0.b", Tensor::vector(vec![-3.0])).unwrap();
    let config = TrainConfig {
        eta: 0.0,
        batch_size: 50,
        epochs: 60,
        lr: 0.05,
        divergence: DivergenceKind::Wasserstein1d { p: 2 },
        seed: 6,
        ..TrainConfig::default()
    };
    let report = train(&model, &mut store, &config).unwrap();
    let last = report.last().unwrap();
    assert!(last.recon < 0.05, "recon {}", last.recon);
    // mu never moves without the penalty, so inferred parents sit near x - 0 ~ N(3, 1).
    assert!(last.divergences[0] > 1.0, "divergence {}", last.divergences[0]);
}

#[test]
fn full_batch_trace_is_monotone_and_flat_at_optimum() {
    let data = location_data(1.5, 100, 7);
    let config = TrainConfig {
        eta: 1.0,
        lr: 0.5,
        divergence: DivergenceKind::Wasserstein1d { p: 2 },
        seed: 8,
        ..TrainConfig::default()
    };
    let (model, mut store) = location_model(-1.0, data.clone(), 9);
    let report = full_batch_alternating(&model, &mut store, &config, 60).unwrap();
    let totals = report.totals();
    assert_eq!(totals.len(), 61);
    for w in totals.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
    }
    assert!(totals[60] < totals[0]);

    // A point already at a block-wise optimum stays put.
    let again = full_batch_alternating(&model, &mut store, &config, 5).unwrap().totals();
    let settled = full_batch_alternating(&model, &mut store, &config, 5).unwrap().totals();
    assert!(again.windows(2).all(|w| w[1] <= w[0] + 1e-6));
    let spread = settled.iter().cloned().fold(f64::MIN, f64::max) - settled.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 1e-3 * settled[0].abs().max(1.0), "spread {spread}");
}

/// Multiplies the reconstruction term of an objective by a constant.
struct ScaledCost<'a> {
    inner: &'a DagModel<f64>,
    k: f64,
}

impl Objective<f64> for ScaledCost<'_> {
    type Noise = <DagModel<f64> as Objective<f64>>::Noise;
    fn num_examples(&self) -> usize {
        self.inner.num_examples()
    }
    fn divergence_names(&self) -> Vec<String> {
        self.inner.divergence_names()
    }
    fn draw_noise(&self, batch: &[usize], config: &TrainConfig, rng: &mut dyn RngCore) -> Result<Self::Noise> {
        self.inner.draw_noise(batch, config, rng)
    }
    fn evaluate(&self, tape: &Tape<f64>, params: &Bound<'_, f64>, batch: &[usize], noise: &Self::Noise, config: &TrainConfig) -> Result<LossTerms<f64>> {
        let mut terms = self.inner.evaluate(tape, params, batch, noise, config)?;
        terms.recon = tape.scale(&terms.recon, self.k)?;
        Ok(terms)
    }
}

#[test]
fn cost_scaling_scales_recon_and_keeps_argmin() {
    let data = location_data(2.0, 80, 10);
    let model = DagModel::new(location_spec(0.0), vec![data], vec![Box::new(Shifted(0.0))]).unwrap();
    let config = TrainConfig {
        divergence: DivergenceKind::Wasserstein1d { p: 2 },
        ..TrainConfig::default()
    };
    let batch: Vec<usize> = (0..80).collect();
    let noise = model.draw_noise(&batch, &config, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let grid: Vec<f64> = (0..81).map(|i| i as f64 * 0.05).collect();
    let argmin = |k: f64| {
        let obj = ScaledCost { inner: &model, k };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for &mu in &grid {
            let mut store = ParamStore::new();
            register_forward_params(model.spec(), &mut store).unwrap();
            store.set("x.bias", Tensor::vector(vec![mu])).unwrap();
            let tape = Tape::new();
            let terms = obj.evaluate(&tape, &store.bind(&tape), &batch, &noise, &config).unwrap();
            let total = terms.total(&tape, config.eta).unwrap().item();
            if total < best.0 {
                best = (total, mu, terms.recon.item());
            }
        }
        best
    };
    let (_, mu1, r1) = argmin(1.0);
    let (_, mu3, r3) = argmin(3.0);
    assert_eq!(mu1, mu3);
    assert!((r3 - 3.0 * r1).abs() < 1e-9 * r3.abs().max(1.0));
}

#[test]
fn objective_gradients_match_finite_differences() {
    let spec = DagSpec {
        nodes: vec![
            NodeSpec {
                name: "z".into(),
                domain: Domain::Categorical { k: 3 },
                exogenous: NoiseSpec::new(NoiseFamily::Gumbel, vec![3]),
                forward: ForwardSpec::Categorical { logits: vec![0.1, -0.3, 0.2] },
                frozen: vec![],
            },
            NodeSpec {
                name: "x".into(),
                domain: Domain::Real { dim: 2 },
                exogenous: NoiseSpec::new(NoiseFamily::Gaussian, vec![2]),
                forward: ForwardSpec::Mixture {
                    means: vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![1.0, 1.5]],
                    scales: vec![vec![0.3, 0.2], vec![0.5, 0.4], vec![0.2, 0.3]],
                },
                frozen: vec![],
            },
        ],
        edges: vec![[0, 1]],
        observed: vec![1],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data = Tensor::matrix(12, 2, (0..24).map(|_| rng.random::<f64>() * 2.0).collect()).unwrap();
    for divergence in [DivergenceKind::Exact { ground: GroundMetric::SquaredEuclidean }] {
        let model = DagModel::with_amortized_backward(spec.clone(), vec![data.clone()], &[5]).unwrap();
        let mut store = ParamStore::new();
        model.init_params(&mut store, &mut rng).unwrap();
        let config = TrainConfig {
            eta: 0.7,
            tau: 0.8,
            divergence,
            ..TrainConfig::default()
        };
        let batch: Vec<usize> = (0..12).collect();
        let noise = model.draw_noise(&batch, &config, &mut rng).unwrap();
        let value = |store: &ParamStore<f64>| {
            let tape = Tape::new();
            let terms = model.evaluate(&tape, &store.bind(&tape), &batch, &noise, &config).unwrap();
            terms.total(&tape, config.eta).unwrap().item()
        };
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let total = model.evaluate(&tape, &bound, &batch, &noise, &config).unwrap().total(&tape, config.eta).unwrap();
        let grads = tape.backward(&total).unwrap();
        let ids: Vec<usize> = (0..store.len()).collect();
        let analytic = bound.grads_for(&grads, &ids);
        let h = 1e-6;
        for (id, g) in ids.iter().zip(&analytic) {
            for j in 0..g.len() {
                let mut plus = store.clone();
                plus.value_mut(*id).data_mut()[j] += h;
                let mut minus = store.clone();
                minus.value_mut(*id).data_mut()[j] -= h;
                let numeric = (value(&plus) - value(&minus)) / (2.0 * h);
                let a = g.data()[j];
                let scale = a.abs().max(numeric.abs());
                let ok = if scale < 1e-3 { (a - numeric).abs() < 1e-6 } else { (a - numeric).abs() / scale < 1e-4 };
                assert!(ok, "{} [{j}]: analytic {a} numeric {numeric}", store.param(*id).name);
            }
        }
    }
}

#[test]
fn nan_objective_aborts_with_step_and_term() {
    let data = location_data(0.0, 20, 13);
    let (model, mut store) = location_model(0.0, data, 14);
    store.set("x.bias", Tensor::vector(vec![f64::NAN])).unwrap();
    let config = TrainConfig {
        batch_size: 10,
        divergence: DivergenceKind::Wasserstein1d { p: 2 },
        ..TrainConfig::default()
    };
    let err = train(&model, &mut store, &config).unwrap_err();
    assert!(matches!(&err, Error::TrainingAborted { step: 0, term } if term == "recon"), "{err}");
}

#[test]
fn minibatches_merge_singleton_tail() {
    let order: Vec<usize> = (0..7).collect();
    let b = minibatches(&order, 3);
    assert_eq!(b, vec![vec![0, 1, 2], vec![3, 4, 5, 6]]);
    assert_eq!(minibatches(&order, 7).len(), 1);
}
