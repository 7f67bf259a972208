use otpdag::gradtape::{self, ParamGroup};
use otpdag::graph::{ancestral_sample, register_forward_params, DagSpec, SampleMode};
use otpdag::ot::{exact_wasserstein, sinkhorn, SinkhornConfig};
use otpdag::trainer::{full_batch_alternating, train, DivergenceKind, TrainConfig};
use otpdag::{DagModel, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LOCATION_SPEC: &str = r#"{
  "nodes": [
    {"name": "z", "domain": {"type": "real", "dim": 1}, "exogenous": {"family": "gaussian", "shape": [1]},
     "forward": {"kind": "linear", "weight": [], "bias": [0.0], "scale": [1.0]}, "frozen": ["bias", "scale"]},
    {"name": "x", "domain": {"type": "real", "dim": 1}, "exogenous": {"family": "gaussian", "shape": [1]},
     "forward": {"kind": "linear", "weight": [[1.0]], "bias": [MU], "scale": [0.0]}, "frozen": ["weight", "scale"]}
  ],
  "edges": [[0, 1]],
  "observed": [1]
}"#;

fn location_spec(mu: f64) -> DagSpec {
    DagSpec::from_json(&LOCATION_SPEC.replace("MU", &format!("{mu:?}"))).unwrap()
}

#[test]
fn spec_json_round_trips() {
    let spec = location_spec(0.5);
    let back = DagSpec::from_json(&spec.to_json().unwrap()).unwrap();
    assert_eq!(back, spec);
    assert_eq!(spec.validate().unwrap(), vec![0, 1]);
}

#[test]
fn location_model_learns_its_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let truth = location_spec(2.0);
    let mut truth_store = ParamStore::new();
    register_forward_params(&truth, &mut truth_store).unwrap();
    let data = ancestral_sample(&truth, &truth_store, 400, &mut rng, SampleMode::Hard).unwrap().remove(1);

    let model = DagModel::with_amortized_backward(location_spec(0.0), vec![data], &[16]).unwrap();
    let mut store = ParamStore::new();
    model.init_params(&mut store, &mut rng).unwrap();
    let config = TrainConfig {
        eta: 1.0,
        batch_size: 100,
        epochs: 150,
        lr: 0.05,
        backward_lr: Some(0.01),
        divergence: DivergenceKind::Wasserstein1d { p: 2 },
        ..TrainConfig::default()
    };
    let report = train(&model, &mut store, &config).unwrap();
    let bias = store.get("x.bias").unwrap().data()[0];
    assert!((bias - 2.0).abs() < 0.2, "{bias}");
    let totals = report.totals();
    assert!(totals.last().unwrap() < &totals[0]);
}

#[test]
fn full_batch_trace_never_rises() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = location_spec(-1.0);
    let mut truth_store = ParamStore::new();
    register_forward_params(&truth, &mut truth_store).unwrap();
    let data = ancestral_sample(&truth, &truth_store, 150, &mut rng, SampleMode::Hard).unwrap().remove(1);
    let model = DagModel::with_amortized_backward(location_spec(1.0), vec![data], &[8]).unwrap();
    let mut store = ParamStore::new();
    model.init_params(&mut store, &mut rng).unwrap();
    let config = TrainConfig {
        eta: 0.5,
        lr: 0.1,
        divergence: DivergenceKind::Exact {
            ground: otpdag::ot::GroundMetric::SquaredEuclidean,
        },
        ..TrainConfig::default()
    };
    let totals = full_batch_alternating(&model, &mut store, &config, 15).unwrap().totals();
    assert_eq!(totals.len(), 16);
    assert!(totals.windows(2).all(|w| w[1] <= w[0]), "{totals:?}");
}

#[test]
fn single_precision_matches_double() {
    let cost64 = Tensor::from_rows(&[vec![0.0, 1.0, 4.0], vec![1.0, 0.0, 1.0], vec![4.0, 1.0, 0.0]]).unwrap();
    let a = [0.5, 0.25, 0.25];
    let b = [0.2, 0.3, 0.5];
    let exact64 = exact_wasserstein(&cost64, &a, &b).unwrap();
    let cost32 = gradtape::Tensor::<f32>::new(vec![3, 3], cost64.data().iter().map(|v| *v as f32).collect()).unwrap();
    let (a32, b32) = (a.map(|v| v as f32), b.map(|v| v as f32));
    let exact32 = exact_wasserstein(&cost32, &a32, &b32).unwrap();
    assert!((f64::from(exact32.value) - exact64.value).abs() < 1e-5);
    let entropic32 = sinkhorn(&cost32, &a32, &b32, &SinkhornConfig::with_epsilon(0.05)).unwrap();
    assert!((f64::from(entropic32.value) - exact64.value).abs() < 0.05);

    let tape = gradtape::Tape::<f32>::new();
    let x = tape.param(&gradtape::Tensor::<f32>::vector(vec![1.0, 2.0]));
    let loss = tape.sum(&tape.mul(&x, &x).unwrap()).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.get(&x).unwrap().data(), &[2.0f32, 4.0]);

    let mut store = gradtape::ParamStore::<f32>::new();
    store.insert("w", ParamGroup::Forward, gradtape::Tensor::vector(vec![0.5f32])).unwrap();
    assert_eq!(store.trainable(ParamGroup::Forward).len(), 1);
}
