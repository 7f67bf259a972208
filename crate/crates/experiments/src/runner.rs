//! Drives each study end to end and records its measurements as report rows.

use std::path::Path;
use std::time::Instant;

use otpdag::baselines::{em_gmm, em_poisson_hmm, kmeans_plus_plus, EmOptions, GmmInit, GmmParams};
use otpdag::graph::{ancestral_sample, register_forward_params, SampleMode};
use otpdag::ot::{exact_wasserstein, ground_cost, GroundMetric};
use otpdag::trainer::{full_batch_alternating, train_with_hook, TrainConfig};
use otpdag::{DagModel, ParamStore, Tensor};
use rand::RngCore;

use crate::config::{ExperimentConfig, ExperimentKind, Sizes};
use crate::data::{digest, gen_gmm_misspec, gen_lda_bars, gen_poisson_hmm, rng_for};
use crate::error::Result;
use crate::metrics::{matched_mae, matched_mae_scalar, top_word_jaccard, topic_metrics, TopicMetrics};
use crate::models::{
    chain_spec, gmm_spec, mixture_means, HmmModel, LdaModel, MweLocation, CHAIN_MEANS, CHAIN_NOISE, CHAIN_PROBS,
};
use crate::report::{commit_id, write_run, Manifest, Metric, ReportRow};

/// Offsets separating the random streams derived from one replicate seed.
const INIT_STREAM: u64 = 0x5eed_0001;
const DATA_STREAM: u64 = 0x5eed_0002;

/// Collects rows, seeds and dataset digests while a study runs.
#[derive(Debug)]
pub struct Recorder {
    experiment: ExperimentKind,
    pub rows: Vec<ReportRow>,
    pub seeds: Vec<u64>,
    pub digests: Vec<String>,
}

impl Recorder {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            rows: Vec::new(),
            seeds: Vec::new(),
            digests: Vec::new(),
        }
    }

    pub fn push(&mut self, seed: u64, method: &str, metric: Metric, step: usize, value: f64) {
        self.rows.push(ReportRow {
            experiment: self.experiment.name().into(),
            seed,
            method: method.into(),
            metric,
            step,
            value,
        });
    }

    fn manifest(&self, config: &ExperimentConfig) -> Manifest {
        Manifest {
            config: config.clone(),
            seeds: self.seeds.clone(),
            commit: commit_id(),
            dataset_digests: self.digests.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// Rows and manifest of a finished run.
#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<ReportRow>,
    pub manifest: Manifest,
}

/// Runs the configured study.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    let mut recorder = Recorder::new(config.experiment);
    run_into(config, &mut recorder)?;
    Ok(RunOutput {
        manifest: recorder.manifest(config),
        rows: recorder.rows,
    })
}

/// Runs the configured study and writes its report and manifest to `dir`. When the run fails,
/// the rows gathered so far are written before the error is returned.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut recorder = Recorder::new(config.experiment);
    let outcome = run_into(config, &mut recorder);
    let manifest = recorder.manifest(config);
    write_run(dir, &recorder.rows, &manifest)?;
    outcome.map(|()| RunOutput {
        rows: recorder.rows,
        manifest,
    })
}

pub fn run_into(config: &ExperimentConfig, recorder: &mut Recorder) -> Result<()> {
    config.validate()?;
    let sizes = config.sizes()?;
    let mut train = config.train_config()?;
    if config.knobs.b.is_some() || !config.train.contains_key("batch_size") {
        train.batch_size = sizes.b.max(2);
    }
    for r in 0..sizes.replicates {
        let seed = config.seed.wrapping_add(r as u64);
        let train = TrainConfig { seed, ..train.clone() };
        recorder.seeds.push(seed);
        log::info!("{} replicate {} of {} (seed {seed})", config.experiment, r + 1, sizes.replicates);
        match config.experiment {
            ExperimentKind::GmmMisspec => {
                gmm_replicate(seed, &sizes, &train, recorder)?;
            }
            ExperimentKind::LdaBars => {
                lda_replicate(seed, &sizes, &train, recorder)?;
            }
            ExperimentKind::PoissonHmm => {
                hmm_replicate(seed, &sizes, &train, recorder)?;
            }
            ExperimentKind::MweConsistency => {
                for &n in &sizes.sizes {
                    let err = mwe_trial(seed, n, &train, sizes.steps)?;
                    recorder.push(seed, "otp", Metric::Mae, n, err);
                }
            }
            ExperimentKind::ToyChain => {
                toy_chain(seed, &sizes, &train, recorder)?;
            }
        }
    }
    Ok(())
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<Tensor> {
    Ok(Tensor::from_rows(rows)?)
}

/// Parameter-recovery traces of one misspecified-mixture replicate.
#[derive(Clone, Debug)]
pub struct GmmOutcome {
    /// Mean absolute error of the means at the start and after each EM iteration.
    pub em_mae: Vec<f64>,
    /// Mean absolute error of the means at the start and after each training step.
    pub otp_mae: Vec<f64>,
}

impl GmmOutcome {
    pub fn em_final(&self) -> f64 {
        *self.em_mae.last().expect("trace starts at the initial error")
    }

    pub fn otp_final(&self) -> f64 {
        *self.otp_mae.last().expect("trace starts at the initial error")
    }
}

/// Fits EM and the transport objective from the same k-means++ start.
pub fn gmm_replicate(seed: u64, sizes: &Sizes, train: &TrainConfig, recorder: &mut Recorder) -> Result<GmmOutcome> {
    let data = gen_gmm_misspec(seed, sizes.case, sizes.n)?;
    recorder.digests.push(digest(&data)?);
    let points = to_matrix(&data.points)?;
    let k = sizes.k;
    let truth = &data.truth.means;
    let init = kmeans_plus_plus(&points, k, &mut rng_for(seed ^ INIT_STREAM))?;
    let initial_mae = matched_mae(&init, truth)?;

    let start = Instant::now();
    let d = init[0].len();
    let init_params = GmmParams {
        weights: data.clamps.weights.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]),
        means: init.clone(),
        variances: vec![vec![data.clamps.variance.unwrap_or(1.0); d]; k],
    };
    let options = EmOptions {
        max_iters: sizes.steps,
        ..EmOptions::default()
    };
    let fit = em_gmm(
        &points,
        k,
        &GmmInit::Params(init_params),
        &data.clamps,
        &options,
        &mut rng_for(seed ^ DATA_STREAM),
    )?;
    let mut em_mae = vec![initial_mae];
    for params in &fit.trace {
        em_mae.push(matched_mae(&params.means, truth)?);
    }
    recorder.push(seed, "em", Metric::RuntimeS, 0, start.elapsed().as_secs_f64());
    for (i, mae) in em_mae.iter().enumerate() {
        recorder.push(seed, "em", Metric::Mae, i, *mae);
    }
    for (i, ll) in fit.log_likelihood.iter().enumerate() {
        recorder.push(seed, "em", Metric::Loss, i, -ll / sizes.n as f64);
    }

    let start = Instant::now();
    let model = DagModel::with_amortized_backward(gmm_spec(&init, &data.clamps), vec![points], &[32])?;
    let mut store = ParamStore::new();
    model.init_params(&mut store, &mut rng_for(seed ^ INIT_STREAM))?;
    let steps_per_epoch = steps_per_epoch(sizes.n, train.batch_size);
    let config = TrainConfig {
        max_steps: Some(sizes.steps),
        epochs: sizes.steps.div_ceil(steps_per_epoch),
        ..train.clone()
    };
    let mut otp_mae = vec![initial_mae];
    recorder.push(seed, "otp", Metric::Mae, 0, initial_mae);
    train_with_hook(&model, &mut store, &config, |record, store| {
        let mae = matched_mae(&mixture_means(store).map_err(core_error)?, truth).map_err(core_error)?;
        otp_mae.push(mae);
        recorder.push(seed, "otp", Metric::Mae, record.step + 1, mae);
        recorder.push(seed, "otp", Metric::Loss, record.step + 1, record.total);
        Ok(())
    })?;
    recorder.push(seed, "otp", Metric::RuntimeS, 0, start.elapsed().as_secs_f64());
    Ok(GmmOutcome { em_mae, otp_mae })
}

/// Errors raised inside a training hook must travel as core errors.
fn core_error(e: crate::error::ExperimentError) -> otpdag::Error {
    match e {
        crate::error::ExperimentError::Core(inner) => inner,
        other => otpdag::Error::InvalidArgument(other.to_string()),
    }
}

/// Number of optimisation steps per epoch; a singleton tail joins the previous batch.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    let b = batch_size.min(n).max(1);
    let full = n.div_ceil(b);
    if full > 1 && n % b == 1 {
        full - 1
    } else {
        full
    }
}

/// Topic recovery of one bars-corpus replicate.
#[derive(Clone, Debug)]
pub struct LdaOutcome {
    /// Metrics at the end of selected epochs, by epoch number (1-based).
    pub checkpoints: Vec<(usize, TopicMetrics)>,
    /// Top-word Jaccard overlap of each true topic with its matched estimate.
    pub jaccard: Vec<f64>,
    pub topics: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
}

impl LdaOutcome {
    pub fn recovered(&self, threshold: f64) -> usize {
        self.jaccard.iter().filter(|j| **j >= threshold).count()
    }

    pub fn at_epoch(&self, epoch: usize) -> Option<&TopicMetrics> {
        self.checkpoints.iter().find(|(e, _)| *e == epoch).map(|(_, m)| m)
    }
}

/// Epochs at which topic metrics are recorded: the first, every tenth and the last.
pub fn lda_checkpoints(epochs: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=epochs).filter(|e| *e == 1 || e % 10 == 0).collect();
    if out.last() != Some(&epochs) {
        out.push(epochs);
    }
    out
}

pub fn lda_replicate(seed: u64, sizes: &Sizes, train: &TrainConfig, recorder: &mut Recorder) -> Result<LdaOutcome> {
    let corpus = gen_lda_bars(seed, sizes.k, sizes.m, sizes.n, sizes.v)?;
    recorder.digests.push(digest(&corpus)?);
    let truth = corpus.topics.clone();
    let model = LdaModel::new(&corpus.counts(), sizes.k, &[64])?;
    let mut store = ParamStore::new();
    model.init_params(&mut store, &mut rng_for(seed ^ INIT_STREAM))?;
    let per_epoch = steps_per_epoch(sizes.m, train.batch_size);
    let checkpoints = lda_checkpoints(train.epochs);
    let mut recorded = Vec::new();
    let start = Instant::now();
    let report = train_with_hook(&model, &mut store, train, |record, store| {
        if (record.step + 1) % per_epoch != 0 {
            return Ok(());
        }
        let epoch = (record.step + 1) / per_epoch;
        if checkpoints.contains(&epoch) {
            let topics = LdaModel::topics(store).map_err(core_error)?;
            let m = topic_metrics(&topics, &truth).map_err(core_error)?;
            recorder.push(seed, "otp", Metric::Hellinger, epoch, m.hellinger);
            recorder.push(seed, "otp", Metric::Kl, epoch, m.kl);
            recorder.push(seed, "otp", Metric::Ws, epoch, m.ws);
            recorded.push((epoch, m));
        }
        Ok(())
    })?;
    recorder.push(seed, "otp", Metric::RuntimeS, 0, start.elapsed().as_secs_f64());
    for (i, e) in report.epochs.iter().enumerate() {
        recorder.push(seed, "otp", Metric::Loss, i + 1, e.total);
    }
    let topics = LdaModel::topics(&store)?;
    let side = (sizes.v as f64).sqrt().round() as usize;
    let jaccard = top_word_jaccard(&topics, &truth, side)?;
    Ok(LdaOutcome {
        checkpoints: recorded,
        jaccard,
        topics,
        alpha: LdaModel::alpha(&store)?,
    })
}

/// Rate-recovery errors of one hidden-Markov replicate.
#[derive(Clone, Debug)]
pub struct HmmOutcome {
    pub em_mae: f64,
    pub otp_mae: f64,
    pub em_rates: Vec<f64>,
    /// EM log-likelihood entering each iteration, then of the final rates.
    pub em_log_likelihood: Vec<f64>,
    pub otp_rates: Vec<f64>,
    pub true_rates: Vec<f64>,
}

pub fn hmm_replicate(seed: u64, sizes: &Sizes, train: &TrainConfig, recorder: &mut Recorder) -> Result<HmmOutcome> {
    let series = gen_poisson_hmm(seed, sizes.t, sizes.stay_prob)?;
    recorder.digests.push(digest(&series)?);

    let start = Instant::now();
    let fit = em_poisson_hmm::<f64>(&series.counts, sizes.k, sizes.stay_prob, &EmOptions::default())?;
    let em_mae = matched_mae_scalar(&fit.params.rates, &series.rates)?;
    recorder.push(seed, "em", Metric::RuntimeS, 0, start.elapsed().as_secs_f64());
    for (i, ll) in fit.log_likelihood.iter().enumerate() {
        recorder.push(seed, "em", Metric::Loss, i, -ll / sizes.t as f64);
    }
    recorder.push(seed, "em", Metric::Mae, fit.log_likelihood.len().saturating_sub(1), em_mae);

    let start = Instant::now();
    let model = HmmModel::new(&series.counts, sizes.k, sizes.stay_prob, &[32, 32]);
    let mut store = ParamStore::new();
    model.init_params(&mut store, &mut rng_for(seed ^ INIT_STREAM))?;
    let per_epoch = steps_per_epoch(sizes.t, train.batch_size);
    let truth = series.rates.clone();
    let report = train_with_hook(&model, &mut store, train, |record, store| {
        if (record.step + 1) % per_epoch == 0 {
            let rates = HmmModel::rates(store).map_err(core_error)?;
            let mae = matched_mae_scalar(&rates, &truth).map_err(core_error)?;
            recorder.push(seed, "otp", Metric::Mae, (record.step + 1) / per_epoch, mae);
        }
        Ok(())
    })?;
    recorder.push(seed, "otp", Metric::RuntimeS, 0, start.elapsed().as_secs_f64());
    for (i, e) in report.epochs.iter().enumerate() {
        recorder.push(seed, "otp", Metric::Loss, i + 1, e.total);
    }
    let otp_rates = HmmModel::rates(&store)?;
    Ok(HmmOutcome {
        em_mae,
        otp_mae: matched_mae_scalar(&otp_rates, &series.rates)?,
        em_rates: fit.params.rates,
        em_log_likelihood: fit.log_likelihood,
        otp_rates,
        true_rates: series.rates,
    })
}

/// Minimum-Wasserstein location estimate from `data` with frozen model noise.
pub fn mwe_fit(data: &[f64], train: &TrainConfig, iterations: usize) -> Result<f64> {
    let objective = MweLocation::new(data)?;
    let mut store = ParamStore::new();
    objective.init_params(&mut store, 0.0)?;
    full_batch_alternating(&objective, &mut store, train, iterations)?;
    MweLocation::location(&store)
}

/// Location of the data in [`mwe_trial`].
pub const MWE_LOCATION: f64 = 0.0;

/// Absolute estimation error from `n` standard normal draws centred at [`MWE_LOCATION`].
pub fn mwe_trial(seed: u64, n: usize, train: &TrainConfig, iterations: usize) -> Result<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_for(seed ^ DATA_STREAM ^ (n as u64).rotate_left(32));
    let data: Vec<f64> = (0..n).map(|_| {
        let u: f64 = StandardNormal.sample(&mut rng);
        MWE_LOCATION + u
    }).collect();
    let config = TrainConfig {
        seed: rng.next_u64(),
        ..train.clone()
    };
    Ok((mwe_fit(&data, &config, iterations)? - MWE_LOCATION).abs())
}

/// Medians over `trials` of the estimation error at each sample size.
pub fn mwe_consistency(sizes: &[usize], trials: usize, seed: u64, train: &TrainConfig, iterations: usize) -> Result<Vec<f64>> {
    sizes
        .iter()
        .map(|&n| {
            let errors = (0..trials)
                .map(|t| mwe_trial(seed.wrapping_add(t as u64), n, train, iterations))
                .collect::<Result<Vec<_>>>()?;
            Ok(median(errors))
        })
        .collect()
}

pub fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Training trace and fit quality on the reference chain.
#[derive(Clone, Debug)]
pub struct ToyOutcome {
    pub losses: Vec<f64>,
    pub probs: Vec<f64>,
    pub means: Vec<f64>,
    /// Exact transport distance between the backward pushforward of the data and the model
    /// prior over the latent component.
    pub pushforward_gap: f64,
}

pub fn toy_chain(seed: u64, sizes: &Sizes, train: &TrainConfig, recorder: &mut Recorder) -> Result<ToyOutcome> {
    let k = CHAIN_PROBS.len();
    let truth = chain_spec(&CHAIN_PROBS.map(f64::ln), &CHAIN_MEANS, CHAIN_NOISE);
    let mut truth_store = ParamStore::new();
    register_forward_params(&truth, &mut truth_store)?;
    let mut rng = rng_for(seed ^ DATA_STREAM);
    let data = ancestral_sample(&truth, &truth_store, sizes.n, &mut rng, SampleMode::Hard)?.remove(1);
    recorder.digests.push(digest(&data.data())?);

    let start_means: Vec<f64> = CHAIN_MEANS.iter().map(|m| m + 0.5).collect();
    let model = DagModel::with_amortized_backward(chain_spec(&vec![0.0; k], &start_means, CHAIN_NOISE), vec![data], &[32])?;
    let mut store = ParamStore::new();
    model.init_params(&mut store, &mut rng_for(seed ^ INIT_STREAM))?;
    let per_epoch = steps_per_epoch(sizes.n, train.batch_size);
    let config = TrainConfig {
        max_steps: Some(sizes.steps),
        epochs: sizes.steps.div_ceil(per_epoch),
        ..train.clone()
    };
    let mut losses = Vec::new();
    train_with_hook(&model, &mut store, &config, |record, _| {
        losses.push(record.total);
        recorder.push(seed, "otp", Metric::Loss, record.step + 1, record.total);
        Ok(())
    })?;

    let logits = store.get("z.logits")?.data().to_vec();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let probs: Vec<f64> = exp.iter().map(|e| e / total).collect();
    let means = store.get("x.means")?.data().to_vec();

    let rows: Vec<usize> = (0..sizes.n).collect();
    let draws = model.pushforward_sample(&store, &rows, train.tau, &mut rng)?.remove(0);
    let mut freq = vec![0.0; k];
    for i in 0..draws.rows() {
        let row = draws.row(i);
        let arg = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).expect("k > 0");
        freq[arg] += 1.0 / draws.rows() as f64;
    }
    let one_hot = Tensor::from_rows(&(0..k).map(|i| (0..k).map(|j| f64::from(i == j)).collect()).collect::<Vec<_>>())?;
    let cost = ground_cost(GroundMetric::SquaredEuclidean, &one_hot, &one_hot)?;
    let pushforward_gap = exact_wasserstein(&cost, &freq, &probs)?.value;
    recorder.push(seed, "otp", Metric::Ws, sizes.steps, pushforward_gap);
    Ok(ToyOutcome {
        losses,
        probs,
        means,
        pushforward_gap,
    })
}
