//! Alternating minimisation of reconstruction cost plus weighted push-forward divergence.

mod report;
#[cfg(test)]
mod tests;

pub use report::{format_float, EpochLoss, LossReport};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::gradtape::{Bound, OptimMethod, Optimizer, ParamGroup, ParamStore, Tape, Tensor};
use crate::ot::{
    exact_on_tape, ground_cost_on_tape, sinkhorn_on_tape, wasserstein_1d_on_tape, GroundMetric, SinkhornConfig,
};
use crate::scalar::{Scalar, PROB_SMOOTHING};

/// Per-node reconstruction cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    SquaredError,
    /// `sum_k x_k (ln x_k - ln y_k)`: cross-entropy less the target's own entropy, so a
    /// perfect reconstruction costs zero.
    CrossEntropy,
    /// Huber-style loss with transition point 1.
    SmoothL1,
}

/// Divergence between backward-map samples and model samples of a parent set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DivergenceKind {
    Sinkhorn {
        epsilon: f64,
        #[serde(default = "default_ground")]
        ground: GroundMetric,
        #[serde(default = "default_sinkhorn_iters")]
        max_iters: usize,
        #[serde(default = "default_sinkhorn_tol")]
        tol: f64,
    },
    /// Exact optimal transport (network simplex) on the minibatch.
    Exact {
        #[serde(default = "default_ground")]
        ground: GroundMetric,
    },
    /// Sorted-sample closed form for scalar parents; `p` is 1 or 2.
    Wasserstein1d {
        #[serde(default = "default_p")]
        p: u32,
    },
}

fn default_ground() -> GroundMetric {
    GroundMetric::SquaredEuclidean
}
fn default_sinkhorn_iters() -> usize {
    2000
}
fn default_sinkhorn_tol() -> f64 {
    1e-6
}
fn default_p() -> u32 {
    2
}

impl DivergenceKind {
    pub fn sinkhorn(epsilon: f64) -> Self {
        DivergenceKind::Sinkhorn {
            epsilon,
            ground: default_ground(),
            max_iters: default_sinkhorn_iters(),
            tol: default_sinkhorn_tol(),
        }
    }
}

impl Default for DivergenceKind {
    fn default() -> Self {
        Self::sinkhorn(0.01)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the divergence penalty.
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate of the forward (model) parameters.
    pub lr: f64,
    /// Learning rate of the backward maps; defaults to `lr`.
    #[serde(default)]
    pub backward_lr: Option<f64>,
    pub cost: CostKind,
    #[serde(default)]
    pub divergence: DivergenceKind,
    /// Temperature of relaxed categorical samples.
    pub tau: f64,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimMethod,
    /// Stop after this many optimisation steps even if epochs remain.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            batch_size: 64,
            epochs: 10,
            lr: 1e-2,
            backward_lr: None,
            cost: CostKind::SquaredError,
            divergence: DivergenceKind::default(),
            tau: 0.5,
            seed: 0,
            optimizer: OptimMethod::default(),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad(format!("eta must be finite and non-negative, got {}", self.eta));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr > 0.0) || self.backward_lr.is_some_and(|lr| !(lr > 0.0)) {
            return bad("learning rates must be positive".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.tau));
        }
        match self.divergence {
            DivergenceKind::Sinkhorn { epsilon, .. } if !(epsilon > 0.0) => {
                bad(format!("sinkhorn epsilon must be positive, got {epsilon}"))
            }
            DivergenceKind::Wasserstein1d { p } if p != 1 && p != 2 => bad(format!("wasserstein-1d needs p = 1 or 2, got {p}")),
            _ => Ok(()),
        }
    }
}

/// Loss terms of one evaluation, all scalars on the evaluating tape.
pub struct LossTerms<T> {
    pub recon: Tensor<T>,
    pub divergences: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> LossTerms<T> {
    /// `recon + eta * sum(divergences)`.
    pub fn total(&self, tape: &Tape<T>, eta: f64) -> Result<Tensor<T>> {
        let mut total = self.recon.clone();
        for (_, d) in &self.divergences {
            total = tape.add(&total, &tape.scale(d, T::lit(eta))?)?;
        }
        Ok(total)
    }

    fn values(&self) -> (T, Vec<T>) {
        (self.recon.item(), self.divergences.iter().map(|(_, d)| d.item()).collect())
    }

    fn first_non_finite(&self) -> Option<String> {
        if !self.recon.item().is_finite() {
            return Some("recon".into());
        }
        self.divergences
            .iter()
            .find(|(_, d)| !d.item().is_finite())
            .map(|(name, _)| format!("divergence {name}"))
    }
}

/// A differentiable training objective over an indexed dataset.
///
/// All randomness of one evaluation lives in `Noise`, so re-evaluating with the same noise
/// after a parameter update is deterministic.
pub trait Objective<T: Scalar> {
    type Noise;

    fn num_examples(&self) -> usize;

    /// Names of the divergence terms, in the order `evaluate` returns them.
    fn divergence_names(&self) -> Vec<String>;

    fn draw_noise(&self, batch: &[usize], config: &TrainConfig, rng: &mut dyn RngCore) -> Result<Self::Noise>;

    fn evaluate(
        &self,
        tape: &Tape<T>,
        params: &Bound<'_, T>,
        batch: &[usize],
        noise: &Self::Noise,
        config: &TrainConfig,
    ) -> Result<LossTerms<T>>;
}

/// Mean over rows of the per-row summed cost between targets and reconstructions.
pub fn reconstruction_cost<T: Scalar>(tape: &Tape<T>, target: &Tensor<T>, recon: &Tensor<T>, kind: CostKind) -> Result<Tensor<T>> {
    if target.shape() != recon.shape() {
        return shape_err(
            "reconstruction_cost",
            format!("target {:?} vs reconstruction {:?}", target.shape(), recon.shape()),
        );
    }
    let rows = T::from_usize_lossy(target.rows());
    let per_entry = match kind {
        CostKind::SquaredError => {
            let d = tape.sub(recon, target)?;
            tape.mul(&d, &d)?
        }
        CostKind::SmoothL1 => tape.smooth_l1(&tape.sub(recon, target)?, T::one())?,
        CostKind::CrossEntropy => {
            let s = T::lit(PROB_SMOOTHING);
            if target.data().iter().any(|v| *v < T::zero()) || recon.data().iter().any(|v| *v < T::zero()) {
                return Err(Error::Domain {
                    op: "reconstruction_cost",
                    detail: "cross-entropy needs non-negative inputs".into(),
                });
            }
            let own = target.map(|v| v * (v + s).ln());
            let log_recon = tape.log(&tape.shift(recon, s)?)?;
            tape.sub(&own, &tape.mul(target, &log_recon)?)?
        }
    };
    tape.scale(&tape.sum(&per_entry)?, T::one() / rows)
}

/// Divergence between two point clouds (rows are samples) with uniform weights.
pub fn divergence<T: Scalar>(tape: &Tape<T>, kind: &DivergenceKind, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    let uniform = |n: usize| vec![T::one() / T::from_usize_lossy(n); n];
    match *kind {
        DivergenceKind::Sinkhorn {
            epsilon,
            ground,
            max_iters,
            tol,
        } => {
            let cost = ground_cost_on_tape(tape, ground, x, y)?;
            let config = SinkhornConfig {
                epsilon,
                max_iters,
                tol,
                epsilon_scaling: true,
            };
            Ok(sinkhorn_on_tape(tape, &cost, &uniform(x.rows()), &uniform(y.rows()), &config)?.0)
        }
        DivergenceKind::Exact { ground } => {
            let cost = ground_cost_on_tape(tape, ground, x, y)?;
            Ok(exact_on_tape(tape, &cost, &uniform(x.rows()), &uniform(y.rows()))?.0)
        }
        DivergenceKind::Wasserstein1d { p } => {
            if x.cols() != 1 || y.cols() != 1 {
                return shape_err(
                    "wasserstein_1d",
                    format!("scalar samples required, got {:?} and {:?}", x.shape(), y.shape()),
                );
            }
            wasserstein_1d_on_tape(tape, x, y, p)
        }
    }
}

/// One logged optimisation step, passed to training hooks.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub divergences: Vec<f64>,
}

fn minibatches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

fn evaluate_and_grad<T: Scalar, O: Objective<T>>(
    objective: &O,
    store: &ParamStore<T>,
    batch: &[usize],
    noise: &O::Noise,
    config: &TrainConfig,
    ids: &[usize],
    step: usize,
) -> Result<((T, Vec<T>), T, Vec<Tensor<T>>)> {
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let terms = objective.evaluate(&tape, &bound, batch, noise, config)?;
    if let Some(term) = terms.first_non_finite() {
        return Err(Error::TrainingAborted { step, term });
    }
    let total = terms.total(&tape, config.eta)?;
    let grads = tape.backward(&total)?;
    let grads = bound.grads_for(&grads, ids);
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(Error::TrainingAborted {
            step,
            term: "gradient".into(),
        });
    }
    Ok((terms.values(), total.item(), grads))
}

/// Minibatch training: each step updates the backward maps, then re-evaluates with the
/// same noise and updates the model parameters.
pub fn train<T: Scalar, O: Objective<T>>(objective: &O, store: &mut ParamStore<T>, config: &TrainConfig) -> Result<LossReport> {
    train_with_hook(objective, store, config, |_, _| Ok(()))
}

/// [`train`] with a callback after every step.
pub fn train_with_hook<T: Scalar, O: Objective<T>>(
    objective: &O,
    store: &mut ParamStore<T>,
    config: &TrainConfig,
    mut hook: impl FnMut(&StepRecord, &ParamStore<T>) -> Result<()>,
) -> Result<LossReport> {
    config.validate()?;
    let n = objective.num_examples();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("training needs at least 2 examples, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let backward_ids = store.trainable(ParamGroup::Backward);
    let forward_ids = store.trainable(ParamGroup::Forward);
    let mut backward_opt = Optimizer::new(config.optimizer, T::lit(config.backward_lr.unwrap_or(config.lr)))?;
    let mut forward_opt = Optimizer::new(config.optimizer, T::lit(config.lr))?;
    let mut report = LossReport::new(objective.divergence_names(), config.eta);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_steps = Vec::new();
        for batch in minibatches(&order, config.batch_size.min(n)) {
            if config.max_steps.is_some_and(|m| step >= m) {
                report.push_epoch(epoch, &epoch_steps);
                break 'epochs;
            }
            let noise = objective.draw_noise(&batch, config, &mut rng)?;
            let ((recon, divs), total, grads) =
                evaluate_and_grad(objective, store, &batch, &noise, config, &backward_ids, step)?;
            if !backward_ids.is_empty() {
                backward_opt.step_store(store, &backward_ids, &grads)?;
            }
            if !forward_ids.is_empty() {
                let (_, _, grads) = evaluate_and_grad(objective, store, &batch, &noise, config, &forward_ids, step)?;
                forward_opt.step_store(store, &forward_ids, &grads)?;
            }
            let record = StepRecord {
                step,
                epoch,
                total: total.to_f64_lossy(),
                recon: recon.to_f64_lossy(),
                divergences: divs.iter().map(|d| d.to_f64_lossy()).collect(),
            };
            hook(&record, store)?;
            epoch_steps.push(record);
            step += 1;
        }
        report.push_epoch(epoch, &epoch_steps);
    }
    Ok(report)
}

/// Full-batch alternating descent with frozen noise and backtracking.
///
/// Each iteration takes one gradient step on the backward parameters and one on the model
/// parameters; a step is accepted only if it does not increase the full objective, halving
/// the step size until it does. Entry 0 of the report is the initial objective.
pub fn full_batch_alternating<T: Scalar, O: Objective<T>>(
    objective: &O,
    store: &mut ParamStore<T>,
    config: &TrainConfig,
    iterations: usize,
) -> Result<LossReport> {
    config.validate()?;
    let n = objective.num_examples();
    let all: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = objective.draw_noise(&all, config, &mut rng)?;
    let mut report = LossReport::new(objective.divergence_names(), config.eta);
    let groups = [
        (store.trainable(ParamGroup::Backward), config.backward_lr.unwrap_or(config.lr)),
        (store.trainable(ParamGroup::Forward), config.lr),
    ];
    let mut steps: Vec<f64> = groups.iter().map(|g| g.1).collect();

    let eval = |store: &ParamStore<T>| -> Result<(T, Vec<T>, T)> {
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let terms = objective.evaluate(&tape, &bound, &all, &noise, config)?;
        let total = terms.total(&tape, config.eta)?.item();
        let (recon, divs) = terms.values();
        Ok((recon, divs, total))
    };
    let record = |iteration: usize, (recon, divs, total): &(T, Vec<T>, T)| StepRecord {
        step: iteration,
        epoch: iteration,
        total: total.to_f64_lossy(),
        recon: recon.to_f64_lossy(),
        divergences: divs.iter().map(|d| d.to_f64_lossy()).collect(),
    };

    let mut current = eval(store)?;
    if !current.2.is_finite() {
        return Err(Error::TrainingAborted { step: 0, term: "initial objective".into() });
    }
    report.push_epoch(0, &[record(0, &current)]);
    for it in 1..=iterations {
        for (g, (ids, max_step)) in groups.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let (_, _, grads) = evaluate_and_grad(objective, store, &all, &noise, config, ids, it)?;
            let before: Vec<Tensor<T>> = ids.iter().map(|&i| store.param(i).value.clone()).collect();
            let mut step = (steps[g] * 2.0).min(*max_step);
            let mut accepted = false;
            for _ in 0..40 {
                for ((&id, start), grad) in ids.iter().zip(&before).zip(&grads) {
                    let value = store.value_mut(id);
                    for ((v, s), d) in value.data_mut().iter_mut().zip(start.data()).zip(grad.data()) {
                        *v = *s - T::lit(step) * *d;
                    }
                }
                let trial = eval(store)?;
                if trial.2 <= current.2 {
                    current = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if accepted {
                steps[g] = step;
            } else {
                for (&id, start) in ids.iter().zip(before) {
                    *store.value_mut(id) = start;
                }
            }
        }
        report.push_epoch(it, &[record(it, &current)]);
    }
    Ok(report)
}
