use rand::RngCore;

use crate::error::{shape_err, Error, Result};
use crate::gradtape::{Bound, ParamStore, Tape, Tensor};
use crate::scalar::Scalar;
use crate::trainer::{divergence, reconstruction_cost, LossTerms, Objective, TrainConfig};

use super::backward::{AmortizedBackward, BackwardMap};
use super::forward::{eval_forward, forward_all, register_forward_params, SampleMode};
use super::spec::DagSpec;

/// One batch of exogenous noise per node, each `n x noise_len`.
pub fn draw_node_noise<T: Scalar>(spec: &DagSpec, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Tensor<T>>> {
    spec.nodes
        .iter()
        .map(|node| {
            let len: usize = node.exogenous.shape.iter().product();
            node.exogenous.sample_batch::<T, _>(rng, Some(n)).reshaped(vec![n, len])
        })
        .collect()
}

/// `n` joint draws from the model: one `n x width` tensor per node.
pub fn ancestral_sample<T: Scalar>(
    spec: &DagSpec,
    params: &ParamStore<T>,
    n: usize,
    rng: &mut dyn RngCore,
    mode: SampleMode,
) -> Result<Vec<Tensor<T>>> {
    let order = spec.validate()?;
    if n == 0 {
        return Ok(spec.nodes.iter().map(|node| Tensor::zeros(vec![0, node.domain.width()])).collect());
    }
    let noise = draw_node_noise(spec, n, rng)?;
    let tape = Tape::new();
    let bound = params.bind(&tape);
    Ok(forward_all(spec, &order, &tape, &bound, &noise, mode)?
        .into_iter()
        .map(|t| t.detach())
        .collect())
}

/// Concatenates parent encodings along columns.
fn concat_parents<T: Scalar>(tape: &Tape<T>, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if parts.len() == 1 {
        Ok(parts[0].clone())
    } else {
        tape.concat(parts, 1)
    }
}

/// Noise for one evaluation of a [`DagModel`].
pub struct DagNoise<T> {
    /// Per observed node, consumed by its backward map.
    pub backward: Vec<Tensor<T>>,
    /// Per observed node, the exogenous noise used when reconstructing it.
    pub recon: Vec<Tensor<T>>,
    /// Per node, the exogenous noise of the ancestral model sample.
    pub model: Vec<Tensor<T>>,
}

/// A DAG bound to data for its observed nodes and one backward map per observed node.
pub struct DagModel<T: Scalar> {
    spec: DagSpec,
    order: Vec<usize>,
    data: Vec<Tensor<T>>,
    backward: Vec<Box<dyn BackwardMap<T>>>,
    n: usize,
}

impl<T: Scalar> DagModel<T> {
    /// `data[k]` holds the values of node `spec.observed[k]`, `n x width`; `backward[k]`
    /// maps that node to its parents.
    pub fn new(spec: DagSpec, data: Vec<Tensor<T>>, backward: Vec<Box<dyn BackwardMap<T>>>) -> Result<Self> {
        let order = spec.validate()?;
        if data.len() != spec.observed.len() || backward.len() != spec.observed.len() {
            return Err(Error::InvalidArgument(format!(
                "{} observed nodes but {} data columns and {} backward maps",
                spec.observed.len(),
                data.len(),
                backward.len()
            )));
        }
        let n = data.first().map_or(0, Tensor::rows);
        for (&o, d) in spec.observed.iter().zip(&data) {
            let node = &spec.nodes[o];
            if d.ndim() != 2 || d.rows() != n || d.cols() != node.domain.width() {
                return shape_err(
                    "dag_model",
                    format!("data for {} is {:?}, expected {n} x {}", node.name, d.shape(), node.domain.width()),
                );
            }
            if spec.parents(o).is_empty() {
                return Err(Error::Graph(format!("observed node {} has no parents to infer", node.name)));
            }
        }
        Ok(Self {
            spec,
            order,
            data,
            backward,
            n,
        })
    }

    /// Amortised backward maps with `hidden` widths, standardised on the data.
    pub fn with_amortized_backward(spec: DagSpec, data: Vec<Tensor<T>>, hidden: &[usize]) -> Result<Self> {
        spec.validate()?;
        if data.len() != spec.observed.len() {
            return Err(Error::InvalidArgument(format!(
                "{} observed nodes but {} data columns",
                spec.observed.len(),
                data.len()
            )));
        }
        for (&o, d) in spec.observed.iter().zip(&data) {
            if d.cols() != spec.nodes[o].domain.width() {
                return shape_err(
                    "dag_model",
                    format!("data for {} is {:?}, expected width {}", spec.nodes[o].name, d.shape(), spec.nodes[o].domain.width()),
                );
            }
        }
        let backward = spec
            .observed
            .iter()
            .zip(&data)
            .map(|(&o, d)| {
                Box::new(AmortizedBackward::for_node(&spec, o, hidden).standardized_on(d)) as Box<dyn BackwardMap<T>>
            })
            .collect();
        Self::new(spec, data, backward)
    }

    pub fn spec(&self) -> &DagSpec {
        &self.spec
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn data(&self) -> &[Tensor<T>] {
        &self.data
    }

    /// Registers forward parameters from the spec and the backward maps' parameters.
    pub fn init_params(&self, store: &mut ParamStore<T>, rng: &mut dyn RngCore) -> Result<()> {
        register_forward_params(&self.spec, store)?;
        for b in &self.backward {
            b.register(store, rng)?;
        }
        Ok(())
    }

    /// Parent samples of each observed node for the given rows of the data.
    pub fn backward_sample(
        &self,
        tape: &Tape<T>,
        params: &Bound<'_, T>,
        batch: &[Tensor<T>],
        noise: &[Tensor<T>],
        tau: f64,
    ) -> Result<Vec<Vec<Tensor<T>>>> {
        if batch.len() != self.backward.len() || noise.len() != self.backward.len() {
            return shape_err(
                "backward_sample",
                format!("{} observed nodes, {} batches", self.backward.len(), batch.len()),
            );
        }
        self.backward
            .iter()
            .zip(batch.iter().zip(noise))
            .map(|(b, (x, u))| b.sample(tape, params, x, u, tau))
            .collect()
    }

    /// Draws of each observed node's parents from its backward map, on `rows` of the
    /// data; returns one concatenated `rows x parent_width` tensor per observed node.
    pub fn pushforward_sample(
        &self,
        params: &ParamStore<T>,
        rows: &[usize],
        tau: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Tensor<T>>> {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let batch: Vec<Tensor<T>> = self.data.iter().map(|d| d.select_rows(rows)).collect();
        let noise: Vec<Tensor<T>> = self.backward.iter().map(|b| b.draw_noise(rows.len(), rng)).collect();
        self.backward_sample(&tape, &bound, &batch, &noise, tau)?
            .iter()
            .map(|parts| Ok(concat_parents(&tape, &parts.iter().collect::<Vec<_>>())?.detach()))
            .collect()
    }
}

impl<T: Scalar> Objective<T> for DagModel<T> {
    type Noise = DagNoise<T>;

    fn num_examples(&self) -> usize {
        self.n
    }

    fn divergence_names(&self) -> Vec<String> {
        self.spec.observed.iter().map(|&o| self.spec.nodes[o].name.clone()).collect()
    }

    fn draw_noise(&self, batch: &[usize], _config: &TrainConfig, rng: &mut dyn RngCore) -> Result<DagNoise<T>> {
        let b = batch.len();
        let backward = self.backward.iter().map(|m| m.draw_noise(b, rng)).collect();
        let all = draw_node_noise(&self.spec, b, rng)?;
        let recon = self.spec.observed.iter().map(|&o| all[o].clone()).collect();
        let model = draw_node_noise(&self.spec, b, rng)?;
        Ok(DagNoise { backward, recon, model })
    }

    fn evaluate(
        &self,
        tape: &Tape<T>,
        params: &Bound<'_, T>,
        batch: &[usize],
        noise: &DagNoise<T>,
        config: &TrainConfig,
    ) -> Result<LossTerms<T>> {
        let mode = SampleMode::Relaxed { tau: config.tau };
        let x: Vec<Tensor<T>> = self.data.iter().map(|d| d.select_rows(batch)).collect();
        let inferred = self.backward_sample(tape, params, &x, &noise.backward, config.tau)?;
        let model = forward_all(&self.spec, &self.order, tape, params, &noise.model, mode)?;

        let mut recon: Option<Tensor<T>> = None;
        let mut divergences = Vec::with_capacity(self.spec.observed.len());
        for (k, &o) in self.spec.observed.iter().enumerate() {
            let parents: Vec<&Tensor<T>> = inferred[k].iter().collect();
            let x_hat = eval_forward(&self.spec, o, tape, params, &parents, &noise.recon[k], mode)?;
            let cost = reconstruction_cost(tape, &x[k], &x_hat, config.cost)?;
            recon = Some(match recon {
                None => cost,
                Some(acc) => tape.add(&acc, &cost)?,
            });
            let phi = concat_parents(tape, &parents)?;
            let model_parents: Vec<&Tensor<T>> = self.spec.parents(o).iter().map(|&p| &model[p]).collect();
            let theta = concat_parents(tape, &model_parents)?;
            divergences.push((self.spec.nodes[o].name.clone(), divergence(tape, &config.divergence, &phi, &theta)?));
        }
        Ok(LossTerms {
            recon: recon.ok_or_else(|| Error::Graph("model has no observed nodes".into()))?,
            divergences,
        })
    }
}
