use crate::error::Result;
use crate::gradtape::{Bound, ParamGroup, ParamStore, Tape, Tensor};
use crate::reparam::{cat_concrete, cat_concrete_logits, poisson_gaussian};
use crate::scalar::Scalar;

use super::spec::{param_name, DagSpec, ForwardSpec};

/// How categorical nodes emit values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleMode {
    /// Exact categorical draws as one-hot rows (Gumbel-max); no gradient to the logits.
    Hard,
    /// Relaxed one-hot rows at temperature `tau`.
    Relaxed { tau: f64 },
}

fn tensor_from_rows<T: Scalar>(rows: &[Vec<f64>]) -> Result<Tensor<T>> {
    let cols = rows.first().map_or(0, Vec::len);
    Tensor::matrix(rows.len(), cols, rows.iter().flatten().map(|v| T::lit(*v)).collect())
}

fn tensor_from_vec<T: Scalar>(v: &[f64]) -> Tensor<T> {
    Tensor::vector(v.iter().map(|x| T::lit(*x)).collect())
}

/// Inserts the forward parameters of every node, freezing the ones the spec lists.
pub fn register_forward_params<T: Scalar>(spec: &DagSpec, store: &mut ParamStore<T>) -> Result<()> {
    for node in &spec.nodes {
        let entries: Vec<(&str, Tensor<T>)> = match &node.forward {
            ForwardSpec::Categorical { logits } => vec![("logits", tensor_from_vec(logits))],
            ForwardSpec::CategoricalTable { logits } => vec![("logits", tensor_from_rows(logits)?)],
            ForwardSpec::Linear { weight, bias, scale } => {
                let mut v = Vec::new();
                if !weight.is_empty() {
                    v.push(("weight", tensor_from_rows(weight)?));
                }
                v.push(("bias", tensor_from_vec(bias)));
                v.push(("scale", tensor_from_vec(scale)));
                v
            }
            ForwardSpec::Mixture { means, scales } => {
                vec![("means", tensor_from_rows(means)?), ("scales", tensor_from_rows(scales)?)]
            }
            ForwardSpec::PoissonGaussian { log_rates } => vec![("log_rates", tensor_from_vec(log_rates))],
        };
        for (short, value) in entries {
            let name = param_name(&node.name, short);
            store.insert(name.clone(), ParamGroup::Forward, value)?;
            if node.frozen.iter().any(|f| f == short) {
                store.freeze(&name)?;
            }
        }
    }
    Ok(())
}

/// Rows of one-hot vectors at the argmax of each row of `scores`.
fn one_hot_argmax<T: Scalar>(scores: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, k) = (scores.rows(), scores.cols());
    let mut data = vec![T::zero(); rows * k];
    for i in 0..rows {
        let row = scores.row(i);
        let mut best = 0;
        for j in 1..k {
            if row[j] > row[best] {
                best = j;
            }
        }
        data[i * k + best] = T::one();
    }
    Tensor::matrix(rows, k, data)
}

/// Evaluates the structural equation of `node` on a batch.
///
/// `parents` are `B x width` encodings in ascending parent order and `noise` is `B x w_u`.
pub fn eval_forward<T: Scalar>(
    spec: &DagSpec,
    node: usize,
    tape: &Tape<T>,
    params: &Bound<'_, T>,
    parents: &[&Tensor<T>],
    noise: &Tensor<T>,
    mode: SampleMode,
) -> Result<Tensor<T>> {
    let ns = &spec.nodes[node];
    let p = |short: &str| params.get(&param_name(&ns.name, short));
    let rows = noise.rows();
    let categorical = |scores_fn: &dyn Fn() -> Result<Tensor<T>>, relaxed: &dyn Fn(T) -> Result<Tensor<T>>| match mode {
        SampleMode::Hard => one_hot_argmax(&tape.add(&scores_fn()?, noise)?),
        SampleMode::Relaxed { tau } => relaxed(T::lit(tau)),
    };
    match &ns.forward {
        ForwardSpec::Categorical { .. } => {
            let logits = p("logits")?;
            categorical(&|| tape.log_softmax(logits), &|tau| cat_concrete_logits(tape, logits, tau, noise))
        }
        ForwardSpec::CategoricalTable { .. } => {
            let table = tape.softmax(p("logits")?)?;
            let probs = tape.matmul(parents[0], &table)?;
            let log_probs = || tape.log(&tape.shift(&probs, T::lit(crate::scalar::PROB_SMOOTHING))?);
            categorical(&log_probs, &|tau| cat_concrete(tape, &probs, tau, noise))
        }
        ForwardSpec::Linear { weight, .. } => {
            let mut mean = tape.broadcast(p("bias")?, &[rows, ns.domain.width()])?;
            if !weight.is_empty() {
                let input = if parents.len() == 1 {
                    parents[0].clone()
                } else {
                    tape.concat(parents, 1)?
                };
                mean = tape.add(&mean, &tape.matmul(&input, p("weight")?)?)?;
            }
            tape.add(&mean, &tape.mul(noise, p("scale")?)?)
        }
        ForwardSpec::Mixture { .. } => {
            let z = parents[0];
            let mean = tape.matmul(z, p("means")?)?;
            let scale = tape.matmul(z, p("scales")?)?;
            tape.add(&mean, &tape.mul(&scale, noise)?)
        }
        ForwardSpec::PoissonGaussian { .. } => poisson_gaussian(tape, parents[0], p("log_rates")?, noise),
    }
}

/// Evaluates every node in topological `order` with the given per-node noise batches.
pub fn forward_all<T: Scalar>(
    spec: &DagSpec,
    order: &[usize],
    tape: &Tape<T>,
    params: &Bound<'_, T>,
    noise: &[Tensor<T>],
    mode: SampleMode,
) -> Result<Vec<Tensor<T>>> {
    let mut values: Vec<Option<Tensor<T>>> = vec![None; spec.nodes.len()];
    for &i in order {
        let parent_ids = spec.parents(i);
        let parents: Vec<&Tensor<T>> = parent_ids
            .iter()
            .map(|&p| values[p].as_ref().expect("parents come first in topological order"))
            .collect();
        let v = eval_forward(spec, i, tape, params, &parents, &noise[i], mode)?;
        values[i] = Some(v);
    }
    Ok(values.into_iter().map(|v| v.expect("every node evaluated")).collect())
}
