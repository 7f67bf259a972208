use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OptimMethod {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimMethod {
    pub fn adam() -> Self {
        OptimMethod::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimMethod {
    fn default() -> Self {
        Self::adam()
    }
}

/// First-order optimizer with per-parameter state.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    method: OptimMethod,
    lr: T,
    step_count: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(method: OptimMethod, lr: T) -> Result<Self> {
        if !(lr > T::zero()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            method,
            lr,
            step_count: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    pub fn set_lr(&mut self, lr: T) -> Result<()> {
        if !(lr > T::zero()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        self.lr = lr;
        Ok(())
    }

    /// One update of `params` along `grads` (aligned by position).
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "optimizer_step",
                    detail: format!("{:?} vs {:?}", p.shape(), g.shape()),
                });
            }
        }
        if self.first.len() != params.len() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step_count += 1;
        match self.method {
            OptimMethod::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x = *x - self.lr * *d;
                    }
                }
            }
            OptimMethod::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let t = self.step_count as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for (i, (x, d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = b1 * m[i] + (T::one() - b1) * *d;
                        v[i] = b2 * v[i] + (T::one() - b2) * *d * *d;
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        *x = *x - self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Steps the store entries `ids` with their gradients.
    pub fn step_store(&mut self, store: &mut ParamStore<T>, ids: &[usize], grads: &[Tensor<T>]) -> Result<()> {
        let mut values: Vec<Tensor<T>> = ids.iter().map(|&i| store.param(i).value.clone()).collect();
        {
            let mut refs: Vec<&mut Tensor<T>> = values.iter_mut().collect();
            self.step(&mut refs, grads)?;
        }
        for (&i, v) in ids.iter().zip(values) {
            *store.value_mut(i) = v;
        }
        Ok(())
    }
}
