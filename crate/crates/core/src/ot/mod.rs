//! Optimal transport: exact network simplex, log-domain Sinkhorn and the 1-D closed form,
//! with tape wrappers whose gradients follow the envelope rule.

mod cost;
mod exact;
mod one_d;
mod sinkhorn;


pub use cost::{ground_cost, ground_cost_on_tape, GroundMetric};
pub use exact::{exact_wasserstein, EXACT_MAX_SIDE};
pub use one_d::{argsort, wasserstein_1d, wasserstein_1d_on_tape};
pub use sinkhorn::{sinkhorn, SinkhornConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradtape::{Tape, Tensor};
use crate::scalar::Scalar;

/// Weighted point cloud; `support` is absent when the cost is supplied directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure<T> {
    weights: Vec<T>,
    support: Option<Tensor<T>>,
}

impl<T: Scalar> DiscreteMeasure<T> {
    pub fn new(weights: Vec<T>, support: Option<Tensor<T>>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= T::zero())) {
            return Err(Error::InvalidArgument("measure weights must be non-negative".into()));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidArgument(format!("measure weights sum to {total}, not 1")));
        }
        if let Some(s) = &support {
            if s.ndim() != 2 || s.rows() != weights.len() {
                return Err(Error::InvalidArgument(format!(
                    "support {:?} does not match {} weights",
                    s.shape(),
                    weights.len()
                )));
            }
        }
        Ok(Self { weights, support })
    }

    /// Uniform weights over the rows of `support`.
    pub fn uniform(support: Tensor<T>) -> Result<Self> {
        let n = support.rows();
        Self::new(vec![T::one() / T::from_usize_lossy(n); n], Some(support))
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn support(&self) -> Option<&Tensor<T>> {
        self.support.as_ref()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Result of a transport solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan<T> {
    pub plan: Tensor<T>,
    /// `sum_ij plan_ij * cost_ij`.
    pub value: T,
    /// Dual potentials `(f, g)` when the solver produces them.
    pub potentials: Option<(Vec<T>, Vec<T>)>,
    pub converged: bool,
    pub iterations: usize,
}

/// Records `sum(cost * plan)` with the plan held constant, so the gradient with respect
/// to the cost matrix is the plan itself.
pub fn plan_value_on_tape<T: Scalar>(tape: &Tape<T>, cost: &Tensor<T>, plan: &Tensor<T>) -> Result<Tensor<T>> {
    tape.sum(&tape.mul(cost, &plan.detach())?)
}

/// Entropic OT between two measures whose `cost` already lives on the tape.
pub fn sinkhorn_on_tape<T: Scalar>(
    tape: &Tape<T>,
    cost: &Tensor<T>,
    a: &[T],
    b: &[T],
    config: &SinkhornConfig,
) -> Result<(Tensor<T>, TransportPlan<T>)> {
    let solved = sinkhorn(&cost.detach(), a, b, config)?;
    Ok((plan_value_on_tape(tape, cost, &solved.plan)?, solved))
}

/// Exact OT between two measures whose `cost` already lives on the tape.
pub fn exact_on_tape<T: Scalar>(
    tape: &Tape<T>,
    cost: &Tensor<T>,
    a: &[T],
    b: &[T],
) -> Result<(Tensor<T>, TransportPlan<T>)> {
    let solved = exact_wasserstein(&cost.detach(), a, b)?;
    Ok((plan_value_on_tape(tape, cost, &solved.plan)?, solved))
}
