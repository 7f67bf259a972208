//! Parameter learning for directed graphical models with latent variables by optimal
//! transport: a reverse-mode autodiff tape, exact and entropic OT solvers, reparameterised
//! samplers, DAG models with amortised backward maps, the alternating trainer, and EM
//! baselines.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod baselines;
pub mod error;
pub mod gradtape;
pub mod graph;
pub mod ot;
pub mod reparam;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases for the generic core types.
pub type Tensor = gradtape::Tensor<f64>;
pub type Tape = gradtape::Tape<f64>;
pub type ParamStore = gradtape::ParamStore<f64>;
pub type Optimizer = gradtape::Optimizer<f64>;
pub type TransportPlan = ot::TransportPlan<f64>;
pub type DiscreteMeasure = ot::DiscreteMeasure<f64>;
pub type DagModel = graph::DagModel<f64>;
