//! Declarative DAG models: structure, structural equations, backward maps and sampling.

mod backward;
mod forward;
mod model;
mod spec;

pub use backward::{AmortizedBackward, BackwardMap, ConstantBackward, Mlp};
pub use forward::{eval_forward, forward_all, register_forward_params, SampleMode};
pub use model::{ancestral_sample, draw_node_noise, DagModel, DagNoise};
pub use spec::{param_name, DagSpec, Domain, ForwardSpec, NodeSpec};
