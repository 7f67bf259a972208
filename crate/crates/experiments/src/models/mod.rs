//! Models of the studies: mixtures and toy graphs as declarative DAGs, plus hand-written
//! objectives for the topic model and the hidden Markov chain.

mod gmm;
mod hmm;
mod lda;
mod toy;

pub use gmm::{gmm_spec, mixture_means};
pub use hmm::{HmmModel, HmmNoise};
pub use lda::{LdaModel, LdaNoise};
pub use toy::{chain_spec, location_spec, MweLocation, CHAIN_MEANS, CHAIN_NOISE, CHAIN_PROBS};
