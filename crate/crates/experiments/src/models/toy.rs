use otpdag::gradtape::{Bound, ParamGroup, Tape};
use otpdag::graph::{DagSpec, Domain, ForwardSpec, NodeSpec};
use otpdag::reparam::{NoiseFamily, NoiseSpec};
use otpdag::trainer::{divergence, DivergenceKind, LossTerms, Objective, TrainConfig};
use otpdag::{ParamStore, Tensor};
use rand::RngCore;

use crate::error::Result;

/// Component probabilities of the reference chain.
pub const CHAIN_PROBS: [f64; 3] = [0.2, 0.3, 0.5];
/// Component locations of the reference chain.
pub const CHAIN_MEANS: [f64; 3] = [0.0, 2.0, 4.0];
/// Emission noise of the reference chain.
pub const CHAIN_NOISE: f64 = 0.05;

/// Categorical `z` feeding a one-dimensional mixture `x` with fixed small noise.
pub fn chain_spec(logits: &[f64], means: &[f64], noise: f64) -> DagSpec {
    let k = logits.len();
    DagSpec {
        nodes: vec![
            NodeSpec {
                name: "z".into(),
                domain: Domain::Categorical { k },
                exogenous: NoiseSpec::new(NoiseFamily::Gumbel, vec![k]),
                forward: ForwardSpec::Categorical { logits: logits.to_vec() },
                frozen: vec![],
            },
            NodeSpec {
                name: "x".into(),
                domain: Domain::Real { dim: 1 },
                exogenous: NoiseSpec::new(NoiseFamily::Gaussian, vec![1]),
                forward: ForwardSpec::Mixture {
                    means: means.iter().map(|m| vec![*m]).collect(),
                    scales: vec![vec![noise]; k],
                },
                frozen: vec!["scales".into()],
            },
        ],
        edges: vec![[0, 1]],
        observed: vec![1],
    }
}

/// Two-node Gaussian: `z ~ N(0, 1)` and `x = z + location`.
pub fn location_spec(location: f64) -> DagSpec {
    DagSpec {
        nodes: vec![
            NodeSpec {
                name: "z".into(),
                domain: Domain::Real { dim: 1 },
                exogenous: NoiseSpec::new(NoiseFamily::Gaussian, vec![1]),
                forward: ForwardSpec::Linear {
                    weight: vec![],
                    bias: vec![0.0],
                    scale: vec![1.0],
                },
                frozen: vec!["bias".into(), "scale".into()],
            },
            NodeSpec {
                name: "x".into(),
                domain: Domain::Real { dim: 1 },
                exogenous: NoiseSpec::new(NoiseFamily::Gaussian, vec![1]),
                forward: ForwardSpec::Linear {
                    weight: vec![vec![1.0]],
                    bias: vec![location],
                    scale: vec![0.0],
                },
                frozen: vec!["weight".into(), "scale".into()],
            },
        ],
        edges: vec![[0, 1]],
        observed: vec![1],
    }
}

const LOCATION: &str = "location";

/// Minimum-Wasserstein fit of a location family: the distance between the data and
/// `location + noise` for one frozen standard normal draw per example.
pub struct MweLocation {
    data: Tensor,
}

impl MweLocation {
    pub fn new(data: &[f64]) -> Result<Self> {
        Ok(Self {
            data: Tensor::matrix(data.len(), 1, data.to_vec())?,
        })
    }

    pub fn init_params(&self, store: &mut ParamStore, start: f64) -> Result<()> {
        store.insert(LOCATION, ParamGroup::Forward, Tensor::vector(vec![start]))?;
        Ok(())
    }

    pub fn location(store: &ParamStore) -> Result<f64> {
        Ok(store.get(LOCATION)?.data()[0])
    }
}

impl Objective<f64> for MweLocation {
    type Noise = Tensor;

    fn num_examples(&self) -> usize {
        self.data.rows()
    }

    fn divergence_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn draw_noise(&self, batch: &[usize], _config: &TrainConfig, rng: &mut dyn RngCore) -> otpdag::Result<Tensor> {
        Ok(NoiseSpec::new(NoiseFamily::Gaussian, vec![1]).sample_batch(rng, Some(batch.len())))
    }

    fn evaluate(
        &self,
        tape: &Tape<f64>,
        params: &Bound<'_, f64>,
        batch: &[usize],
        noise: &Tensor,
        config: &TrainConfig,
    ) -> otpdag::Result<LossTerms<f64>> {
        let x = self.data.select_rows(batch);
        let location = tape.reshape(params.get(LOCATION)?, &[1, 1])?;
        let model = tape.add(noise, &location)?;
        let kind = match config.divergence {
            k @ DivergenceKind::Wasserstein1d { .. } => k,
            _ => DivergenceKind::Wasserstein1d { p: 2 },
        };
        Ok(LossTerms {
            recon: divergence(tape, &kind, &x, &model)?,
            divergences: Vec::new(),
        })
    }
}
