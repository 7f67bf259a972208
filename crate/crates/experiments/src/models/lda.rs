use otpdag::gradtape::{Bound, ParamGroup, Tape};
use otpdag::graph::{AmortizedBackward, BackwardMap, Domain};
use otpdag::reparam::{dirichlet_laplace_sample, NoiseFamily, NoiseSpec};
use otpdag::trainer::{divergence, reconstruction_cost, LossTerms, Objective, TrainConfig};
use otpdag::{ParamStore, Tensor};
use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

const TOPICS: &str = "topics.logits";
const LOG_ALPHA: &str = "theta.log_alpha";

/// Topic model with the per-word topic indicators replaced by their expectation: a document's
/// word distribution is `theta^T softmax(topic logits)`. The backward map sends a document's
/// word frequencies to a logistic-normal draw of `theta`; the penalty compares those draws with
/// softmax-Laplace draws from the Dirichlet prior.
pub struct LdaModel {
    freqs: Tensor,
    k: usize,
    encoder: AmortizedBackward,
}

pub struct LdaNoise {
    posterior: Tensor,
    prior: Tensor,
}

impl LdaModel {
    /// `counts` holds one row of word counts per document.
    pub fn new(counts: &[Vec<f64>], k: usize, hidden: &[usize]) -> Result<Self> {
        let v = counts.first().map_or(0, Vec::len);
        let rows: Vec<Vec<f64>> = counts
            .iter()
            .map(|r| {
                let total: f64 = r.iter().sum::<f64>().max(1.0);
                r.iter().map(|c| c / total).collect()
            })
            .collect();
        Ok(Self {
            freqs: Tensor::from_rows(&rows)?,
            k,
            encoder: AmortizedBackward::new("backward.doc", v, vec![Domain::Real { dim: k }], hidden),
        })
    }

    pub fn vocab(&self) -> usize {
        self.freqs.cols()
    }

    /// Registers topic logits (small random values), `log alpha = 0` and the encoder.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let logits: Vec<f64> = (0..self.k * self.vocab()).map(|_| normal.sample(rng)).collect();
        store.insert(TOPICS, ParamGroup::Forward, Tensor::matrix(self.k, self.vocab(), logits)?)?;
        store.insert(LOG_ALPHA, ParamGroup::Forward, Tensor::vector(vec![0.0; self.k]))?;
        self.encoder.register(store, rng)?;
        Ok(())
    }

    /// Current topic-word distributions, `K` rows of length `V`.
    pub fn topics(store: &ParamStore) -> Result<Vec<Vec<f64>>> {
        let logits = store.get(TOPICS)?;
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exp.iter().sum();
                exp.into_iter().map(|e| e / total).collect()
            })
            .collect())
    }

    pub fn alpha(store: &ParamStore) -> Result<Vec<f64>> {
        Ok(store.get(LOG_ALPHA)?.data().iter().map(|v| v.exp()).collect())
    }
}

impl Objective<f64> for LdaModel {
    type Noise = LdaNoise;

    fn num_examples(&self) -> usize {
        self.freqs.rows()
    }

    fn divergence_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn draw_noise(&self, batch: &[usize], _config: &TrainConfig, rng: &mut dyn RngCore) -> otpdag::Result<LdaNoise> {
        let posterior = BackwardMap::<f64>::draw_noise(&self.encoder, batch.len(), rng);
        let prior = NoiseSpec::new(NoiseFamily::Gaussian, vec![self.k]).sample_batch(rng, Some(batch.len()));
        Ok(LdaNoise { posterior, prior })
    }

    fn evaluate(
        &self,
        tape: &Tape<f64>,
        params: &Bound<'_, f64>,
        batch: &[usize],
        noise: &LdaNoise,
        config: &TrainConfig,
    ) -> otpdag::Result<LossTerms<f64>> {
        let x = self.freqs.select_rows(batch);
        let logits = self.encoder.sample(tape, params, &x, &noise.posterior, config.tau)?.remove(0);
        let theta = tape.softmax(&logits)?;
        let words = tape.matmul(&theta, &tape.softmax(params.get(TOPICS)?)?)?;
        let recon = reconstruction_cost(tape, &x, &words, config.cost)?;
        let alpha = tape.exp(params.get(LOG_ALPHA)?)?;
        let prior = dirichlet_laplace_sample(tape, &alpha, &noise.prior)?;
        let div = divergence(tape, &config.divergence, &theta, &prior)?;
        Ok(LossTerms {
            recon,
            divergences: vec![("theta".into(), div)],
        })
    }
}
