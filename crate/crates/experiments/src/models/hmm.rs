use otpdag::baselines::quantile_rates;
use otpdag::gradtape::{Bound, ParamGroup, Tape};
use otpdag::graph::Mlp;
use otpdag::reparam::{cat_concrete_logits, poisson_gaussian, NoiseFamily, NoiseSpec};
use otpdag::trainer::{divergence, reconstruction_cost, LossTerms, Objective, TrainConfig};
use otpdag::{ParamStore, Tensor};
use rand::RngCore;

use crate::error::Result;

const LOG_RATES: &str = "x.log_rates";

/// Poisson hidden Markov chain with a known stay probability.
///
/// The examples are time steps. An MLP maps the standardised count `x_t` to state logits; its
/// relaxed sample drives the Poisson-Gaussian emission for the reconstruction. The penalty
/// compares the backward state distribution at `t` with the one propagated from `t - 1`
/// through the transition matrix (uniform at `t = 0`).
pub struct HmmModel {
    counts: Vec<u64>,
    k: usize,
    stay_prob: f64,
    shift: f64,
    scale: f64,
    net: Mlp,
}

pub struct HmmNoise {
    gumbel: Tensor,
    normal: Tensor,
}

impl HmmModel {
    pub fn new(counts: &[u64], k: usize, stay_prob: f64, hidden: &[usize]) -> Self {
        let n = counts.len().max(1) as f64;
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
        let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
        let mut sizes = vec![1];
        sizes.extend_from_slice(hidden);
        sizes.push(k);
        Self {
            counts: counts.to_vec(),
            k,
            stay_prob,
            shift: mean,
            scale: var.sqrt().max(1e-8),
            net: Mlp::new("backward.z", sizes),
        }
    }

    /// Rates start at the count quantiles, the same start as the EM baseline.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        let rates = quantile_rates::<f64>(&self.counts, self.k);
        store.insert(LOG_RATES, ParamGroup::Forward, Tensor::vector(rates.iter().map(|r| r.ln()).collect()))?;
        self.net.register(store, ParamGroup::Backward, rng)?;
        Ok(())
    }

    pub fn rates(store: &ParamStore) -> Result<Vec<f64>> {
        Ok(store.get(LOG_RATES)?.data().iter().map(|v| v.exp()).collect())
    }

    fn column(&self, idx: impl Iterator<Item = usize>, standardize: bool) -> Tensor {
        let values: Vec<f64> = idx
            .map(|t| {
                let c = self.counts[t] as f64;
                if standardize {
                    (c - self.shift) / self.scale
                } else {
                    c
                }
            })
            .collect();
        let n = values.len();
        Tensor::matrix(n, 1, values).expect("column shape")
    }

    fn transition(&self) -> Tensor {
        let off = (1.0 - self.stay_prob) / (self.k as f64 - 1.0).max(1.0);
        let data = (0..self.k * self.k)
            .map(|i| if i / self.k == i % self.k { self.stay_prob } else { off })
            .collect();
        Tensor::matrix(self.k, self.k, data).expect("square")
    }
}

impl Objective<f64> for HmmModel {
    type Noise = HmmNoise;

    fn num_examples(&self) -> usize {
        self.counts.len()
    }

    fn divergence_names(&self) -> Vec<String> {
        vec!["z".into()]
    }

    fn draw_noise(&self, batch: &[usize], _config: &TrainConfig, rng: &mut dyn RngCore) -> otpdag::Result<HmmNoise> {
        Ok(HmmNoise {
            gumbel: NoiseSpec::new(NoiseFamily::Gumbel, vec![self.k]).sample_batch(rng, Some(batch.len())),
            normal: NoiseSpec::new(NoiseFamily::Gaussian, vec![1]).sample_batch(rng, Some(batch.len())),
        })
    }

    fn evaluate(
        &self,
        tape: &Tape<f64>,
        params: &Bound<'_, f64>,
        batch: &[usize],
        noise: &HmmNoise,
        config: &TrainConfig,
    ) -> otpdag::Result<LossTerms<f64>> {
        let b = batch.len();
        let x = self.column(batch.iter().copied(), false);
        let logits = self.net.forward(tape, params, &self.column(batch.iter().copied(), true))?;
        let z = cat_concrete_logits(tape, &logits, config.tau, &noise.gumbel)?;
        let recon_x = poisson_gaussian(tape, &z, params.get(LOG_RATES)?, &noise.normal)?;
        let recon = reconstruction_cost(tape, &x, &recon_x, config.cost)?;

        let current = tape.softmax(&logits)?;
        let prev_logits = self
            .net
            .forward(tape, params, &self.column(batch.iter().map(|&t| t.saturating_sub(1)), true))?;
        let propagated = tape.matmul(&tape.softmax(&prev_logits)?, &self.transition())?;
        let keep: Vec<f64> = batch
            .iter()
            .flat_map(|&t| std::iter::repeat_n(if t == 0 { 0.0 } else { 1.0 }, self.k))
            .collect();
        let uniform: Vec<f64> = keep.iter().map(|m| (1.0 - m) / self.k as f64).collect();
        let prior = tape.add(
            &tape.mul(&propagated, &Tensor::matrix(b, self.k, keep)?)?,
            &Tensor::matrix(b, self.k, uniform)?,
        )?;
        let div = divergence(tape, &config.divergence, &current, &prior)?;
        Ok(LossTerms {
            recon,
            divergences: vec![("z".into(), div)],
        })
    }
}
