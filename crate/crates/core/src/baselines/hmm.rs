use serde::{Deserialize, Serialize};

use super::{converged, EmOptions};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Poisson-emission HMM with a uniform initial distribution and a symmetric transition
/// matrix that stays in place with probability `stay_prob`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmParams<T> {
    pub rates: Vec<T>,
    pub stay_prob: T,
}

impl<T: Scalar> HmmParams<T> {
    pub fn states(&self) -> usize {
        self.rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.rates.iter().any(|r| !(*r > T::zero()) || !r.is_finite()) {
            return Err(Error::InvalidArgument("hmm rates must be positive and finite".into()));
        }
        let p = self.stay_prob;
        if !(p > T::zero() && p < T::one()) {
            return Err(Error::InvalidArgument(format!("stay probability must lie in (0, 1), got {p}")));
        }
        Ok(())
    }

    /// Transition probability from state `i` to state `j`.
    pub fn transition(&self, i: usize, j: usize) -> T {
        let k = self.states();
        if k == 1 {
            T::one()
        } else if i == j {
            self.stay_prob
        } else {
            (T::one() - self.stay_prob) / T::from_usize_lossy(k - 1)
        }
    }
}

/// Smoothed state marginals and the series log-likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriors<T> {
    /// `T x K`, row-major.
    pub gamma: Vec<T>,
    pub log_likelihood: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmFit<T> {
    pub params: HmmParams<T>,
    /// Log-likelihood of the parameters entering each iteration, then of the final parameters.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

fn log_factorials(max: u64) -> Vec<f64> {
    let mut table = Vec::with_capacity(max as usize + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for x in 1..=max {
        acc += (x as f64).ln();
        table.push(acc);
    }
    table
}

/// Scaled forward-backward pass.
pub fn forward_backward<T: Scalar>(series: &[u64], params: &HmmParams<T>) -> Result<Posteriors<T>> {
    params.validate()?;
    let (len, k) = (series.len(), params.states());
    if len == 0 {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    let lf = log_factorials(series.iter().copied().max().unwrap_or(0));
    let log_rates: Vec<T> = params.rates.iter().map(|r| r.ln()).collect();
    let trans: Vec<T> = (0..k * k).map(|ij| params.transition(ij / k, ij % k)).collect();

    // Emissions are stored relative to their per-step maximum; the offsets enter the likelihood.
    let mut emit = vec![T::zero(); len * k];
    let mut log_likelihood = T::zero();
    for (t, &x) in series.iter().enumerate() {
        let xf = T::from_u64(x).expect("count representable");
        let row = &mut emit[t * k..(t + 1) * k];
        for s in 0..k {
            row[s] = xf * log_rates[s] - params.rates[s];
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        log_likelihood = log_likelihood + max - T::lit(lf[x as usize]);
    }

    let underflow = |t: usize| Error::Underflow {
        step: t,
        detail: "forward normaliser vanished".into(),
    };
    let mut alpha = vec![T::zero(); len * k];
    let mut scale = vec![T::zero(); len];
    let uniform = T::one() / T::from_usize_lossy(k);
    for t in 0..len {
        for j in 0..k {
            let prior = if t == 0 {
                uniform
            } else {
                (0..k).map(|i| alpha[(t - 1) * k + i] * trans[i * k + j]).sum()
            };
            alpha[t * k + j] = prior * emit[t * k + j];
        }
        let c: T = alpha[t * k..(t + 1) * k].iter().copied().sum();
        if !(c > T::zero()) || !c.is_finite() {
            return Err(underflow(t));
        }
        alpha[t * k..(t + 1) * k].iter_mut().for_each(|a| *a = *a / c);
        scale[t] = c;
        log_likelihood = log_likelihood + c.ln();
    }

    let mut beta = vec![T::one(); len * k];
    for t in (0..len - 1).rev() {
        for i in 0..k {
            let v: T = (0..k).map(|j| trans[i * k + j] * emit[(t + 1) * k + j] * beta[(t + 1) * k + j]).sum();
            beta[t * k + i] = v / scale[t + 1];
        }
    }
    let mut gamma: Vec<T> = alpha.iter().zip(&beta).map(|(a, b)| *a * *b).collect();
    for t in 0..len {
        let row = &mut gamma[t * k..(t + 1) * k];
        let s: T = row.iter().copied().sum();
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::Underflow {
                step: t,
                detail: "state posterior vanished".into(),
            });
        }
        row.iter_mut().for_each(|g| *g = *g / s);
    }
    Ok(Posteriors { gamma, log_likelihood })
}

/// Rates at the `(i + 0.5) / k` quantiles of the series, nudged apart when they coincide.
pub fn quantile_rates<T: Scalar>(series: &[u64], k: usize) -> Vec<T> {
    let mut sorted = series.to_vec();
    sorted.sort_unstable();
    let mean = series.iter().sum::<u64>() as f64 / series.len().max(1) as f64;
    let gap = (0.01 * mean).max(1e-3);
    let mut rates: Vec<f64> = Vec::with_capacity(k);
    for i in 0..k {
        let pos = ((i as f64 + 0.5) / k as f64 * sorted.len() as f64) as usize;
        let q = sorted.get(pos.min(sorted.len().saturating_sub(1))).copied().unwrap_or(1) as f64;
        let mut r = q.max(gap);
        if let Some(prev) = rates.last() {
            r = r.max(prev + gap);
        }
        rates.push(r);
    }
    rates.into_iter().map(T::lit).collect()
}

/// Rate-only Baum-Welch with the stay probability held at `known_p`.
pub fn em_poisson_hmm<T: Scalar>(series: &[u64], k: usize, known_p: T, options: &EmOptions) -> Result<HmmFit<T>> {
    if k == 0 {
        return Err(Error::InvalidArgument("em_poisson_hmm needs at least one state".into()));
    }
    let mut params = HmmParams {
        rates: quantile_rates(series, k),
        stay_prob: known_p,
    };
    params.validate()?;
    let floor = T::lit(options.floor);
    let counts: Vec<T> = series.iter().map(|x| T::from_u64(*x).expect("count representable")).collect();
    let mut log_likelihood = Vec::new();
    let mut is_converged = false;
    for _ in 0..options.max_iters {
        let post = forward_backward(series, &params)?;
        let ll = post.log_likelihood.to_f64_lossy();
        if let Some(prev) = log_likelihood.last() {
            if converged(*prev, ll, options.tol) {
                log_likelihood.push(ll);
                is_converged = true;
                break;
            }
        }
        log_likelihood.push(ll);
        for s in 0..k {
            let mass: T = (0..series.len()).map(|t| post.gamma[t * k + s]).sum();
            if mass > T::zero() {
                let weighted: T = (0..series.len()).map(|t| post.gamma[t * k + s] * counts[t]).sum();
                params.rates[s] = (weighted / mass).max(floor);
            }
        }
    }
    if !is_converged {
        log_likelihood.push(forward_backward(series, &params)?.log_likelihood.to_f64_lossy());
    }
    Ok(HmmFit {
        params,
        log_likelihood,
        converged: is_converged,
    })
}
