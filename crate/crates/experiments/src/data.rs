//! Synthetic datasets of the three studies, each bit-reproducible from its seed.

use otpdag::baselines::GmmClamps;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ExperimentError, Result};

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hex SHA-256 of a dataset's canonical JSON encoding.
pub fn digest<S: Serialize>(dataset: &S) -> Result<String> {
    let bytes = serde_json::to_vec(dataset)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmTruth {
    pub means: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub variance: f64,
}

/// Two bivariate unit-variance Gaussians plus the values the fitted model is clamped to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmDataset {
    pub case: u8,
    /// `N` rows of length 2.
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub truth: GmmTruth,
    pub clamps: GmmClamps<f64>,
}

/// Mis-specified mixture study: case 1 clamps the variance to a draw from `U(1, 2)`, case 2
/// clamps the first weight to a draw from `U(0, 1)`, case 3 clamps both.
pub fn gen_gmm_misspec(seed: u64, case: u8, n: usize) -> Result<GmmDataset> {
    if !(1..=3).contains(&case) {
        return Err(ExperimentError::Config(format!("case must be 1, 2 or 3, got {case}")));
    }
    let mut rng = rng_for(seed);
    let means: Vec<Vec<f64>> = (0..2).map(|_| (0..2).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
    let pi = rng.random_range(0.5..0.7);
    let variance_clamp = rng.random_range(1.0..2.0);
    let weight_clamp: f64 = rng.random_range(0.0..1.0);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z = usize::from(rng.random::<f64>() >= pi);
        points.push(means[z].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect());
        labels.push(z);
    }
    let clamps = GmmClamps {
        variance: (case != 2).then_some(variance_clamp),
        weights: (case != 1).then(|| vec![weight_clamp, 1.0 - weight_clamp]),
    };
    Ok(GmmDataset {
        case,
        points,
        labels,
        truth: GmmTruth {
            means,
            weights: vec![pi, 1.0 - pi],
            variance: 1.0,
        },
        clamps,
    })
}

/// Horizontal then vertical bars on a `side x side` grid; each row is uniform over its bar.
pub fn bars(side: usize) -> Vec<Vec<f64>> {
    let v = side * side;
    let mut topics = Vec::with_capacity(2 * side);
    for r in 0..side {
        let mut row = vec![0.0; v];
        (0..side).for_each(|c| row[r * side + c] = 1.0 / side as f64);
        topics.push(row);
    }
    for c in 0..side {
        let mut row = vec![0.0; v];
        (0..side).for_each(|r| row[r * side + c] = 1.0 / side as f64);
        topics.push(row);
    }
    topics
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaCorpus {
    /// `M` documents of `N` word ids.
    pub docs: Vec<Vec<usize>>,
    pub vocab: usize,
    /// `K x V` topic-word distributions.
    pub topics: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl LdaCorpus {
    /// Word counts of every document, `M` rows of length `V`.
    pub fn counts(&self) -> Vec<Vec<f64>> {
        self.docs
            .iter()
            .map(|doc| {
                let mut row = vec![0.0; self.vocab];
                doc.iter().for_each(|&w| row[w] += 1.0);
                row
            })
            .collect()
    }
}

fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let mut u = rng.random::<f64>() * probs.iter().sum::<f64>();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter().map(|g| g / total).collect()
    } else {
        let mut one_hot = vec![0.0; k];
        one_hot[rng.random_range(0..k)] = 1.0;
        one_hot
    }
}

/// Bars corpus with `alpha = 1/K`; `V` must be a square grid with `K` equal to twice its side.
pub fn gen_lda_bars(seed: u64, k: usize, m: usize, n: usize, v: usize) -> Result<LdaCorpus> {
    let side = (v as f64).sqrt().round() as usize;
    if side * side != v || k != 2 * side {
        return Err(ExperimentError::Config(format!(
            "bars need a square vocabulary with K = 2 * side, got K = {k}, V = {v}"
        )));
    }
    let topics = bars(side);
    let alpha = 1.0 / k as f64;
    let mut rng = rng_for(seed);
    let docs = (0..m)
        .map(|_| {
            let theta = dirichlet(&mut rng, alpha, k);
            (0..n)
                .map(|_| {
                    let z = categorical(&mut rng, &theta);
                    categorical(&mut rng, &topics[z])
                })
                .collect()
        })
        .collect();
    Ok(LdaCorpus {
        docs,
        vocab: v,
        topics,
        alpha,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmSeries {
    pub counts: Vec<u64>,
    pub states: Vec<usize>,
    pub rates: Vec<f64>,
    pub stay_prob: f64,
}

/// Four-state Poisson chain with rates drawn from `U(10,20)`, `U(30,40)`, `U(50,60)` and
/// `U(80,90)`, a uniform initial state, and uniform moves to the other states.
pub fn gen_poisson_hmm(seed: u64, t: usize, stay_prob: f64) -> Result<HmmSeries> {
    if t == 0 {
        return Err(ExperimentError::Config("series length must be positive".into()));
    }
    if !(0.0..=1.0).contains(&stay_prob) {
        return Err(ExperimentError::Config(format!("stay probability {stay_prob} outside [0, 1]")));
    }
    let mut rng = rng_for(seed);
    let rates: Vec<f64> = [(10.0, 20.0), (30.0, 40.0), (50.0, 60.0), (80.0, 90.0)]
        .iter()
        .map(|&(lo, hi)| rng.random_range(lo..hi))
        .collect();
    let emit: Vec<Poisson<f64>> = rates.iter().map(|r| Poisson::new(*r).expect("positive rate")).collect();
    let mut states = Vec::with_capacity(t);
    let mut counts = Vec::with_capacity(t);
    let mut state = rng.random_range(0..4);
    for step in 0..t {
        if step > 0 && rng.random::<f64>() >= stay_prob {
            state = (state + rng.random_range(1..4)) % 4;
        }
        states.push(state);
        counts.push(emit[state].sample(&mut rng) as u64);
    }
    Ok(HmmSeries {
        counts,
        states,
        rates,
        stay_prob,
    })
}
