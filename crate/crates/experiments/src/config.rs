use std::path::{Path, PathBuf};
use std::str::FromStr;

use otpdag::ot::GroundMetric;
use otpdag::trainer::{CostKind, DivergenceKind, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{ExperimentError, Result};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "OTPDAG_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GmmMisspec,
    LdaBars,
    PoissonHmm,
    MweConsistency,
    ToyChain,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::GmmMisspec,
        ExperimentKind::LdaBars,
        ExperimentKind::PoissonHmm,
        ExperimentKind::MweConsistency,
        ExperimentKind::ToyChain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GmmMisspec => "gmm-misspec",
            ExperimentKind::LdaBars => "lda-bars",
            ExperimentKind::PoissonHmm => "poisson-hmm",
            ExperimentKind::MweConsistency => "mwe-consistency",
            ExperimentKind::ToyChain => "toy-chain",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown experiment {s:?}")))
    }
}

/// Size knobs; unset knobs take the experiment's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knobs {
    /// Components, topics or hidden states.
    pub k: Option<usize>,
    /// Documents.
    pub m: Option<usize>,
    /// Samples per dataset, or words per document.
    pub n: Option<usize>,
    /// Series length.
    pub t: Option<usize>,
    /// Vocabulary size.
    pub v: Option<usize>,
    /// Minibatch size.
    pub b: Option<usize>,
    /// Mis-specification case of the mixture study (1, 2 or 3).
    pub case: Option<u8>,
    /// Optimisation steps.
    pub steps: Option<usize>,
    /// Probability that the hidden chain stays in its state.
    pub stay_prob: Option<f64>,
    /// Sample-size grid of the consistency study.
    pub sizes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    /// Independent datasets or trials, seeded `seed`, `seed + 1`, ...
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub knobs: Knobs,
    /// Field-wise overrides of the experiment's training configuration.
    #[serde(default)]
    pub train: Map<String, Value>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Fully resolved sizes of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sizes {
    pub replicates: usize,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub t: usize,
    pub v: usize,
    pub b: usize,
    pub case: u8,
    pub steps: usize,
    pub stay_prob: f64,
    pub sizes: Vec<usize>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, seed: u64) -> Self {
        Self {
            experiment,
            seed,
            replicates: None,
            knobs: Knobs::default(),
            train: Map::new(),
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Replaces the seed with the value of [`SEED_ENV`] when it is set.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| ExperimentError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.knobs;
        let positive = [
            ("replicates", self.replicates),
            ("k", k.k),
            ("m", k.m),
            ("n", k.n),
            ("t", k.t),
            ("v", k.v),
            ("b", k.b),
            ("steps", k.steps),
        ];
        for (name, value) in positive {
            if value == Some(0) {
                return Err(ExperimentError::Config(format!("{name} must be positive")));
            }
        }
        if let Some(case) = k.case {
            if !(1..=3).contains(&case) {
                return Err(ExperimentError::Config(format!("case must be 1, 2 or 3, got {case}")));
            }
        }
        if let Some(p) = k.stay_prob {
            if !(p > 0.0 && p < 1.0) {
                return Err(ExperimentError::Config(format!("stay_prob must lie in (0, 1), got {p}")));
            }
        }
        if k.sizes.as_ref().is_some_and(|s| s.is_empty() || s.contains(&0)) {
            return Err(ExperimentError::Config("sizes must be a non-empty list of positive sizes".into()));
        }
        self.sizes()?;
        self.train_config()?;
        Ok(())
    }

    pub fn sizes(&self) -> Result<Sizes> {
        let k = &self.knobs;
        let (replicates, defaults) = match self.experiment {
            ExperimentKind::GmmMisspec => (10, (2, 0, 2000, 0, 0, 100, 300)),
            ExperimentKind::LdaBars => (3, (10, 1000, 100, 0, 25, 50, 0)),
            ExperimentKind::PoissonHmm => (10, (4, 0, 0, 5000, 0, 100, 0)),
            ExperimentKind::MweConsistency => (20, (0, 0, 0, 0, 0, 0, 200)),
            ExperimentKind::ToyChain => (1, (3, 0, 200, 0, 0, 200, 500)),
        };
        let (dk, dm, dn, dt, dv, db, dsteps) = defaults;
        Ok(Sizes {
            replicates: self.replicates.unwrap_or(replicates),
            k: k.k.unwrap_or(dk),
            m: k.m.unwrap_or(dm),
            n: k.n.unwrap_or(dn),
            t: k.t.unwrap_or(dt),
            v: k.v.unwrap_or(dv),
            b: k.b.unwrap_or(db),
            case: k.case.unwrap_or(3),
            steps: k.steps.unwrap_or(dsteps),
            stay_prob: k.stay_prob.unwrap_or(0.95),
            sizes: k.sizes.clone().unwrap_or_else(|| vec![100, 1000, 10000]),
        })
    }

    /// The experiment's default training configuration with the `train` overrides applied.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut base = serde_json::to_value(default_train_config(self.experiment))?;
        let fields = base.as_object_mut().expect("train config serialises to an object");
        for (key, value) in &self.train {
            if !fields.contains_key(key) {
                return Err(ExperimentError::Config(format!("unknown training field {key:?}")));
            }
            fields.insert(key.clone(), value.clone());
        }
        let mut config: TrainConfig =
            serde_json::from_value(base).map_err(|e| ExperimentError::Config(format!("train: {e}")))?;
        if !self.train.contains_key("seed") {
            config.seed = self.seed;
        }
        config.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(config)
    }
}

/// Training defaults of each study.
pub fn default_train_config(kind: ExperimentKind) -> TrainConfig {
    let base = TrainConfig::default();
    match kind {
        ExperimentKind::GmmMisspec => TrainConfig {
            eta: 0.1,
            batch_size: 100,
            epochs: 1000,
            lr: 0.05,
            backward_lr: Some(0.01),
            tau: 0.1,
            divergence: DivergenceKind::Exact {
                ground: GroundMetric::SquaredEuclidean,
            },
            ..base
        },
        ExperimentKind::LdaBars => TrainConfig {
            eta: 1.0,
            batch_size: 50,
            epochs: 300,
            lr: 1e-2,
            cost: CostKind::CrossEntropy,
            tau: 1.0,
            divergence: DivergenceKind::Exact {
                ground: GroundMetric::SquaredEuclidean,
            },
            ..base
        },
        ExperimentKind::PoissonHmm => TrainConfig {
            eta: 0.1,
            batch_size: 100,
            epochs: 30,
            lr: 1e-3,
            cost: CostKind::SmoothL1,
            tau: 0.1,
            divergence: DivergenceKind::Exact { ground: GroundMetric::Kl },
            ..base
        },
        ExperimentKind::MweConsistency => TrainConfig {
            eta: 0.0,
            lr: 0.5,
            divergence: DivergenceKind::Wasserstein1d { p: 2 },
            ..base
        },
        ExperimentKind::ToyChain => TrainConfig {
            eta: 0.1,
            batch_size: 200,
            epochs: 500,
            lr: 0.05,
            tau: 0.1,
            divergence: DivergenceKind::Exact {
                ground: GroundMetric::SquaredEuclidean,
            },
            ..base
        },
    }
}

impl Sizes {
    pub fn grid_side(&self) -> Option<usize> {
        let s = (self.v as f64).sqrt().round() as usize;
        (s * s == self.v).then_some(s)
    }
}
