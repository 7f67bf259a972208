use otpdag::baselines::GmmClamps;
use otpdag::graph::{DagSpec, Domain, ForwardSpec, NodeSpec};
use otpdag::reparam::{NoiseFamily, NoiseSpec};
use otpdag::ParamStore;

use crate::error::Result;

/// Mixture as a two-node graph `z -> x`. Clamped weights freeze the component logits and a
/// clamped variance freezes the component scales.
pub fn gmm_spec(init_means: &[Vec<f64>], clamps: &GmmClamps<f64>) -> DagSpec {
    let k = init_means.len();
    let d = init_means.first().map_or(0, Vec::len);
    let logits = match &clamps.weights {
        Some(w) => w.iter().map(|p| (p + 1e-10).ln()).collect(),
        None => vec![0.0; k],
    };
    let scale = clamps.variance.map_or(1.0, f64::sqrt);
    DagSpec {
        nodes: vec![
            NodeSpec {
                name: "z".into(),
                domain: Domain::Categorical { k },
                exogenous: NoiseSpec::new(NoiseFamily::Gumbel, vec![k]),
                forward: ForwardSpec::Categorical { logits },
                frozen: if clamps.weights.is_some() { vec!["logits".into()] } else { vec![] },
            },
            NodeSpec {
                name: "x".into(),
                domain: Domain::Real { dim: d },
                exogenous: NoiseSpec::new(NoiseFamily::Gaussian, vec![d]),
                forward: ForwardSpec::Mixture {
                    means: init_means.to_vec(),
                    scales: vec![vec![scale; d]; k],
                },
                frozen: if clamps.variance.is_some() { vec!["scales".into()] } else { vec![] },
            },
        ],
        edges: vec![[0, 1]],
        observed: vec![1],
    }
}

/// Component means of a model built by [`gmm_spec`].
pub fn mixture_means(store: &ParamStore) -> Result<Vec<Vec<f64>>> {
    let means = store.get("x.means")?;
    Ok((0..means.rows()).map(|i| means.row(i).to_vec()).collect())
}
