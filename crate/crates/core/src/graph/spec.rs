use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reparam::{NoiseFamily, NoiseSpec};

/// Value space of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    /// One-hot (or relaxed one-hot) vector over `k` categories.
    Categorical { k: usize },
    Real { dim: usize },
    /// Non-negative count, carried as a single float.
    Count,
}

impl Domain {
    /// Columns used to encode one value.
    pub fn width(&self) -> usize {
        match *self {
            Domain::Categorical { k } => k,
            Domain::Real { dim } => dim,
            Domain::Count => 1,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Domain::Categorical { .. })
    }
}

/// Structural equation of a node, with initial parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForwardSpec {
    /// Root categorical with learnable `logits`; Gumbel noise of width `k`.
    Categorical { logits: Vec<f64> },
    /// Categorical child of one categorical parent: row `j` of `logits` gives the child
    /// distribution when the parent is in state `j`.
    CategoricalTable { logits: Vec<Vec<f64>> },
    /// `x = pa . weight + bias + noise * scale` over the concatenated parent encodings.
    Linear {
        #[serde(default)]
        weight: Vec<Vec<f64>>,
        bias: Vec<f64>,
        scale: Vec<f64>,
    },
    /// Component emission under one categorical parent `z`:
    /// `x = z . means + (z . scales) * noise`.
    Mixture { means: Vec<Vec<f64>>, scales: Vec<Vec<f64>> },
    /// Gaussian surrogate of a Poisson count with rate `exp(z . log_rates)`.
    PoissonGaussian { log_rates: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub domain: Domain,
    pub exogenous: NoiseSpec,
    pub forward: ForwardSpec,
    /// Forward parameters (by short name, e.g. `scales`) held fixed during training.
    #[serde(default)]
    pub frozen: Vec<String>,
}

/// A directed acyclic graph of nodes with an observed subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DagSpec {
    pub nodes: Vec<NodeSpec>,
    /// `[parent, child]` pairs.
    pub edges: Vec<[usize; 2]>,
    pub observed: Vec<usize>,
}

fn graph_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Graph(msg.into()))
}

fn matrix_shape(m: &[Vec<f64>]) -> Option<(usize, usize)> {
    let cols = m.first().map_or(0, Vec::len);
    m.iter().all(|r| r.len() == cols).then_some((m.len(), cols))
}

impl DagSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parents of `node` in ascending index order.
    pub fn parents(&self, node: usize) -> Vec<usize> {
        let mut p: Vec<usize> = self.edges.iter().filter(|e| e[1] == node).map(|e| e[0]).collect();
        p.sort_unstable();
        p
    }

    pub fn hidden(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|i| !self.observed.contains(i)).collect()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Total encoding width of the parents of `node`.
    pub fn parent_width(&self, node: usize) -> usize {
        self.parents(node).iter().map(|&p| self.nodes[p].domain.width()).sum()
    }

    /// Checks structure and parameter shapes; returns a parent-before-child order.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut names = HashSet::new();
        for node in &self.nodes {
            if node.name.is_empty() || !names.insert(node.name.as_str()) {
                return graph_err(format!("node names must be unique and non-empty: {:?}", node.name));
            }
        }
        let mut seen = HashSet::new();
        for &[from, to] in &self.edges {
            if from >= n || to >= n {
                return graph_err(format!("edge ({from}, {to}) refers to a missing node; graph has {n}"));
            }
            if from == to {
                return graph_err(format!("self-loop on node {from} ({})", self.nodes[from].name));
            }
            if !seen.insert((from, to)) {
                return graph_err(format!("duplicate edge ({from}, {to})"));
            }
        }
        let mut obs = HashSet::new();
        for &o in &self.observed {
            if o >= n || !obs.insert(o) {
                return graph_err(format!("observed index {o} is out of range or repeated"));
            }
        }
        let order = self.topological_order()?;
        for i in 0..n {
            self.check_node(i)?;
        }
        Ok(order)
    }

    fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for e in &self.edges {
            indegree[e[1]] += 1;
        }
        let mut order = Vec::with_capacity(n);
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for e in self.edges.iter().filter(|e| e[0] == i) {
                indegree[e[1]] -= 1;
                if indegree[e[1]] == 0 {
                    ready.insert(e[1]);
                }
            }
        }
        if order.len() == n {
            return Ok(order);
        }
        let cycle = self.find_cycle(&indegree);
        let names: Vec<&str> = cycle.iter().map(|&i| self.nodes[i].name.as_str()).collect();
        graph_err(format!("cycle detected: {}", names.join(" -> ")))
    }

    /// Walks parent links among the nodes left over by Kahn's algorithm until a node repeats.
    fn find_cycle(&self, indegree: &[usize]) -> Vec<usize> {
        let start = indegree.iter().position(|&d| d > 0).expect("a cycle remains");
        let mut path = vec![start];
        let mut current = start;
        loop {
            let parent = self
                .edges
                .iter()
                .find(|e| e[1] == current && indegree[e[0]] > 0)
                .map(|e| e[0])
                .expect("every node on a cycle has a remaining parent");
            if let Some(pos) = path.iter().position(|&p| p == parent) {
                let mut cycle: Vec<usize> = path[pos..].to_vec();
                cycle.reverse();
                cycle.push(cycle[0]);
                return cycle;
            }
            path.push(parent);
            current = parent;
        }
    }

    fn check_node(&self, i: usize) -> Result<()> {
        let node = &self.nodes[i];
        let parents = self.parents(i);
        let in_width = self.parent_width(i);
        let width = node.domain.width();
        let noise_len: usize = node.exogenous.shape.iter().product();
        let bad = |msg: String| Error::Graph(format!("node {}: {msg}", node.name));
        let single_categorical = || match parents.as_slice() {
            [p] => match self.nodes[*p].domain {
                Domain::Categorical { k } => Ok(k),
                _ => Err(bad("parent must be categorical".into())),
            },
            _ => Err(bad(format!("needs exactly one categorical parent, has {}", parents.len()))),
        };
        if width == 0 {
            return Err(bad("domain has zero width".into()));
        }
        match &node.forward {
            ForwardSpec::Categorical { logits } => {
                if !parents.is_empty() {
                    return Err(bad("a root categorical cannot have parents".into()));
                }
                if !node.domain.is_categorical() || logits.len() != width {
                    return Err(bad(format!("{} logits for domain {:?}", logits.len(), node.domain)));
                }
                if node.exogenous.family != NoiseFamily::Gumbel || noise_len != width {
                    return Err(bad("categorical nodes need Gumbel noise of width k".into()));
                }
            }
            ForwardSpec::CategoricalTable { logits } => {
                let k_parent = single_categorical()?;
                if !node.domain.is_categorical() || matrix_shape(logits) != Some((k_parent, width)) {
                    return Err(bad(format!("table must be {k_parent} x {width}")));
                }
                if node.exogenous.family != NoiseFamily::Gumbel || noise_len != width {
                    return Err(bad("categorical nodes need Gumbel noise of width k".into()));
                }
            }
            ForwardSpec::Linear { weight, bias, scale } => {
                if node.domain.is_categorical() {
                    return Err(bad("linear maps need a real or count domain".into()));
                }
                let weight_ok = if in_width == 0 {
                    weight.is_empty()
                } else {
                    matrix_shape(weight) == Some((in_width, width))
                };
                if !weight_ok || bias.len() != width || scale.len() != width {
                    return Err(bad(format!("linear map needs weight {in_width} x {width}, bias and scale of {width}")));
                }
                if noise_len != width || node.exogenous.family == NoiseFamily::Gumbel {
                    return Err(bad("linear maps need Gaussian or uniform noise of the domain width".into()));
                }
            }
            ForwardSpec::Mixture { means, scales } => {
                let k_parent = single_categorical()?;
                if node.domain.is_categorical()
                    || matrix_shape(means) != Some((k_parent, width))
                    || matrix_shape(scales) != Some((k_parent, width))
                {
                    return Err(bad(format!("mixture needs means and scales of {k_parent} x {width}")));
                }
                if noise_len != width || node.exogenous.family == NoiseFamily::Gumbel {
                    return Err(bad("mixtures need Gaussian or uniform noise of the domain width".into()));
                }
            }
            ForwardSpec::PoissonGaussian { log_rates } => {
                let k_parent = single_categorical()?;
                if node.domain != Domain::Count || log_rates.len() != k_parent {
                    return Err(bad(format!("count node needs {k_parent} log rates")));
                }
                if noise_len != 1 || node.exogenous.family != NoiseFamily::Gaussian {
                    return Err(bad("count nodes need one Gaussian noise entry".into()));
                }
            }
        }
        for f in &node.frozen {
            if !node.forward.param_names().contains(&f.as_str()) {
                return Err(bad(format!("cannot freeze unknown parameter {f}")));
            }
        }
        Ok(())
    }
}

impl ForwardSpec {
    /// Short names of the learnable tensors of this map.
    pub fn param_names(&self) -> Vec<&'static str> {
        match self {
            ForwardSpec::Categorical { .. } | ForwardSpec::CategoricalTable { .. } => vec!["logits"],
            ForwardSpec::Linear { weight, .. } => {
                if weight.is_empty() {
                    vec!["bias", "scale"]
                } else {
                    vec!["weight", "bias", "scale"]
                }
            }
            ForwardSpec::Mixture { .. } => vec!["means", "scales"],
            ForwardSpec::PoissonGaussian { .. } => vec!["log_rates"],
        }
    }
}

/// Fully qualified parameter name of a node parameter.
pub fn param_name(node: &str, param: &str) -> String {
    format!("{node}.{param}")
}
