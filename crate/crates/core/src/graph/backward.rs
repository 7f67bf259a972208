use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Result};
use crate::gradtape::{Bound, ParamGroup, ParamStore, Tape, Tensor};
use crate::reparam::{cat_concrete_logits, gumbel};
use crate::scalar::Scalar;

use super::spec::{DagSpec, Domain};

/// Stochastic map from an observed value to samples of its parents.
pub trait BackwardMap<T: Scalar> {
    /// Adds this map's parameters (in the backward group) to `store`.
    fn register(&self, store: &mut ParamStore<T>, rng: &mut dyn RngCore) -> Result<()>;

    /// Noise for `rows` calls, shape `rows x noise_width`.
    fn draw_noise(&self, rows: usize, rng: &mut dyn RngCore) -> Tensor<T>;

    /// Parent samples for each row of `x`, one `B x width` tensor per parent in ascending
    /// index order. Categorical parents come out as relaxed one-hot rows at `tau`.
    fn sample(
        &self,
        tape: &Tape<T>,
        params: &Bound<'_, T>,
        x: &Tensor<T>,
        noise: &Tensor<T>,
        tau: f64,
    ) -> Result<Vec<Tensor<T>>>;
}

/// Dense tanh network with a linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    prefix: String,
    sizes: Vec<usize>,
}

impl Mlp {
    /// `sizes` lists every layer width, input first and output last.
    pub fn new(prefix: impl Into<String>, sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        Self {
            prefix: prefix.into(),
            sizes,
        }
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    fn name(&self, layer: usize, what: &str) -> String {
        format!("{}.l{layer}.{what}", self.prefix)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, group: ParamGroup, rng: &mut dyn RngCore) -> Result<()> {
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| T::lit(rng.random_range(-limit..limit)))
                .collect();
            store.insert(self.name(l, "w"), group, Tensor::matrix(fan_in, fan_out, weights)?)?;
            store.insert(self.name(l, "b"), group, Tensor::zeros(vec![fan_out]))?;
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, params: &Bound<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let layers = self.sizes.len() - 1;
        let mut h = x.clone();
        for l in 0..layers {
            h = tape.add(&tape.matmul(&h, params.get(&self.name(l, "w"))?)?, params.get(&self.name(l, "b"))?)?;
            if l + 1 < layers {
                h = tape.tanh(&h)?;
            }
        }
        Ok(h)
    }
}

fn noise_width(domains: &[Domain]) -> usize {
    domains.iter().map(Domain::width).sum()
}

fn draw_parent_noise<T: Scalar>(domains: &[Domain], rows: usize, rng: &mut dyn RngCore) -> Tensor<T> {
    let width = noise_width(domains);
    let mut data = Vec::with_capacity(rows * width);
    for _ in 0..rows {
        for d in domains {
            for _ in 0..d.width() {
                let v: f64 = if d.is_categorical() {
                    gumbel(rng)
                } else {
                    StandardNormal.sample(rng)
                };
                data.push(T::lit(v));
            }
        }
    }
    Tensor::matrix(rows, width, data).expect("sizes agree")
}

/// Columns `[start, start + len)` of a constant matrix.
fn columns<T: Scalar>(t: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(t.rows() * len);
    for i in 0..t.rows() {
        data.extend_from_slice(&t.row(i)[start..start + len]);
    }
    Tensor::matrix(t.rows(), len, data).expect("sizes agree")
}

fn check_noise<T: Scalar>(x: &Tensor<T>, noise: &Tensor<T>, width: usize) -> Result<()> {
    if noise.rows() != x.rows() || noise.cols() != width {
        return shape_err(
            "backward_sample",
            format!("input {:?} with noise {:?}; expected {} noise columns", x.shape(), noise.shape(), width),
        );
    }
    Ok(())
}

/// Turns per-parent distribution parameters into samples.
fn emit<T: Scalar>(
    tape: &Tape<T>,
    domains: &[Domain],
    heads: &[(Tensor<T>, Option<Tensor<T>>)],
    noise: &Tensor<T>,
    tau: f64,
) -> Result<Vec<Tensor<T>>> {
    let mut out = Vec::with_capacity(domains.len());
    let mut col = 0;
    for (d, (first, second)) in domains.iter().zip(heads) {
        let w = d.width();
        let u = columns(noise, col, w);
        col += w;
        out.push(match second {
            None => cat_concrete_logits(tape, first, T::lit(tau), &u)?,
            Some(log_sigma) => tape.add(first, &tape.mul(&tape.exp(log_sigma)?, &u)?)?,
        });
    }
    Ok(out)
}

/// Amortised backward map: a tanh network on the (standardised) observed value feeding one head per
/// parent. Categorical parents get logits; real and count parents get a mean and a log
/// standard deviation.
#[derive(Clone, Debug)]
pub struct AmortizedBackward {
    prefix: String,
    input_dim: usize,
    domains: Vec<Domain>,
    trunk: Mlp,
    shift: Vec<f64>,
    scale: Vec<f64>,
    init_log_sigma: f64,
}

impl AmortizedBackward {
    pub fn new(prefix: impl Into<String>, input_dim: usize, parent_domains: Vec<Domain>, hidden: &[usize]) -> Self {
        let prefix = prefix.into();
        assert!(!hidden.is_empty(), "backward maps need at least one hidden layer");
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        Self {
            trunk: Mlp::new(format!("{prefix}.trunk"), sizes),
            prefix,
            input_dim,
            domains: parent_domains,
            shift: vec![0.0; input_dim],
            scale: vec![1.0; input_dim],
            init_log_sigma: 0.0,
        }
    }

    /// Backward map of observed node `node` with `hidden` layer widths.
    pub fn for_node(spec: &DagSpec, node: usize, hidden: &[usize]) -> Self {
        let domains = spec.parents(node).iter().map(|&p| spec.nodes[p].domain).collect();
        let name = format!("backward.{}", spec.nodes[node].name);
        Self::new(name, spec.nodes[node].domain.width(), domains, hidden)
    }

    /// Standardises inputs as `(x - shift) / scale` before the network.
    pub fn with_standardization(mut self, shift: Vec<f64>, scale: Vec<f64>) -> Self {
        assert_eq!(shift.len(), self.input_dim);
        assert_eq!(scale.len(), self.input_dim);
        self.shift = shift;
        self.scale = scale;
        self
    }

    /// Standardisation fitted to the column means and standard deviations of `data`.
    pub fn standardized_on<T: Scalar>(self, data: &Tensor<T>) -> Self {
        let (n, d) = (data.rows(), data.cols());
        let mut shift = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                shift[j] += data.at(i, j).to_f64_lossy() / n as f64;
            }
        }
        for i in 0..n {
            for j in 0..d {
                scale[j] += (data.at(i, j).to_f64_lossy() - shift[j]).powi(2) / n as f64;
            }
        }
        let scale = scale.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        self.with_standardization(shift, scale)
    }

    /// Initial log standard deviation of real-valued heads.
    pub fn with_initial_log_sigma(mut self, value: f64) -> Self {
        self.init_log_sigma = value;
        self
    }

    fn head(&self, parent: usize, what: &str) -> Mlp {
        let width = self.trunk.output_width();
        Mlp::new(format!("{}.p{parent}.{what}", self.prefix), vec![width, self.domains[parent].width()])
    }
}

impl<T: Scalar> BackwardMap<T> for AmortizedBackward {
    fn register(&self, store: &mut ParamStore<T>, rng: &mut dyn RngCore) -> Result<()> {
        self.trunk.register(store, ParamGroup::Backward, rng)?;
        for (i, d) in self.domains.iter().enumerate() {
            if d.is_categorical() {
                self.head(i, "logits").register(store, ParamGroup::Backward, rng)?;
            } else {
                self.head(i, "mean").register(store, ParamGroup::Backward, rng)?;
                let head = self.head(i, "log_sigma");
                head.register(store, ParamGroup::Backward, rng)?;
                let bias = format!("{}.p{i}.log_sigma.l0.b", self.prefix);
                store.set(&bias, Tensor::full(vec![d.width()], T::lit(self.init_log_sigma)))?;
            }
        }
        Ok(())
    }

    fn draw_noise(&self, rows: usize, rng: &mut dyn RngCore) -> Tensor<T> {
        draw_parent_noise(&self.domains, rows, rng)
    }

    fn sample(
        &self,
        tape: &Tape<T>,
        params: &Bound<'_, T>,
        x: &Tensor<T>,
        noise: &Tensor<T>,
        tau: f64,
    ) -> Result<Vec<Tensor<T>>> {
        if x.cols() != self.input_dim {
            return shape_err(
                "backward_sample",
                format!("expected {} input columns, got {:?}", self.input_dim, x.shape()),
            );
        }
        check_noise(x, noise, noise_width(&self.domains))?;
        let shift = Tensor::vector(self.shift.iter().map(|v| T::lit(*v)).collect());
        let inv_scale = Tensor::vector(self.scale.iter().map(|v| T::lit(1.0 / v)).collect());
        let z = tape.mul(&tape.sub(x, &shift)?, &inv_scale)?;
        let features = tape.tanh(&self.trunk.forward(tape, params, &z)?)?;
        let mut heads = Vec::with_capacity(self.domains.len());
        for (i, d) in self.domains.iter().enumerate() {
            if d.is_categorical() {
                heads.push((self.head(i, "logits").forward(tape, params, &features)?, None));
            } else {
                let mean = self.head(i, "mean").forward(tape, params, &features)?;
                let log_sigma = self.head(i, "log_sigma").forward(tape, params, &features)?;
                heads.push((mean, Some(log_sigma)));
            }
        }
        emit(tape, &self.domains, &heads, noise, tau)
    }
}

/// Backward map that ignores its input: learned constant logits, or a learned constant
/// mean and log standard deviation, per parent.
#[derive(Clone, Debug)]
pub struct ConstantBackward {
    prefix: String,
    domains: Vec<Domain>,
}

impl ConstantBackward {
    pub fn new(prefix: impl Into<String>, parent_domains: Vec<Domain>) -> Self {
        Self {
            prefix: prefix.into(),
            domains: parent_domains,
        }
    }

    pub fn for_node(spec: &DagSpec, node: usize) -> Self {
        let domains = spec.parents(node).iter().map(|&p| spec.nodes[p].domain).collect();
        Self::new(format!("backward.{}", spec.nodes[node].name), domains)
    }

    fn name(&self, parent: usize, what: &str) -> String {
        format!("{}.p{parent}.{what}", self.prefix)
    }
}

impl<T: Scalar> BackwardMap<T> for ConstantBackward {
    fn register(&self, store: &mut ParamStore<T>, _rng: &mut dyn RngCore) -> Result<()> {
        for (i, d) in self.domains.iter().enumerate() {
            let w = d.width();
            if d.is_categorical() {
                store.insert(self.name(i, "logits"), ParamGroup::Backward, Tensor::zeros(vec![w]))?;
            } else {
                store.insert(self.name(i, "mean"), ParamGroup::Backward, Tensor::zeros(vec![w]))?;
                store.insert(self.name(i, "log_sigma"), ParamGroup::Backward, Tensor::zeros(vec![w]))?;
            }
        }
        Ok(())
    }

    fn draw_noise(&self, rows: usize, rng: &mut dyn RngCore) -> Tensor<T> {
        draw_parent_noise(&self.domains, rows, rng)
    }

    fn sample(
        &self,
        tape: &Tape<T>,
        params: &Bound<'_, T>,
        x: &Tensor<T>,
        noise: &Tensor<T>,
        tau: f64,
    ) -> Result<Vec<Tensor<T>>> {
        check_noise(x, noise, noise_width(&self.domains))?;
        let rows = x.rows();
        let mut heads = Vec::with_capacity(self.domains.len());
        for (i, d) in self.domains.iter().enumerate() {
            let shape = [rows, d.width()];
            if d.is_categorical() {
                heads.push((tape.broadcast(params.get(&self.name(i, "logits"))?, &shape)?, None));
            } else {
                let mean = tape.broadcast(params.get(&self.name(i, "mean"))?, &shape)?;
                let log_sigma = tape.broadcast(params.get(&self.name(i, "log_sigma"))?, &shape)?;
                heads.push((mean, Some(log_sigma)));
            }
        }
        emit(tape, &self.domains, &heads, noise, tau)
    }
}
