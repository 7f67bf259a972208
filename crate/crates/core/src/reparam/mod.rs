//! Reparameterised samplers: each maps parameters and exogenous noise to a sample through
//! tape operations, so gradients reach the parameters.

#[cfg(test)]
mod tests;

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Error, Result};
use crate::gradtape::{Tape, Tensor};
use crate::scalar::{Scalar, PROB_SMOOTHING};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gumbel,
    Gaussian,
    Uniform,
}

/// Exogenous noise source: a family and the shape of one draw.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub shape: Vec<usize>,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, shape: Vec<usize>) -> Self {
        Self { family, shape }
    }

    /// One draw of shape `self.shape`.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor<T> {
        self.sample_batch(rng, None)
    }

    /// `batch` stacked draws, shape `[batch, ..shape]`; `None` gives a single unstacked draw.
    pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R, batch: Option<usize>) -> Tensor<T> {
        let mut shape = self.shape.clone();
        if let Some(b) = batch {
            shape.insert(0, b);
        }
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(draw(self.family, rng))).collect();
        Tensor::new(shape, data).expect("shape product matches")
    }
}

fn draw<R: Rng + ?Sized>(family: NoiseFamily, rng: &mut R) -> f64 {
    match family {
        NoiseFamily::Gumbel => gumbel(rng),
        NoiseFamily::Gaussian => StandardNormal.sample(rng),
        NoiseFamily::Uniform => Open01.sample(rng),
    }
}

/// Standard Gumbel draw `-ln(-ln u)` with `u` uniform on the open interval.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = Open01.sample(rng);
    -(-u.ln()).ln()
}

fn check_simplex_rows<T: Scalar>(op: &'static str, p: &Tensor<T>) -> Result<()> {
    let tol = T::lit(1e-6);
    for i in 0..p.rows() {
        let row = p.row(i);
        let s: T = row.iter().copied().sum();
        if row.iter().any(|v| !(*v >= T::zero())) || (s - T::one()).abs() > tol {
            return domain_err(op, format!("row {i} is not a probability vector (sum {s})"));
        }
    }
    Ok(())
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if !(tau > T::zero()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Relaxed categorical (Gumbel-softmax) sample: `softmax((log p + g) / tau)` per row.
///
/// `p` is a `K` vector or a `B x K` matrix of probability rows; `g` holds Gumbel noise of
/// the same shape (or a `B x K` batch for a single `p`).
pub fn cat_concrete<T: Scalar>(tape: &Tape<T>, p: &Tensor<T>, tau: T, g: &Tensor<T>) -> Result<Tensor<T>> {
    check_tau(tau)?;
    check_simplex_rows("cat_concrete", p)?;
    let log_p = tape.log(&tape.shift(p, T::lit(PROB_SMOOTHING))?)?;
    relaxed_from_logits(tape, &log_p, tau, g)
}

/// [`cat_concrete`] parameterised by unnormalised log-probabilities.
pub fn cat_concrete_logits<T: Scalar>(tape: &Tape<T>, logits: &Tensor<T>, tau: T, g: &Tensor<T>) -> Result<Tensor<T>> {
    check_tau(tau)?;
    relaxed_from_logits(tape, &tape.log_softmax(logits)?, tau, g)
}

fn relaxed_from_logits<T: Scalar>(tape: &Tape<T>, log_p: &Tensor<T>, tau: T, g: &Tensor<T>) -> Result<Tensor<T>> {
    if log_p.cols() != g.cols() {
        return shape_err(
            "cat_concrete",
            format!("noise {:?} does not match probabilities {:?}", g.shape(), log_p.shape()),
        );
    }
    let perturbed = tape.add(log_p, g)?;
    tape.softmax(&tape.scale(&perturbed, T::one() / tau)?)
}

fn check_positive<T: Scalar>(op: &'static str, what: &str, t: &Tensor<T>) -> Result<()> {
    if t.data().iter().any(|v| !(*v > T::zero())) {
        return domain_err(op, format!("{what} must be positive"));
    }
    Ok(())
}

/// `mu + u * sigma`, elementwise with broadcasting.
pub fn gaussian_reparam<T: Scalar>(tape: &Tape<T>, mu: &Tensor<T>, sigma: &Tensor<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    check_positive("gaussian_reparam", "sigma", sigma)?;
    tape.add(mu, &tape.mul(u, sigma)?)
}

/// Gaussian surrogate of a Poisson count: with `r = z . exp(log_rates)`, returns
/// `r + u * sqrt(r)`.
///
/// `z` is a `K` vector or `B x K` matrix of (relaxed) one-hot rows; `u` has one standard
/// normal entry per row. The result has shape `B x 1`.
pub fn poisson_gaussian<T: Scalar>(
    tape: &Tape<T>,
    z: &Tensor<T>,
    log_rates: &Tensor<T>,
    u: &Tensor<T>,
) -> Result<Tensor<T>> {
    let k = log_rates.len();
    if z.cols() != k || z.ndim() > 2 || u.len() != z.rows() {
        return shape_err(
            "poisson_gaussian",
            format!("z {:?}, log rates {:?}, noise {:?}", z.shape(), log_rates.shape(), u.shape()),
        );
    }
    let b = z.rows();
    let z = tape.reshape(z, &[b, k])?;
    let rates = tape.reshape(&tape.exp(log_rates)?, &[k, 1])?;
    let mean = tape.matmul(&z, &rates)?;
    let u = tape.reshape(u, &[b, 1])?;
    tape.add(&mean, &tape.mul(&u, &tape.pow(&mean, T::lit(0.5))?)?)
}

/// Softmax-Laplace approximation of `Dirichlet(alpha)`: the mean and diagonal variance of
/// a Gaussian whose softmax approximates the Dirichlet.
pub fn dirichlet_laplace<T: Scalar>(tape: &Tape<T>, alpha: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    check_positive("dirichlet_laplace", "alpha", alpha)?;
    let k = T::from_usize_lossy(alpha.len());
    let log_alpha = tape.log(alpha)?;
    let mu = tape.sub(&log_alpha, &tape.mean(&log_alpha)?)?;
    let inv = tape.pow(alpha, -T::one())?;
    let own = tape.scale(&inv, T::one() - T::lit(2.0) / k)?;
    let shared = tape.scale(&tape.sum(&inv)?, T::one() / (k * k))?;
    let sigma = tape.add(&own, &shared)?;
    Ok((mu, sigma))
}

/// Approximate Dirichlet draws `softmax(mu + sqrt(sigma) * u)`; `u` is `K` or `B x K`
/// standard normal noise.
pub fn dirichlet_laplace_sample<T: Scalar>(tape: &Tape<T>, alpha: &Tensor<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    if u.cols() != alpha.len() {
        return shape_err("dirichlet_laplace", format!("noise {:?} for {} categories", u.shape(), alpha.len()));
    }
    let (mu, sigma) = dirichlet_laplace(tape, alpha)?;
    let std = tape.pow(&sigma, T::lit(0.5))?;
    tape.softmax(&gaussian_reparam(tape, &mu, &std, u)?)
}

/// Nearest centroid of `z` under the per-centroid diagonal Mahalanobis distance, ties to
/// the lowest index. Returns the index and the centroid, recorded so that its gradient is
/// copied unchanged to `z`.
pub fn quantize<T: Scalar>(
    tape: &Tape<T>,
    z: &Tensor<T>,
    centroids: &Tensor<T>,
    sigmas: &Tensor<T>,
) -> Result<(usize, Tensor<T>)> {
    let k = nearest_centroid(z.data(), centroids, sigmas)?;
    let mu = Tensor::new(z.shape().to_vec(), centroids.row(k).to_vec())?;
    Ok((k, tape.straight_through(z, &mu)?))
}

/// Index of the nearest centroid under the diagonal Mahalanobis distance.
pub fn nearest_centroid<T: Scalar>(z: &[T], centroids: &Tensor<T>, sigmas: &Tensor<T>) -> Result<usize> {
    if centroids.ndim() != 2 || centroids.shape() != sigmas.shape() || centroids.cols() != z.len() {
        return shape_err(
            "quantize",
            format!("z of length {}, centroids {:?}, sigmas {:?}", z.len(), centroids.shape(), sigmas.shape()),
        );
    }
    if centroids.rows() == 0 {
        return shape_err("quantize", "no centroids");
    }
    check_positive("quantize", "sigmas", sigmas)?;
    let mut best = (0, T::infinity());
    for k in 0..centroids.rows() {
        let d: T = z
            .iter()
            .zip(centroids.row(k))
            .zip(sigmas.row(k))
            .map(|((zi, mi), si)| (*zi - *mi) * (*zi - *mi) / *si)
            .sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best.0)
}
