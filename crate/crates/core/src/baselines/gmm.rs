use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{converged, EmOptions};
use crate::error::{shape_err, Error, Result};
use crate::gradtape::Tensor;
use crate::scalar::Scalar;

/// Mixture with diagonal covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams<T> {
    pub weights: Vec<T>,
    /// `K` rows of length `d`.
    pub means: Vec<Vec<T>>,
    /// Diagonal variances, `K` rows of length `d`.
    pub variances: Vec<Vec<T>>,
}

impl<T: Scalar> GmmParams<T> {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (k, d) = (self.components(), self.dim());
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(Error::InvalidArgument("mixture needs matching weights, means and variances".into()));
        }
        if self.means.iter().chain(&self.variances).any(|r| r.len() != d) {
            return shape_err("gmm", "ragged means or variances");
        }
        let sum: T = self.weights.iter().copied().sum();
        if self.weights.iter().any(|w| !(*w >= T::zero())) || (sum - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::InvalidArgument("mixture weights must lie on the simplex".into()));
        }
        if self.variances.iter().flatten().any(|v| !(*v > T::zero())) {
            return Err(Error::InvalidArgument("variances must be positive".into()));
        }
        Ok(())
    }

    /// Log density of each component (weight included) at `x`.
    fn joint_log_densities(&self, x: &[T], out: &mut [T]) {
        let half = T::lit(0.5);
        let log_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
        for (c, slot) in out.iter_mut().enumerate() {
            let mut acc = self.weights[c].ln();
            for ((xi, mu), var) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                let diff = *xi - *mu;
                acc = acc - half * (log_2pi + var.ln() + diff * diff / *var);
            }
            *slot = acc;
        }
    }
}

/// Parameters held fixed through every M-step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GmmClamps<T> {
    /// One isotropic variance shared by all components and dimensions.
    pub variance: Option<T>,
    pub weights: Option<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GmmInit<T> {
    /// k-means++ seeding for the means, uniform weights, per-dimension data variance.
    KMeansPlusPlus,
    Params(GmmParams<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmFit<T> {
    pub params: GmmParams<T>,
    /// Log-likelihood of the parameters entering each iteration, then of the final parameters.
    pub log_likelihood: Vec<f64>,
    /// Parameters after each M-step.
    pub trace: Vec<GmmParams<T>>,
    pub converged: bool,
    pub reseeded: usize,
}

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}

/// k-means++ seeding: `k` data rows, each drawn with probability proportional to the squared
/// distance from the nearest row already chosen.
pub fn kmeans_plus_plus<T: Scalar>(data: &Tensor<T>, k: usize, rng: &mut dyn RngCore) -> Result<Vec<Vec<T>>> {
    let n = data.rows();
    if data.ndim() != 2 || n < k || k == 0 {
        return Err(Error::InvalidArgument(format!("cannot seed {k} centres from {n} rows")));
    }
    let mut centres = vec![data.row(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| squared_distance(data.row(i), &centres[0]).to_f64_lossy()).collect();
    while centres.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let centre = data.row(pick).to_vec();
        for (i, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min(squared_distance(data.row(i), &centre).to_f64_lossy());
        }
        centres.push(centre);
    }
    Ok(centres)
}

fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + values.iter().map(|v| (*v - max).exp()).sum::<T>().ln()
}

/// Total log-likelihood of the rows of `data`.
pub fn gmm_log_likelihood<T: Scalar>(data: &Tensor<T>, params: &GmmParams<T>) -> Result<T> {
    params.validate()?;
    if data.ndim() != 2 || data.cols() != params.dim() {
        return shape_err("gmm_log_likelihood", format!("data {:?} for dimension {}", data.shape(), params.dim()));
    }
    let mut buf = vec![T::zero(); params.components()];
    Ok((0..data.rows())
        .map(|i| {
            params.joint_log_densities(data.row(i), &mut buf);
            log_sum_exp(&buf)
        })
        .sum())
}

fn apply_clamps<T: Scalar>(params: &mut GmmParams<T>, clamps: &GmmClamps<T>) {
    if let Some(v) = clamps.variance {
        for row in &mut params.variances {
            row.iter_mut().for_each(|x| *x = v);
        }
    }
    if let Some(w) = &clamps.weights {
        params.weights.clone_from(w);
    }
}

/// Diagonal-covariance EM with optional clamps.
///
/// A component whose responsibilities vanish is moved to a random datum and the event is
/// logged as a warning; the likelihood trace may dip on such iterations.
pub fn em_gmm<T: Scalar>(
    data: &Tensor<T>,
    k: usize,
    init: &GmmInit<T>,
    clamps: &GmmClamps<T>,
    options: &EmOptions,
    rng: &mut dyn RngCore,
) -> Result<GmmFit<T>> {
    if data.ndim() != 2 || data.rows() == 0 {
        return shape_err("em_gmm", format!("expected a non-empty n x d matrix, got {:?}", data.shape()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("em_gmm needs at least one component".into()));
    }
    let (n, d) = (data.rows(), data.cols());
    let nf = T::from_usize_lossy(n);
    let floor = T::lit(options.floor);
    if let Some(v) = clamps.variance {
        if !(v > T::zero()) {
            return Err(Error::InvalidArgument("clamped variance must be positive".into()));
        }
    }
    if clamps.weights.as_ref().is_some_and(|w| w.len() != k) {
        return Err(Error::InvalidArgument("clamped weights need one entry per component".into()));
    }

    let mut params = match init {
        GmmInit::Params(p) => p.clone(),
        GmmInit::KMeansPlusPlus => {
            let means = kmeans_plus_plus(data, k, rng)?;
            let mean: Vec<T> = (0..d).map(|j| (0..n).map(|i| data.at(i, j)).sum::<T>() / nf).collect();
            let var: Vec<T> = (0..d)
                .map(|j| {
                    let v = (0..n).map(|i| (data.at(i, j) - mean[j]).powi(2)).sum::<T>() / nf;
                    v.max(floor)
                })
                .collect();
            GmmParams {
                weights: vec![T::one() / T::from_usize_lossy(k); k],
                means,
                variances: vec![var; k],
            }
        }
    };
    apply_clamps(&mut params, clamps);
    if params.components() != k {
        return Err(Error::InvalidArgument(format!("initial mixture has {} components, expected {k}", params.components())));
    }
    params.validate()?;
    if params.dim() != d {
        return shape_err("em_gmm", format!("initial means have dimension {}, data {d}", params.dim()));
    }

    let mut resp = vec![T::zero(); n * k];
    let mut buf = vec![T::zero(); k];
    let mut log_likelihood = Vec::new();
    let mut trace = Vec::new();
    let mut is_converged = false;
    let mut reseeded = 0;
    for _ in 0..options.max_iters {
        // E-step.
        let mut ll = T::zero();
        for i in 0..n {
            params.joint_log_densities(data.row(i), &mut buf);
            let lse = log_sum_exp(&buf);
            ll = ll + lse;
            for c in 0..k {
                resp[i * k + c] = (buf[c] - lse).exp();
            }
        }
        let ll = ll.to_f64_lossy();
        if !ll.is_finite() {
            return Err(Error::Underflow {
                step: log_likelihood.len(),
                detail: "gmm log-likelihood is not finite".into(),
            });
        }
        if let Some(prev) = log_likelihood.last() {
            if converged(*prev, ll, options.tol) {
                log_likelihood.push(ll);
                is_converged = true;
                break;
            }
        }
        log_likelihood.push(ll);

        // M-step.
        for c in 0..k {
            let mass: T = (0..n).map(|i| resp[i * k + c]).sum();
            if !(mass > T::epsilon() * nf) {
                let pick = rng.random_range(0..n);
                log::warn!("gmm component {c} collapsed; reseeding at datum {pick}");
                params.means[c] = data.row(pick).to_vec();
                reseeded += 1;
                continue;
            }
            for j in 0..d {
                let mean = (0..n).map(|i| resp[i * k + c] * data.at(i, j)).sum::<T>() / mass;
                let var = (0..n).map(|i| resp[i * k + c] * (data.at(i, j) - mean).powi(2)).sum::<T>() / mass;
                params.means[c][j] = mean;
                params.variances[c][j] = var.max(floor);
            }
            params.weights[c] = mass / nf;
        }
        let total: T = params.weights.iter().copied().sum();
        params.weights.iter_mut().for_each(|w| *w = *w / total);
        apply_clamps(&mut params, clamps);
        trace.push(params.clone());
    }
    if !is_converged {
        log_likelihood.push(gmm_log_likelihood(data, &params)?.to_f64_lossy());
    }
    Ok(GmmFit {
        params,
        log_likelihood,
        trace,
        converged: is_converged,
        reseeded,
    })
}
