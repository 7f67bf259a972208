use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Result};
use crate::gradtape::{Tape, Tensor};
use crate::scalar::{Scalar, PROB_SMOOTHING};

/// Ground metric between support points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundMetric {
    Euclidean,
    SquaredEuclidean,
    /// `KL(x_i || y_j)`; rows must be probability vectors.
    Kl,
}

fn check_pair<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.ndim() != 2 || y.ndim() != 2 || x.cols() != y.cols() {
        return shape_err(
            "ground_cost",
            format!("expected n x d and m x d, got {:?} and {:?}", x.shape(), y.shape()),
        );
    }
    Ok((x.shape()[0], y.shape()[0], x.cols()))
}

fn check_distributions<T: Scalar>(t: &Tensor<T>) -> Result<()> {
    let tol = T::lit(1e-6);
    for i in 0..t.rows() {
        let row = t.row(i);
        if row.iter().any(|v| *v < T::zero()) || (row.iter().copied().sum::<T>() - T::one()).abs() > tol {
            return domain_err("ground_cost", format!("kl needs probability rows; row {i} is not one"));
        }
    }
    Ok(())
}

fn kl<T: Scalar>(p: &[T], q: &[T]) -> T {
    let s = T::lit(PROB_SMOOTHING);
    p.iter()
        .zip(q)
        .map(|(&pk, &qk)| pk * ((pk + s).ln() - (qk + s).ln()))
        .sum()
}

/// `n x m` matrix of `metric(x_i, y_j)`.
pub fn ground_cost<T: Scalar>(metric: GroundMetric, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, m, _) = check_pair(x, y)?;
    if metric == GroundMetric::Kl {
        check_distributions(x)?;
        check_distributions(y)?;
    }
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..m {
            let yj = y.row(j);
            let c = match metric {
                GroundMetric::SquaredEuclidean | GroundMetric::Euclidean => {
                    let sq: T = xi.iter().zip(yj).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
                    if metric == GroundMetric::Euclidean {
                        sq.sqrt()
                    } else {
                        sq
                    }
                }
                GroundMetric::Kl => kl(xi, yj),
            };
            out.push(c);
        }
    }
    Tensor::matrix(n, m, out)
}

/// Differentiable ground cost; gradients reach both support matrices.
pub fn ground_cost_on_tape<T: Scalar>(
    tape: &Tape<T>,
    metric: GroundMetric,
    x: &Tensor<T>,
    y: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, m, _) = check_pair(x, y)?;
    match metric {
        GroundMetric::SquaredEuclidean | GroundMetric::Euclidean => {
            let xx = tape.reshape(&tape.sum_axis(&tape.mul(x, x)?, 1)?, &[n, 1])?;
            let yy = tape.reshape(&tape.sum_axis(&tape.mul(y, y)?, 1)?, &[1, m])?;
            let cross = tape.matmul(x, &tape.transpose(y)?)?;
            let sq = tape.sub(&tape.add(&xx, &yy)?, &tape.scale(&cross, T::lit(2.0))?)?;
            if metric == GroundMetric::SquaredEuclidean {
                // Cancellation can leave tiny negatives on coincident points.
                tape.relu(&sq)
            } else {
                tape.pow(&tape.shift(&tape.relu(&sq)?, T::lit(1e-12))?, T::lit(0.5))
            }
        }
        GroundMetric::Kl => {
            check_distributions(x)?;
            check_distributions(y)?;
            let s = T::lit(PROB_SMOOTHING);
            let log_x = tape.log(&tape.shift(x, s)?)?;
            let log_y = tape.log(&tape.shift(y, s)?)?;
            let self_term = tape.reshape(&tape.sum_axis(&tape.mul(x, &log_x)?, 1)?, &[n, 1])?;
            let cross = tape.matmul(x, &tape.transpose(&log_y)?)?;
            tape.sub(&self_term, &cross)
        }
    }
}
