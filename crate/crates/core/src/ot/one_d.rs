//! Closed-form transport between equal-size scalar samples.

use crate::error::{shape_err, Error, Result};
use crate::gradtape::{Tape, Tensor};
use crate::scalar::Scalar;

fn check<T>(xs: &[T], ys: &[T], p: u32) -> Result<()> {
    if xs.len() != ys.len() {
        return shape_err(
            "wasserstein_1d",
            format!("equal sample counts required, got {} and {}", xs.len(), ys.len()),
        );
    }
    if xs.is_empty() {
        return shape_err("wasserstein_1d", "empty sample");
    }
    if p != 1 && p != 2 {
        return Err(Error::InvalidArgument(format!("wasserstein_1d supports p = 1 or 2, got {p}")));
    }
    Ok(())
}

/// Indices that sort `values` ascending (NaN last).
pub fn argsort<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or_else(|| values[i].is_nan().cmp(&values[j].is_nan())));
    idx
}

/// `(1/n) * sum_i |x_(i) - y_(i)|^p` over the sorted samples.
pub fn wasserstein_1d<T: Scalar>(xs: &[T], ys: &[T], p: u32) -> Result<T> {
    check(xs, ys, p)?;
    let (sx, sy) = (argsort(xs), argsort(ys));
    let total: T = sx
        .iter()
        .zip(&sy)
        .map(|(&i, &j)| {
            let d = (xs[i] - ys[j]).abs();
            if p == 1 {
                d
            } else {
                d * d
            }
        })
        .sum();
    Ok(total / T::from_usize_lossy(xs.len()))
}

/// Differentiable [`wasserstein_1d`]; the sort permutation is treated as constant.
pub fn wasserstein_1d_on_tape<T: Scalar>(tape: &Tape<T>, xs: &Tensor<T>, ys: &Tensor<T>, p: u32) -> Result<Tensor<T>> {
    check(xs.data(), ys.data(), p)?;
    let n = xs.len();
    let x = tape.gather_rows(&tape.reshape(xs, &[n])?, &argsort(xs.data()))?;
    let y = tape.gather_rows(&tape.reshape(ys, &[n])?, &argsort(ys.data()))?;
    let diff = tape.sub(&x, &y)?;
    let per = if p == 1 {
        // |d| as sqrt(d^2 + tiny) keeps the gradient finite at ties.
        tape.pow(&tape.shift(&tape.mul(&diff, &diff)?, T::lit(1e-24))?, T::lit(0.5))?
    } else {
        tape.mul(&diff, &diff)?
    };
    tape.mean(&per)
}
