//! Entropy-regularised transport by log-domain Sinkhorn iterations.

use serde::{Deserialize, Serialize};

use super::TransportPlan;
use crate::error::{shape_err, Error, Result};
use crate::gradtape::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once the largest marginal violation drops below this.
    pub tol: f64,
    /// Anneal epsilon geometrically from the cost scale down to `epsilon`.
    pub epsilon_scaling: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            max_iters: 10_000,
            tol: 1e-9,
            epsilon_scaling: true,
        }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

fn log_sum_exp<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<T>().ln()
}

struct Duals<'a, T> {
    cost: &'a [T],
    log_a: Vec<T>,
    log_b: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
    n: usize,
    m: usize,
}

impl<T: Scalar> Duals<'_, T> {
    /// Row update; returns the row-marginal violation of the plan before the update.
    fn update_f(&mut self, eps: T) -> T {
        let mut violation = T::zero();
        for i in 0..self.n {
            if self.log_a[i] == T::neg_infinity() {
                self.f[i] = T::neg_infinity();
                continue;
            }
            let row = &self.cost[i * self.m..(i + 1) * self.m];
            let lse = log_sum_exp((0..self.m).map(|j| (self.g[j] - row[j]) / eps));
            let current = (self.f[i] / eps + lse).exp();
            violation = violation.max((current - self.log_a[i].exp()).abs());
            self.f[i] = eps * self.log_a[i] - eps * lse;
        }
        violation
    }

    fn update_g(&mut self, eps: T) {
        for j in 0..self.m {
            if self.log_b[j] == T::neg_infinity() {
                self.g[j] = T::neg_infinity();
                continue;
            }
            let lse = log_sum_exp((0..self.n).map(|i| (self.f[i] - self.cost[i * self.m + j]) / eps));
            self.g[j] = eps * self.log_b[j] - eps * lse;
        }
    }

    fn plan(&self, eps: T) -> Vec<T> {
        let mut p = Vec::with_capacity(self.n * self.m);
        for i in 0..self.n {
            for j in 0..self.m {
                let v = (self.f[i] + self.g[j] - self.cost[i * self.m + j]) / eps;
                p.push(if v.is_nan() { v } else { v.exp() });
            }
        }
        p
    }

    fn col_violation(&self, plan: &[T]) -> T {
        (0..self.m)
            .map(|j| {
                let s: T = (0..self.n).map(|i| plan[i * self.m + j]).sum();
                (s - self.log_b[j].exp()).abs()
            })
            .fold(T::zero(), T::max)
    }
}

/// Entropic transport plan between `a` and `b`.
///
/// The reported `value` is the transport cost `<P, C>` of the regularised plan, without the
/// entropy term. Zero-weight atoms receive no mass.
pub fn sinkhorn<T: Scalar>(cost: &Tensor<T>, a: &[T], b: &[T], config: &SinkhornConfig) -> Result<TransportPlan<T>> {
    let (n, m) = (a.len(), b.len());
    if cost.shape() != [n, m] {
        return shape_err(
            "sinkhorn",
            format!("cost {:?} for weights of length {} and {}", cost.shape(), n, m),
        );
    }
    if n == 0 || m == 0 {
        return shape_err("sinkhorn", "empty measure");
    }
    if !(config.epsilon > 0.0) || !config.epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", config.epsilon)));
    }
    if a.iter().chain(b).any(|w| !(*w >= T::zero()) || !w.is_finite()) {
        return Err(Error::Infeasible("weights must be finite and non-negative".into()));
    }
    let (sa, sb): (T, T) = (a.iter().copied().sum(), b.iter().copied().sum());
    if (sa - sb).abs() > T::lit(1e-6) || !(sa > T::zero()) {
        return Err(Error::Infeasible(format!("total masses differ: {sa} vs {sb}")));
    }
    let c = cost.data();
    if !cost.all_finite() {
        return Err(Error::SinkhornNan { epsilon: config.epsilon });
    }
    let target = T::lit(config.epsilon);
    let tol = T::lit(config.tol);

    let mut duals = Duals {
        cost: c,
        log_a: a.iter().map(|w| w.ln()).collect(),
        log_b: b.iter().map(|w| (*w * sa / sb).ln()).collect(),
        f: vec![T::zero(); n],
        g: vec![T::zero(); m],
        n,
        m,
    };

    // Warm-start schedule: halve epsilon from the cost range down to the target.
    let mut schedule = Vec::new();
    if config.epsilon_scaling {
        let range = c.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        let mut eps = range;
        while eps > target * T::lit(2.0) {
            schedule.push(eps);
            eps = eps * T::lit(0.5);
        }
    }
    let stage_iters = 50.min(config.max_iters);
    let mut iterations = 0;
    for &eps in &schedule {
        for _ in 0..stage_iters {
            duals.update_f(eps);
            duals.update_g(eps);
        }
        iterations += stage_iters;
    }

    let mut converged = false;
    let mut plan;
    loop {
        let row_violation = duals.update_f(target);
        if iterations > 0 && row_violation < tol {
            // g is already the column update for the previous f, so check the columns exactly.
            plan = duals.plan(target);
            if duals.col_violation(&plan) < tol {
                converged = true;
                break;
            }
        }
        duals.update_g(target);
        iterations += 1;
        if duals.f.iter().chain(&duals.g).any(|v| v.is_nan()) {
            return Err(Error::SinkhornNan { epsilon: config.epsilon });
        }
        if iterations >= config.max_iters + schedule.len() * stage_iters {
            plan = duals.plan(target);
            break;
        }
    }
    if plan.iter().any(|v| v.is_nan()) {
        return Err(Error::SinkhornNan { epsilon: config.epsilon });
    }
    if !converged {
        log::debug!("sinkhorn stopped after {iterations} iterations at epsilon {}", config.epsilon);
    }
    let value = plan.iter().zip(c).map(|(p, c)| *p * *c).sum();
    Ok(TransportPlan {
        plan: Tensor::matrix(n, m, plan)?,
        value,
        potentials: Some((duals.f, duals.g)),
        converged,
        iterations,
    })
}
