use otpdag::ot::exact_wasserstein;
use otpdag::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, Result};

const SMOOTHING: f64 = 1e-10;

/// Minimum-cost perfect matching of a square cost matrix; `result[i]` is the column matched
/// to row `i`.
pub fn assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 || cost.iter().any(|r| r.len() != n) {
        return Err(ExperimentError::Config("assignment needs a non-empty square cost matrix".into()));
    }
    let flat = Tensor::matrix(n, n, cost.iter().flatten().copied().collect())?;
    let w = vec![1.0 / n as f64; n];
    let plan = exact_wasserstein(&flat, &w, &w)?.plan;
    Ok((0..n)
        .map(|i| {
            let row = plan.row(i);
            (0..n).max_by(|&a, &b| row[a].total_cmp(&row[b])).expect("non-empty row")
        })
        .collect())
}

fn check_same_shape(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(ExperimentError::Core(otpdag::Error::Shape {
            op: "metrics",
            detail: format!("{} rows vs {} rows", a.len(), b.len()),
        }));
    }
    Ok(())
}

/// Mean absolute error between estimated and true parameter rows, after matching rows to
/// minimise the total absolute error (removes label switching).
pub fn matched_mae(estimate: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    check_same_shape(estimate, truth)?;
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let cost: Vec<Vec<f64>> = estimate.iter().map(|e| truth.iter().map(|t| l1(e, t)).collect()).collect();
    let perm = assignment(&cost)?;
    let entries: usize = truth.iter().map(Vec::len).sum();
    Ok(perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / entries as f64)
}

/// [`matched_mae`] for scalar parameters such as rates.
pub fn matched_mae_scalar(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    let rows = |v: &[f64]| v.iter().map(|x| vec![*x]).collect::<Vec<_>>();
    matched_mae(&rows(estimate), &rows(truth))
}

fn normalised(row: &[f64]) -> Vec<f64> {
    let total: f64 = row.iter().map(|p| p + SMOOTHING).sum();
    row.iter().map(|p| (p + SMOOTHING) / total).collect()
}

pub fn hellinger(p: &[f64], q: &[f64]) -> f64 {
    let s: f64 = p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    (0.5 * s).sqrt()
}

/// `KL(p || q)`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a.ln() - b.ln())).sum()
}

/// Squared-Euclidean transport cost between two distributions over the cells of a square grid.
pub fn grid_wasserstein(p: &[f64], q: &[f64], side: usize) -> Result<f64> {
    let v = side * side;
    let mut cost = Vec::with_capacity(v * v);
    for a in 0..v {
        for b in 0..v {
            let (ra, ca) = ((a / side) as f64, (a % side) as f64);
            let (rb, cb) = ((b / side) as f64, (b % side) as f64);
            cost.push((ra - rb).powi(2) + (ca - cb).powi(2));
        }
    }
    let total_q: f64 = q.iter().sum();
    let q: Vec<f64> = q.iter().map(|x| x / total_q).collect();
    Ok(exact_wasserstein(&Tensor::matrix(v, v, cost)?, p, &q)?.value)
}

/// Fidelity of estimated topic-word distributions, summed over topics matched by
/// minimum total Hellinger distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicMetrics {
    pub hellinger: f64,
    /// `KL(true || estimate)`.
    pub kl: f64,
    pub ws: f64,
}

/// Matching of estimated topics to true topics; `result[i]` is the true topic of estimate `i`.
pub fn match_topics(estimate: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<usize>> {
    check_same_shape(estimate, truth)?;
    let est: Vec<Vec<f64>> = estimate.iter().map(|r| normalised(r)).collect();
    let tru: Vec<Vec<f64>> = truth.iter().map(|r| normalised(r)).collect();
    let cost: Vec<Vec<f64>> = est.iter().map(|e| tru.iter().map(|t| hellinger(e, t)).collect()).collect();
    assignment(&cost)
}

pub fn topic_metrics(estimate: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<TopicMetrics> {
    check_same_shape(estimate, truth)?;
    let v = truth[0].len();
    let side = (v as f64).sqrt().round() as usize;
    if side * side != v {
        return Err(ExperimentError::Config(format!("vocabulary of {v} words is not a square grid")));
    }
    let perm = match_topics(estimate, truth)?;
    let mut out = TopicMetrics {
        hellinger: 0.0,
        kl: 0.0,
        ws: 0.0,
    };
    for (i, &j) in perm.iter().enumerate() {
        let (e, t) = (normalised(&estimate[i]), normalised(&truth[j]));
        out.hellinger += hellinger(&e, &t);
        out.kl += kl(&t, &e);
        out.ws += grid_wasserstein(&t, &e, side)?;
    }
    Ok(out)
}

/// Jaccard index between the `top` most probable words of each matched estimated topic and
/// the support of its true topic.
pub fn top_word_jaccard(estimate: &[Vec<f64>], truth: &[Vec<f64>], top: usize) -> Result<Vec<f64>> {
    let perm = match_topics(estimate, truth)?;
    Ok(perm
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let mut idx: Vec<usize> = (0..estimate[i].len()).collect();
            idx.sort_by(|&a, &b| estimate[i][b].total_cmp(&estimate[i][a]));
            let predicted: std::collections::BTreeSet<usize> = idx.into_iter().take(top).collect();
            let actual: std::collections::BTreeSet<usize> = (0..truth[j].len()).filter(|&w| truth[j][w] > 0.0).collect();
            let inter = predicted.intersection(&actual).count();
            let union = predicted.union(&actual).count();
            inter as f64 / union.max(1) as f64
        })
        .collect())
}
