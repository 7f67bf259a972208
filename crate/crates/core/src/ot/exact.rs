//! Exact discrete optimal transport by the network simplex method specialised to the
//! bipartite transportation graph (rows are supply nodes, columns demand nodes).

use super::TransportPlan;
use crate::error::{shape_err, Error, Result};
use crate::gradtape::Tensor;
use crate::scalar::Scalar;

/// Largest side accepted by [`exact_wasserstein`].
pub const EXACT_MAX_SIDE: usize = 4096;

#[derive(Clone, Copy, Debug)]
struct Cell<T> {
    row: usize,
    col: usize,
    flow: T,
}

struct Basis<T> {
    n: usize,
    m: usize,
    cells: Vec<Cell<T>>,
    // node ids: rows 0..n, columns n..n+m
    adjacency: Vec<Vec<usize>>,
}

impl<T: Scalar> Basis<T> {
    fn northwest_corner(a: &[T], b: &[T]) -> Self {
        let (n, m) = (a.len(), b.len());
        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let mut cells = Vec::with_capacity(n + m - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]).max(T::zero());
            cells.push(Cell { row: i, col: j, flow: x });
            supply[i] = supply[i] - x;
            demand[j] = demand[j] - x;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if j == m - 1 || (i < n - 1 && supply[i] <= demand[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        let mut basis = Self {
            n,
            m,
            cells,
            adjacency: vec![Vec::new(); n + m],
        };
        basis.rebuild_adjacency();
        basis
    }

    fn rebuild_adjacency(&mut self) {
        for adj in &mut self.adjacency {
            adj.clear();
        }
        for (k, c) in self.cells.iter().enumerate() {
            self.adjacency[c.row].push(k);
            self.adjacency[self.n + c.col].push(k);
        }
    }

    fn other_end(&self, cell: usize, node: usize) -> usize {
        let c = &self.cells[cell];
        if node == c.row {
            self.n + c.col
        } else {
            c.row
        }
    }

    /// Dual potentials from `u_i + v_j = c_ij` on basic cells, plus the BFS tree
    /// (parent node, parent cell, depth) rooted at row 0.
    fn potentials(&self, cost: &[T]) -> (Vec<T>, Vec<Option<(usize, usize)>>, Vec<usize>) {
        let total = self.n + self.m;
        let mut pot = vec![T::zero(); total];
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut depth = vec![usize::MAX; total];
        let mut queue = std::collections::VecDeque::with_capacity(total);
        depth[0] = 0;
        queue.push_back(0);
        while let Some(node) = queue.pop_front() {
            for &k in &self.adjacency[node] {
                let next = self.other_end(k, node);
                if depth[next] != usize::MAX {
                    continue;
                }
                let c = &self.cells[k];
                let cij = cost[c.row * self.m + c.col];
                // row potential u_i, column potential v_j stored at n + j
                pot[next] = cij - pot[node];
                depth[next] = depth[node] + 1;
                parent[next] = Some((node, k));
                queue.push_back(next);
            }
        }
        (pot, parent, depth)
    }
}

/// Exact optimal transport between weights `a` (rows) and `b` (columns) under `cost`.
///
/// Weights must be non-negative and have equal mass within `1e-6`; `b` is rescaled to the
/// mass of `a` before solving.
pub fn exact_wasserstein<T: Scalar>(cost: &Tensor<T>, a: &[T], b: &[T]) -> Result<TransportPlan<T>> {
    let (n, m) = (a.len(), b.len());
    if cost.shape() != [n, m] {
        return shape_err(
            "exact_wasserstein",
            format!("cost {:?} for weights of length {} and {}", cost.shape(), n, m),
        );
    }
    if n == 0 || m == 0 {
        return shape_err("exact_wasserstein", "empty measure");
    }
    if n > EXACT_MAX_SIDE || m > EXACT_MAX_SIDE {
        return Err(Error::InvalidArgument(format!(
            "exact solver limited to {EXACT_MAX_SIDE} atoms per side, got {n} x {m}"
        )));
    }
    if a.iter().chain(b).any(|w| !(*w >= T::zero()) || !w.is_finite()) {
        return Err(Error::Infeasible("weights must be finite and non-negative".into()));
    }
    let (sa, sb): (T, T) = (a.iter().copied().sum(), b.iter().copied().sum());
    if (sa - sb).abs() > T::lit(1e-6) {
        return Err(Error::Infeasible(format!("total masses differ: {sa} vs {sb}")));
    }
    if !(sa > T::zero()) {
        return Err(Error::Infeasible("zero total mass".into()));
    }
    let b: Vec<T> = b.iter().map(|w| *w * sa / sb).collect();
    let c = cost.data();
    let scale = c.iter().fold(T::zero(), |acc, v| acc.max(v.abs())).max(T::one());
    let tol = scale * T::epsilon() * T::lit(1e4);

    let mut basis = Basis::northwest_corner(a, &b);
    let mut degenerate_streak = 0usize;
    let max_pivots = 50 * (n + m) * (n + m).max(64);
    let mut pivots = 0usize;
    loop {
        let (pot, parent, depth) = basis.potentials(c);
        // Dantzig pricing, or Bland's rule after a long run of degenerate pivots.
        let bland = degenerate_streak > 2 * (n + m);
        let mut entering = None;
        let mut best = -tol;
        'search: for i in 0..n {
            for j in 0..m {
                let reduced = c[i * m + j] - pot[i] - pot[n + j];
                if reduced < best {
                    entering = Some((i, j));
                    if bland {
                        break 'search;
                    }
                    best = reduced;
                }
            }
        }
        let Some((ei, ej)) = entering else { break };
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::InvalidArgument(format!(
                "network simplex did not terminate after {max_pivots} pivots"
            )));
        }

        // Tree path from column node ej back to row node ei.
        let (mut x, mut y) = (n + ej, ei);
        let mut from_col = Vec::new();
        let mut from_row = Vec::new();
        while x != y {
            if depth[x] >= depth[y] {
                let (p, k) = parent[x].expect("non-root has parent");
                from_col.push(k);
                x = p;
            } else {
                let (p, k) = parent[y].expect("non-root has parent");
                from_row.push(k);
                y = p;
            }
        }
        from_row.reverse();
        let path: Vec<usize> = from_col.into_iter().chain(from_row).collect();

        // Odd positions along the cycle (starting after the entering cell) lose flow.
        let mut leaving = None;
        let mut delta = T::infinity();
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                let f = basis.cells[k].flow;
                let better = f < delta || (bland && f == delta && leaving.is_some_and(|l| k < l));
                if better {
                    delta = f;
                    leaving = Some(k);
                }
            }
        }
        let leaving = leaving.expect("cycle has a decreasing cell");
        let delta = delta.max(T::zero());
        if delta == T::zero() {
            degenerate_streak += 1;
        } else {
            degenerate_streak = 0;
        }
        for (pos, &k) in path.iter().enumerate() {
            let f = &mut basis.cells[k].flow;
            *f = if pos % 2 == 0 { (*f - delta).max(T::zero()) } else { *f + delta };
        }
        basis.cells[leaving] = Cell {
            row: ei,
            col: ej,
            flow: delta,
        };
        basis.rebuild_adjacency();
    }

    let (pot, _, _) = basis.potentials(c);
    let mut plan = vec![T::zero(); n * m];
    let mut value = T::zero();
    for cell in &basis.cells {
        plan[cell.row * m + cell.col] = plan[cell.row * m + cell.col] + cell.flow;
        value = value + cell.flow * c[cell.row * m + cell.col];
    }
    Ok(TransportPlan {
        plan: Tensor::matrix(n, m, plan)?,
        value,
        potentials: Some((pot[..n].to_vec(), pot[n..].to_vec())),
        converged: true,
        iterations: pivots,
    })
}
