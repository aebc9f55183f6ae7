//! Exact balanced transportation problem by the transportation simplex
//! (spanning-tree basis with row/column potentials).

use std::collections::VecDeque;

use crate::error::{Error, Result};

const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// `(supply index, demand index, flow)` for every basic cell.
    pub flows: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

/// Minimum of `Σ c_ij f_ij` subject to row sums `supply` and column sums
/// `demand`, `f >= 0`. Both marginals must be non-negative with equal totals.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: impl Fn(usize, usize) -> f64) -> Result<TransportPlan> {
    let s = supply.len();
    let k = demand.len();
    if s == 0 || k == 0 {
        return Err(Error::Shape("transport problem needs at least one supply and one demand".into()));
    }
    if supply.iter().chain(demand).any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidValue("transport marginals must be finite and non-negative".into()));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > BALANCE_TOL * total_s.max(total_d).max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidValue(format!("unbalanced transport problem: {total_s} vs {total_d}")));
    }

    let c: Vec<f64> = (0..s * k).map(|idx| cost(idx / k, idx % k)).collect();
    let c_scale = c.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let rc_tol = 1e-12 * c_scale;

    // Northwest-corner start: exactly s + k - 1 basic cells forming a tree.
    let mut rem_s = supply.to_vec();
    let mut rem_d = demand.to_vec();
    let mut basis: Vec<(usize, usize, f64)> = Vec::with_capacity(s + k - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let f = rem_s[i].min(rem_d[j]);
        rem_s[i] -= f;
        rem_d[j] -= f;
        basis.push((i, j, f));
        if i == s - 1 && j == k - 1 {
            break;
        }
        if j == k - 1 || (i < s - 1 && rem_s[i] <= rem_d[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    // Absorb the rounding of the totals in the last cell.
    if let Some(last) = basis.last_mut() {
        last.2 = (last.2 + rem_s[s - 1].max(rem_d[k - 1])).max(0.0);
    }

    let nodes = s + k;
    let max_pivots = 50 * nodes * k + 1000;
    let mut u = vec![0.0; s];
    let mut v = vec![0.0; k];
    for _ in 0..max_pivots {
        let adj = adjacency(&basis, s, nodes);
        potentials(&basis, &adj, &c, s, k, &mut u, &mut v);

        let mut entering = None;
        let mut best = -rc_tol;
        for i in 0..s {
            for j in 0..k {
                let r = c[i * k + j] - u[i] - v[j];
                if r < best {
                    best = r;
                    entering = Some((i, j));
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let cost = basis.iter().map(|&(i, j, f)| c[i * k + j] * f).sum();
            return Ok(TransportPlan { flows: basis, cost });
        };

        // Tree path from row node ei to column node s + ej, as basis edge indices.
        let path = tree_path(&adj, ei, s + ej, nodes);
        // Edges alternate starting with a decrease at the row end.
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (pos, &e) in path.iter().enumerate() {
            if pos % 2 == 0 && basis[e].2 < theta {
                theta = basis[e].2;
                leave = e;
            }
        }
        for (pos, &e) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis[e].2 = (basis[e].2 - theta).max(0.0);
            } else {
                basis[e].2 += theta;
            }
        }
        basis[leave] = (ei, ej, theta);
    }
    Err(Error::DegenerateData("transport simplex did not converge".into()))
}

fn adjacency(basis: &[(usize, usize, f64)], s: usize, nodes: usize) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); nodes];
    for (e, &(i, j, _)) in basis.iter().enumerate() {
        adj[i].push((s + j, e));
        adj[s + j].push((i, e));
    }
    adj
}

fn potentials(
    basis: &[(usize, usize, f64)],
    adj: &[Vec<(usize, usize)>],
    c: &[f64],
    s: usize,
    k: usize,
    u: &mut [f64],
    v: &mut [f64],
) {
    let mut seen = vec![false; s + k];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    u[0] = 0.0;
    while let Some(node) = queue.pop_front() {
        for &(other, e) in &adj[node] {
            if seen[other] {
                continue;
            }
            seen[other] = true;
            let (i, j, _) = basis[e];
            let cij = c[i * k + j];
            if other >= s {
                v[j] = cij - u[i];
            } else {
                u[i] = cij - v[j];
            }
            queue.push_back(other);
        }
    }
}

/// Basis edges on the tree path from `from` to `to`, ordered from `from`.
fn tree_path(adj: &[Vec<(usize, usize)>], from: usize, to: usize, nodes: usize) -> Vec<usize> {
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
    let mut seen = vec![false; nodes];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &(other, e) in &adj[node] {
            if !seen[other] {
                seen[other] = true;
                parent[other] = Some((node, e));
                queue.push_back(other);
            }
        }
    }
    let mut edges = Vec::new();
    let mut node = to;
    while let Some((prev, e)) = parent[node] {
        edges.push(e);
        node = prev;
    }
    edges.reverse();
    edges
}
