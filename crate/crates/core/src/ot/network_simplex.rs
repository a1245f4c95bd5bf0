//! Network simplex on the bipartite transportation graph.
//!
//! The basis is a spanning tree over `n` source and `m` sink nodes with exactly
//! `n + m - 1` basic cells (degenerate zero-flow cells included). Entering
//! cells are picked by most negative reduced cost and leaving cells by the
//! ratio test; ties in both go to the lowest row-major cell index. After a long
//! run of degenerate pivots the entering rule falls back to Bland's rule.

use std::collections::VecDeque;

use super::{check_problem, CostMatrix, MassDistribution, TransportPlan};
use crate::error::{Error, Result};

/// Exact earth mover's distance between `mu` and `nu` under `cost`.
pub fn exact_emd(mu: &MassDistribution, nu: &MassDistribution, cost: &CostMatrix) -> Result<TransportPlan> {
    solve(mu.masses(), nu.masses(), cost)
}

pub(crate) fn solve(mu: &[f64], nu: &[f64], cost: &CostMatrix) -> Result<TransportPlan> {
    check_problem(mu, nu, cost)?;
    let (n, m) = (mu.len(), nu.len());
    let mut flow = vec![0.0; n * m];
    let mut basic = vec![false; n * m];
    northwest_corner(mu, nu, &mut flow, &mut basic);

    let scale = cost.max().max(1.0);
    let tol = 1e-12 * scale;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut degenerate_run = 0usize;
    let mut bland = false;
    let max_iters = 100 * (n * m).max(16);
    let mut iterations = 0;
    loop {
        duals(n, m, cost, &basic, &mut u, &mut v);
        let Some(enter) = entering(n, m, cost, &basic, &u, &v, tol, bland) else {
            break;
        };
        iterations += 1;
        if iterations > max_iters {
            return Err(Error::Infeasible(format!(
                "network simplex did not terminate in {max_iters} pivots"
            )));
        }
        let cycle = cycle_through(n, m, &basic, enter);
        // cycle[0] is the entering cell (+); signs alternate from there.
        let mut leave = usize::MAX;
        let mut theta = f64::INFINITY;
        for &cell in cycle.iter().skip(1).step_by(2) {
            let f = flow[cell];
            if f < theta || (f == theta && cell < leave) {
                theta = f;
                leave = cell;
            }
        }
        let theta = theta.max(0.0);
        for (k, &cell) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                flow[cell] += theta;
            } else {
                flow[cell] -= theta;
            }
        }
        flow[leave] = 0.0;
        basic[leave] = false;
        basic[enter] = true;
        if theta == 0.0 {
            degenerate_run += 1;
            if degenerate_run > n * m {
                bland = true;
            }
        } else {
            degenerate_run = 0;
        }
    }

    for f in flow.iter_mut() {
        if *f < 0.0 {
            *f = 0.0;
        }
    }
    let achieved_cost = flow.iter().zip(cost.data()).map(|(f, c)| f * c).sum();
    Ok(TransportPlan {
        rows: n,
        cols: m,
        plan: flow,
        achieved_cost,
        converged: true,
        iterations,
    })
}

fn northwest_corner(mu: &[f64], nu: &[f64], flow: &mut [f64], basic: &mut [bool]) {
    let (n, m) = (mu.len(), nu.len());
    let mut ra = mu.to_vec();
    let mut rb = nu.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra[i].min(rb[j]).max(0.0);
        flow[i * m + j] = x;
        basic[i * m + j] = true;
        ra[i] -= x;
        rb[j] -= x;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if i == n - 1 {
            j += 1;
        } else if j == m - 1 || ra[i] <= rb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    // rounding residue from the staircase lands in the last basic cell
    flow[n * m - 1] += ra[n - 1].max(0.0);
}

/// Solves `u_i + v_j = c_ij` over the basic tree with `u_0 = 0`.
fn duals(n: usize, m: usize, cost: &CostMatrix, basic: &[bool], u: &mut [f64], v: &mut [f64]) {
    let mut seen_r = vec![false; n];
    let mut seen_c = vec![false; m];
    let mut queue = VecDeque::new();
    u[0] = 0.0;
    seen_r[0] = true;
    queue.push_back((true, 0usize));
    while let Some((is_row, k)) = queue.pop_front() {
        if is_row {
            for j in 0..m {
                if basic[k * m + j] && !seen_c[j] {
                    v[j] = cost.get(k, j) - u[k];
                    seen_c[j] = true;
                    queue.push_back((false, j));
                }
            }
        } else {
            for i in 0..n {
                if basic[i * m + k] && !seen_r[i] {
                    u[i] = cost.get(i, k) - v[k];
                    seen_r[i] = true;
                    queue.push_back((true, i));
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn entering(
    n: usize,
    m: usize,
    cost: &CostMatrix,
    basic: &[bool],
    u: &[f64],
    v: &[f64],
    tol: f64,
    bland: bool,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..n {
        for j in 0..m {
            let cell = i * m + j;
            if basic[cell] {
                continue;
            }
            let r = cost.get(i, j) - u[i] - v[j];
            if r < -tol {
                if bland {
                    return Some(cell);
                }
                if best.is_none_or(|(_, br)| r < br) {
                    best = Some((cell, r));
                }
            }
        }
    }
    best.map(|(c, _)| c)
}

/// Cells of the unique cycle formed by adding `enter` to the basic tree,
/// starting with `enter` and alternating in sign.
fn cycle_through(n: usize, m: usize, basic: &[bool], enter: usize) -> Vec<usize> {
    let (ei, ej) = (enter / m, enter % m);
    // BFS over tree nodes: rows are 0..n, columns are n..n+m; start at column ej.
    let total = n + m;
    let mut parent = vec![usize::MAX; total];
    let mut visited = vec![false; total];
    let mut queue = VecDeque::new();
    visited[n + ej] = true;
    queue.push_back(n + ej);
    while let Some(node) = queue.pop_front() {
        if node == ei {
            break;
        }
        if node < n {
            for j in 0..m {
                if basic[node * m + j] && !visited[n + j] {
                    visited[n + j] = true;
                    parent[n + j] = node;
                    queue.push_back(n + j);
                }
            }
        } else {
            let j = node - n;
            for i in 0..n {
                if basic[i * m + j] && !visited[i] {
                    visited[i] = true;
                    parent[i] = node;
                    queue.push_back(i);
                }
            }
        }
    }
    // walk back from row ei to column ej collecting tree cells
    let mut cells = vec![enter];
    let mut node = ei;
    while node != n + ej {
        let p = parent[node];
        let cell = if node < n {
            node * m + (p - n)
        } else {
            p * m + (node - n)
        };
        cells.push(cell);
        node = p;
    }
    cells
}
