//! Iterative approximations: log-domain Sinkhorn and the inexact proximal point method (IPOT).
//!
//! Both solvers work on the cost matrix divided by its maximum entry, so
//! `epsilon` and `beta` are relative to the cost scale and the reported cost
//! scales linearly with the inputs.

use super::{check_problem, CostMatrix, MassDistribution, TransportPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SinkhornParams {
    /// Entropic regularisation relative to the largest cost.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once the worst marginal deviation drops below this.
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_iters: 5000,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IpotParams {
    /// Proximal step relative to the largest cost.
    pub beta: f64,
    pub inner_iters: usize,
    pub outer_iters: usize,
}

impl Default for IpotParams {
    fn default() -> Self {
        Self {
            beta: 0.05,
            inner_iters: 1,
            outer_iters: 2000,
        }
    }
}

fn lse(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Outer-product plan for the degenerate all-zero cost matrix.
fn trivial_plan(mu: &[f64], nu: &[f64]) -> TransportPlan {
    let plan = mu.iter().flat_map(|a| nu.iter().map(move |b| a * b)).collect();
    TransportPlan {
        rows: mu.len(),
        cols: nu.len(),
        plan,
        achieved_cost: 0.0,
        converged: true,
        iterations: 0,
    }
}

fn finish(
    mu: &[f64],
    nu: &[f64],
    cost: &CostMatrix,
    plan: Vec<f64>,
    iterations: usize,
    converged: bool,
) -> TransportPlan {
    let achieved_cost = plan.iter().zip(cost.data()).map(|(t, c)| t * c).sum();
    TransportPlan {
        rows: mu.len(),
        cols: nu.len(),
        plan,
        achieved_cost,
        converged,
        iterations,
    }
}

/// Entropy-regularised transport by alternating log-domain scaling.
///
/// Returns the plan even when `max_iters` is exhausted; `converged` tells which.
pub fn sinkhorn(
    mu: &MassDistribution,
    nu: &MassDistribution,
    cost: &CostMatrix,
    params: &SinkhornParams,
) -> Result<TransportPlan> {
    sinkhorn_masses(mu.masses(), nu.masses(), cost, params)
}

pub(crate) fn sinkhorn_masses(
    mu: &[f64],
    nu: &[f64],
    cost: &CostMatrix,
    params: &SinkhornParams,
) -> Result<TransportPlan> {
    check_problem(mu, nu, cost)?;
    if !(params.epsilon > 0.0) {
        return Err(Error::InvalidInput("sinkhorn epsilon must be > 0".into()));
    }
    let scale = cost.max();
    if scale == 0.0 {
        return Ok(trivial_plan(mu, nu));
    }
    let (n, m) = (mu.len(), nu.len());
    let c: Vec<f64> = cost.data().iter().map(|v| v / scale).collect();
    let eps = params.epsilon;
    let (la, lb): (Vec<f64>, Vec<f64>) = (mu.iter().map(|v| v.ln()).collect(), nu.iter().map(|v| v.ln()).collect());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut converged = false;
    let mut iters = 0;
    while iters < params.max_iters {
        iters += 1;
        for i in 0..n {
            f[i] = eps * (la[i] - lse((0..m).map(|j| (g[j] - c[i * m + j]) / eps)));
        }
        for j in 0..m {
            g[j] = eps * (lb[j] - lse((0..n).map(|i| (f[i] - c[i * m + j]) / eps)));
        }
        // columns are exact after the g-update; rows carry the violation
        let viol = (0..n)
            .map(|i| {
                let row: f64 = (0..m).map(|j| ((f[i] + g[j] - c[i * m + j]) / eps).exp()).sum();
                (row - mu[i]).abs()
            })
            .fold(0.0, f64::max);
        if viol < params.tol {
            converged = true;
            break;
        }
    }
    let plan = (0..n * m).map(|e| ((f[e / m] + g[e % m] - c[e]) / eps).exp()).collect();
    Ok(finish(mu, nu, cost, plan, iters, converged))
}

/// Inexact proximal point iterations with a KL proximity term of weight `beta`.
pub fn ipot(
    mu: &MassDistribution,
    nu: &MassDistribution,
    cost: &CostMatrix,
    params: &IpotParams,
) -> Result<TransportPlan> {
    ipot_masses(mu.masses(), nu.masses(), cost, params)
}

/// Marginal deviation under which an IPOT plan is reported as converged.
pub const IPOT_TOL: f64 = 1e-6;

pub(crate) fn ipot_masses(mu: &[f64], nu: &[f64], cost: &CostMatrix, params: &IpotParams) -> Result<TransportPlan> {
    check_problem(mu, nu, cost)?;
    if !(params.beta > 0.0) || params.inner_iters == 0 || params.outer_iters == 0 {
        return Err(Error::InvalidInput(
            "ipot needs beta > 0 and positive iteration counts".into(),
        ));
    }
    let scale = cost.max();
    if scale == 0.0 {
        return Ok(trivial_plan(mu, nu));
    }
    let (n, m) = (mu.len(), nu.len());
    let lg: Vec<f64> = cost.data().iter().map(|v| -v / scale / params.beta).collect();
    let (la, lb): (Vec<f64>, Vec<f64>) = (mu.iter().map(|v| v.ln()).collect(), nu.iter().map(|v| v.ln()).collect());
    // log-domain state: T = diag(a) (G . T_prev) diag(b)
    let mut lt = vec![0.0; n * m];
    let mut log_a = vec![0.0; n];
    let mut log_b = vec![-(m as f64).ln(); m];
    let mut lq = vec![0.0; n * m];
    for _ in 0..params.outer_iters {
        for e in 0..n * m {
            lq[e] = lg[e] + lt[e];
        }
        for _ in 0..params.inner_iters {
            for i in 0..n {
                log_a[i] = la[i] - lse((0..m).map(|j| lq[i * m + j] + log_b[j]));
            }
            for j in 0..m {
                log_b[j] = lb[j] - lse((0..n).map(|i| lq[i * m + j] + log_a[i]));
            }
        }
        for e in 0..n * m {
            lt[e] = log_a[e / m] + lq[e] + log_b[e % m];
        }
    }
    let plan: Vec<f64> = lt.iter().map(|v| v.exp()).collect();
    let mut out = finish(mu, nu, cost, plan, params.outer_iters, false);
    out.converged = out.marginal_violation(mu, nu) < IPOT_TOL;
    Ok(out)
}
