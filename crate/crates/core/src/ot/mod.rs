//! Discrete optimal transport between weighted point sets.
//!
//! [`exact_emd`] solves the transportation LP with a network simplex;
//! [`permutation_oracle_emd`] is an independent brute-force check for the
//! uniform equal-size case; [`relaxed_smd`] is the nearest-neighbour lower
//! bound obtained by dropping the target marginals; [`sinkhorn`] and [`ipot`]
//! are iterative approximations used for comparison only.

mod network_simplex;
mod sinkhorn;

pub use network_simplex::exact_emd;
pub use sinkhorn::{ipot, sinkhorn, IpotParams, SinkhornParams};

use crate::autodiff::{kernels, Tensor};
use crate::error::{shape_err, Error, Result};

/// Tolerance on `sum(masses) == 1` for a valid distribution.
pub const MASS_SUM_TOL: f64 = 1e-12;
/// Tolerance on `sum(mu) == sum(nu)` before solving.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Points with strictly positive masses summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MassDistribution {
    points: Tensor,
    masses: Vec<f64>,
}

impl MassDistribution {
    pub fn new(points: Tensor, masses: Vec<f64>) -> Result<Self> {
        let Some((n, _)) = points.dims2() else {
            return shape_err(
                "mass_distribution",
                format!("points must be n x d, got {:?}", points.shape()),
            );
        };
        if masses.len() != n {
            return shape_err("mass_distribution", format!("{n} points but {} masses", masses.len()));
        }
        if masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidInput("masses must be finite and > 0".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_SUM_TOL {
            return Err(Error::InvalidInput(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self { points, masses })
    }

    /// Equal mass `1/n` on every point.
    pub fn uniform(points: Tensor) -> Result<Self> {
        let n = points.rows();
        Self::new(points, vec![1.0 / n as f64; n])
    }

    /// Normalises non-negative weights; zero-weight points are dropped.
    pub fn from_weights(points: Tensor, weights: &[f64]) -> Result<Self> {
        let Some((n, d)) = points.dims2() else {
            return shape_err(
                "mass_distribution",
                format!("points must be n x d, got {:?}", points.shape()),
            );
        };
        if weights.len() != n {
            return shape_err("mass_distribution", format!("{n} points but {} weights", weights.len()));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("all weights are zero".into()));
        }
        let keep: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
        let mut data = Vec::with_capacity(keep.len() * d);
        for &i in &keep {
            data.extend_from_slice(points.row(i));
        }
        let masses = keep.iter().map(|&i| weights[i] / total).collect();
        Self::new(Tensor::matrix(keep.len(), d, data)?, masses)
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.last_dim()
    }
}

/// Non-negative `n x m` cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return shape_err("cost_matrix", format!("{rows} x {cols} with {} entries", data.len()));
        }
        if data.iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(Error::InvalidInput("costs must be finite and >= 0".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> CostMatrix {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.get(i, j);
            }
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// A coupling between two mass vectors.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    pub plan: Vec<f64>,
    /// `sum_ij T_ij C_ij`, without any regularisation term.
    pub achieved_cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.chunks_exact(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.plan.chunks_exact(self.cols) {
            out.iter_mut().zip(r).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// Largest absolute deviation of either marginal from the given masses.
    pub fn marginal_violation(&self, mu: &[f64], nu: &[f64]) -> f64 {
        let r = self
            .row_sums()
            .iter()
            .zip(mu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let c = self
            .col_sums()
            .iter()
            .zip(nu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }
}

/// `C[i][j] = ||a_i - b_j||_2`.
pub fn euclidean_cost(a: &Tensor, b: &Tensor) -> Result<CostMatrix> {
    let (Some((n, d)), Some((m, d2))) = (a.dims2(), b.dims2()) else {
        return shape_err("euclidean_cost", format!("{:?} vs {:?}", a.shape(), b.shape()));
    };
    if d != d2 {
        return shape_err("euclidean_cost", format!("dimension {d} vs {d2}"));
    }
    let mut data = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            data.push(kernels::dist(a.row(i), b.row(j)));
        }
    }
    CostMatrix::new(n, m, data)
}

pub(crate) fn check_problem(mu: &[f64], nu: &[f64], cost: &CostMatrix) -> Result<()> {
    if cost.rows() != mu.len() || cost.cols() != nu.len() {
        return shape_err(
            "transport",
            format!(
                "cost {} x {} for masses {} and {}",
                cost.rows(),
                cost.cols(),
                mu.len(),
                nu.len()
            ),
        );
    }
    let (sa, sb): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (sa - sb).abs() > FEASIBILITY_TOL {
        return Err(Error::Infeasible(format!("source mass {sa} != target mass {sb}")));
    }
    Ok(())
}

/// Largest `n` accepted by [`permutation_oracle_emd`].
pub const ORACLE_MAX_N: usize = 8;

/// `(1/n) min_sigma sum_i ||a_i - b_sigma(i)||` by enumerating every permutation.
///
/// For uniform masses on equal-size sets this equals the transport optimum
/// (the LP's vertices are permutation matrices).
pub fn permutation_oracle_emd(a: &Tensor, b: &Tensor) -> Result<f64> {
    let cost = euclidean_cost(a, b)?;
    let n = cost.rows();
    if n != cost.cols() {
        return shape_err("permutation_oracle_emd", format!("{n} vs {} points", cost.cols()));
    }
    if n > ORACLE_MAX_N {
        return Err(Error::InvalidInput(format!(
            "permutation oracle refuses n = {n} > {ORACLE_MAX_N}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &cost, &mut best);
    Ok(best / n as f64)
}

fn permute(perm: &mut Vec<usize>, k: usize, cost: &CostMatrix, best: &mut f64) {
    if k == perm.len() {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
        if total < *best {
            *best = total;
        }
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, cost, best);
        perm.swap(k, i);
    }
}

/// Index of the cheapest target for every source row; ties go to the lowest index.
pub fn nearest_targets(cost: &CostMatrix) -> Vec<usize> {
    (0..cost.rows())
        .map(|i| {
            let mut best = 0;
            for j in 1..cost.cols() {
                if cost.get(i, j) < cost.get(i, best) {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Transport cost with only the source marginal enforced: `sum_i m_i min_j C_ij`.
pub fn relaxed_smd(mu: &MassDistribution, nu: &MassDistribution, cost: &CostMatrix) -> Result<f64> {
    relaxed_cost(mu.masses(), nu.masses(), cost)
}

pub(crate) fn relaxed_cost(mu: &[f64], nu: &[f64], cost: &CostMatrix) -> Result<f64> {
    check_problem(mu, nu, cost)?;
    Ok(nearest_targets(cost)
        .iter()
        .enumerate()
        .map(|(i, &j)| mu[i] * cost.get(i, j))
        .sum())
}

/// Exact transport cost between two distributions under the Euclidean ground cost.
pub fn emd_between(mu: &MassDistribution, nu: &MassDistribution) -> Result<TransportPlan> {
    let cost = euclidean_cost(mu.points(), nu.points())?;
    exact_emd(mu, nu, &cost)
}

#[cfg(test)]
mod tests;
