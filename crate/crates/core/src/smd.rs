//! State mover's distance between encoder state sequences.
//!
//! Each state sequence becomes a point cloud whose masses are the normalised
//! row norms. The training loss uses the relaxed (source-marginal only)
//! transport cost in both directions, with the reference sequence detached.

use crate::autodiff::{kernels, Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::ot::{self, MassDistribution};

/// Encoder states for one sentence, one row per input position.
#[derive(Debug, Clone, Copy)]
pub struct StateSequence {
    pub states: Var,
    pub language: usize,
    /// Content tokens, language tag excluded.
    pub len: usize,
}

/// Masses `m_i = ||h_i|| / sum_k ||h_k||`; zero-norm rows are dropped.
pub fn norm_masses(states: &Tensor) -> Result<MassDistribution> {
    let Some((_, d)) = states.dims2() else {
        return shape_err("norm_masses", format!("expected n x d, got {:?}", states.shape()));
    };
    let norms: Vec<f64> = states.data().chunks_exact(d).map(kernels::norm).collect();
    if norms.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("all state rows have zero norm".into()));
    }
    MassDistribution::from_weights(states.clone(), &norms)
}

/// Relaxed SMD value between two plain state matrices (no tape).
pub fn smd_value(hx: &Tensor, hy: &Tensor) -> Result<f64> {
    let mu = norm_masses(hx)?;
    let nu = norm_masses(hy)?;
    let cost = ot::euclidean_cost(mu.points(), nu.points())?;
    ot::relaxed_smd(&mu, &nu, &cost)
}

/// `0.5 * (smd(hx, hy) + smd(hy, hx))` on plain matrices.
pub fn ot_loss_value(hx: &Tensor, hy: &Tensor) -> Result<f64> {
    let a = smd_value(hx, hy)?;
    let b = smd_value(hy, hx)?;
    Ok(0.5 * (a + b))
}

/// Drops zero-norm rows; returns the kept rows and their norms.
fn nonzero_rows(tape: &mut Tape, h: Var) -> Result<(Var, Var)> {
    let Some((n, d)) = tape.value(h).dims2() else {
        return shape_err("smd", format!("expected n x d, got {:?}", tape.value(h).shape()));
    };
    let keep: Vec<usize> = (0..n)
        .filter(|&i| kernels::norm(&tape.value(h).data()[i * d..(i + 1) * d]) > 0.0)
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidInput("all state rows have zero norm".into()));
    }
    let h = if keep.len() == n {
        h
    } else {
        tape.embedding_lookup(h, &keep)?
    };
    let norms = tape.vector_norm(h)?;
    Ok((h, norms))
}

/// Differentiable relaxed SMD from `hx` to `hy`.
///
/// Gradients reach `hx` through both its points and its masses, and `hy`
/// through the selected costs. Detaching either side is the caller's choice.
pub fn smd(tape: &mut Tape, hx: Var, hy: Var) -> Result<Var> {
    let (dx, dy) = (tape.value(hx).last_dim(), tape.value(hy).last_dim());
    if dx != dy {
        return shape_err("smd", format!("state dimension {dx} vs {dy}"));
    }
    let (x, norms) = nonzero_rows(tape, hx)?;
    let (y, _) = nonzero_rows(tape, hy)?;
    let total = tape.sum(norms);
    let masses = tape.div(norms, total)?;
    let cost = tape.euclidean_pairwise(x, y)?;
    let (n, m) = tape.value(cost).dims2().expect("pairwise cost is 2-D");
    let nearest = ot::nearest_targets(&ot::CostMatrix::new(n, m, tape.value(cost).data().to_vec())?);
    let picked = tape.select_per_row(cost, &nearest)?;
    let weighted = tape.mul(masses, picked)?;
    Ok(tape.sum(weighted))
}

/// Symmetric OT loss with `hy` detached.
pub fn ot_loss(tape: &mut Tape, hx: Var, hy: Var) -> Result<Var> {
    ot_loss_with(tape, hx, hy, true)
}

/// Symmetric OT loss; `detach_hy` controls whether gradients may flow into `hy`.
pub fn ot_loss_with(tape: &mut Tape, hx: Var, hy: Var, detach_hy: bool) -> Result<Var> {
    let hy = if detach_hy { tape.stop_gradient(hy) } else { hy };
    let forward = smd(tape, hx, hy)?;
    let backward = smd(tape, hy, hx)?;
    let both = tape.add(forward, backward)?;
    Ok(tape.scale(both, 0.5))
}
