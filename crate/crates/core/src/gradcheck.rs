//! Central finite-difference oracle for tape gradients.
//!
//! Only forward values are used to build the numeric estimate, so the oracle
//! stays independent of every backward rule it checks.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor of [`rel_err`]; below it the comparison is effectively absolute.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, element index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

/// Compares the tape gradient of `f` against central differences with step `h`.
///
/// `f` receives one parameter `Var` per entry of `inputs` and must return a scalar loss.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out)
            .item()
            .ok_or_else(|| Error::NotScalar(tape.value(out).shape().to_vec()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ii, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&tape, *var);
        for e in 0..inputs[ii].numel() {
            let orig = inputs[ii].data()[e];
            work[ii].data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work[ii].data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work[ii].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[e];
            let r = rel_err(a, numeric);
            report.checked += 1;
            if r > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(r);
                report.worst = Some((ii, e, a, numeric));
            }
        }
    }
    Ok(report)
}
