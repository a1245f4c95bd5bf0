//! Hard-mixup pseudo sentences and the symmetric KL agreement loss.

use rand::Rng;
use rand_distr::{Bernoulli, Beta, Distribution};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

/// Probabilities below this are clamped inside the KL terms.
pub const PROB_FLOOR: f64 = 1e-9;
/// Allowed deviation of a predictive row from summing to one.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Which sentence lends its language tag to the mixed sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagRule {
    UniformRandom,
    AlwaysX,
    AlwaysY,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixupConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tag_rule: TagRule,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            alpha: 6.0,
            beta: 3.0,
            tag_rule: TagRule::UniformRandom,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "mixup alpha and beta must be positive, got {} and {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// A pseudo sentence spliced from two equal-length token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub z: Vec<usize>,
    /// `gate[k]` is true where `z[k]` was taken from `x`.
    pub gate: Vec<bool>,
    pub lambda: f64,
    pub n_prime: usize,
    pub language_tag: usize,
}

/// Cuts both sequences to the shorter length by dropping tail tokens.
pub fn truncate_pair<'a>(x: &'a [usize], y: &'a [usize]) -> Result<(&'a [usize], &'a [usize], usize)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("cannot truncate an empty sequence".into()));
    }
    let n = x.len().min(y.len());
    Ok((&x[..n], &y[..n], n))
}

/// `z_k = x_k` if `g_k` else `y_k`.
pub fn splice(x: &[usize], y: &[usize], gate: &[bool]) -> Vec<usize> {
    gate.iter()
        .zip(x.iter().zip(y))
        .map(|(&g, (&a, &b))| if g { a } else { b })
        .collect()
}

/// Draws `lambda ~ Beta(alpha, beta)` once, then an i.i.d. Bernoulli(lambda) gate.
pub fn sample_mixup<R: Rng + ?Sized>(
    x: &[usize],
    y: &[usize],
    tag_x: usize,
    tag_y: usize,
    cfg: &MixupConfig,
    rng: &mut R,
) -> Result<MixedSample> {
    if x.len() != y.len() {
        return shape_err("sample_mixup", format!("lengths {} and {}", x.len(), y.len()));
    }
    cfg.validate()?;
    let lambda = Beta::new(cfg.alpha, cfg.beta)
        .map_err(|e| Error::Config(e.to_string()))?
        .sample(rng);
    let coin = Bernoulli::new(lambda).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let gate: Vec<bool> = (0..x.len()).map(|_| coin.sample(rng)).collect();
    let language_tag = match cfg.tag_rule {
        TagRule::AlwaysX => tag_x,
        TagRule::AlwaysY => tag_y,
        TagRule::UniformRandom => {
            if rng.gen_bool(0.5) {
                tag_x
            } else {
                tag_y
            }
        }
    };
    Ok(MixedSample {
        z: splice(x, y, &gate),
        gate,
        lambda,
        n_prime: x.len(),
        language_tag,
    })
}

/// Symmetric KL between two row-stochastic matrices, averaged over rows and halved.
pub fn agreement_kl_probs(px: &Tensor, py: &Tensor) -> Result<f64> {
    if px.shape() != py.shape() || px.ndim() != 2 {
        return shape_err("agreement_kl", format!("{:?} vs {:?}", px.shape(), py.shape()));
    }
    let v = px.last_dim();
    for t in [px, py] {
        for row in t.data().chunks_exact(v) {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidInput(format!("prediction row sums to {s}")));
            }
        }
    }
    let lf = PROB_FLOOR.ln();
    let total: f64 = px
        .data()
        .iter()
        .zip(py.data())
        .map(|(&p, &q)| (p - q) * (p.ln().max(lf) - q.ln().max(lf)))
        .sum();
    Ok(total / (2.0 * px.rows() as f64))
}

/// Differentiable symmetric KL from two `[n, V]` log-probability matrices.
///
/// `sum_k KL(p_k||q_k) + KL(q_k||p_k) = sum_k sum_v (p - q)(log p - log q)`,
/// with both logs clamped at `ln PROB_FLOOR`. Returns the sum divided by `2n`.
pub fn agreement_kl(tape: &mut Tape, log_px: Var, log_py: Var) -> Result<Var> {
    let (n, _) = match (tape.value(log_px).dims2(), tape.value(log_py).dims2()) {
        (Some(a), Some(b)) if a == b => a,
        _ => {
            return shape_err(
                "agreement_kl",
                format!("{:?} vs {:?}", tape.value(log_px).shape(), tape.value(log_py).shape()),
            )
        }
    };
    let weights = vec![1.0 / (2.0 * n as f64); n];
    agreement_kl_weighted(tape, log_px, log_py, &weights)
}

/// Like [`agreement_kl`] but with an explicit weight per row, so that several
/// sentences packed into one matrix can each be normalised by their own length.
pub fn agreement_kl_weighted(tape: &mut Tape, log_px: Var, log_py: Var, row_weights: &[f64]) -> Result<Var> {
    let shape = tape.value(log_px).shape().to_vec();
    if shape.len() != 2 || tape.value(log_py).shape() != shape.as_slice() || row_weights.len() != shape[0] {
        return shape_err(
            "agreement_kl",
            format!(
                "{:?} vs {:?} with {} row weights",
                shape,
                tape.value(log_py).shape(),
                row_weights.len()
            ),
        );
    }
    let lf = PROB_FLOOR.ln();
    let p = tape.exp(log_px);
    let q = tape.exp(log_py);
    let lp = tape.clamp_min(log_px, lf);
    let lq = tape.clamp_min(log_py, lf);
    let dp = tape.sub(p, q)?;
    let dl = tape.sub(lp, lq)?;
    let prod = tape.mul(dp, dl)?;
    let w = tape.constant(Tensor::vector(row_weights.to_vec())?);
    let weighted = tape.mul_col(prod, w)?;
    Ok(tape.sum(weighted))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gradcheck;

    fn floored_kl(p: &[f64], q: &[f64]) -> f64 {
        p.iter()
            .zip(q)
            .map(|(&a, &b)| {
                let (a, b) = (a.max(PROB_FLOOR), b.max(PROB_FLOOR));
                a * (a / b).ln()
            })
            .sum()
    }

    #[test]
    fn truncation_examples() {
        let x = [1, 2, 3, 4, 5];
        let (a, b, n) = truncate_pair(&x, &x).unwrap();
        assert_eq!((a, b, n), (&x[..], &x[..], 5));
        let long = [1, 2, 3, 4, 5, 6, 7];
        let (a, b, n) = truncate_pair(&long, &x).unwrap();
        assert_eq!((a, b, n), (&long[..5], &x[..], 5));
        let (a2, b2, _) = truncate_pair(a, b).unwrap();
        assert_eq!((a2, b2), (a, b));
        assert!(truncate_pair(&[], &x).is_err());
    }

    #[test]
    fn splice_extremes() {
        let (x, y) = ([1, 2, 3], [7, 8, 9]);
        assert_eq!(splice(&x, &y, &[true; 3]), x);
        assert_eq!(splice(&x, &y, &[false; 3]), y);
    }

    #[test]
    fn tag_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = MixupConfig {
            tag_rule: TagRule::AlwaysX,
            ..Default::default()
        };
        assert_eq!(
            sample_mixup(&[1], &[2], 10, 20, &cfg, &mut rng).unwrap().language_tag,
            10
        );
        cfg.tag_rule = TagRule::AlwaysY;
        assert_eq!(
            sample_mixup(&[1], &[2], 10, 20, &cfg, &mut rng).unwrap().language_tag,
            20
        );
        cfg.tag_rule = TagRule::UniformRandom;
        let from_x = (0..2000)
            .filter(|_| sample_mixup(&[1], &[2], 10, 20, &cfg, &mut rng).unwrap().language_tag == 10)
            .count();
        assert!((900..1100).contains(&from_x), "{from_x}");
        assert!(sample_mixup(&[1, 2], &[2], 10, 20, &cfg, &mut rng).is_err());
        cfg.alpha = 0.0;
        assert!(sample_mixup(&[1], &[2], 10, 20, &cfg, &mut rng).is_err());
    }

    #[test]
    fn gate_rate_tracks_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![1; 10_000];
        let y = vec![2; 10_000];
        let s = sample_mixup(&x, &y, 0, 1, &MixupConfig::default(), &mut rng).unwrap();
        let ones = s.gate.iter().filter(|&&g| g).count() as f64;
        let n = 10_000.0;
        let sigma = (n * s.lambda * (1.0 - s.lambda)).sqrt();
        assert!((ones - n * s.lambda).abs() <= 3.0 * sigma, "{ones} vs {}", n * s.lambda);
    }

    #[test]
    fn kl_of_identical_rows_is_zero() {
        let p = Tensor::from_rows(&[vec![0.2, 0.3, 0.5], vec![0.6, 0.2, 0.2]]).unwrap();
        assert_eq!(agreement_kl_probs(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_closed_form_with_floor() {
        let p = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let expected = 0.5 * (floored_kl(&[1.0, 0.0], &[0.5, 0.5]) + floored_kl(&[0.5, 0.5], &[1.0, 0.0]));
        let got = agreement_kl_probs(&p, &q).unwrap();
        assert!((got - expected).abs() < 1e-7, "{got} vs {expected}");
        assert!((floored_kl(&[1.0, 0.0], &[0.5, 0.5]) - std::f64::consts::LN_2).abs() < 1e-7);
        assert_eq!(agreement_kl_probs(&q, &p).unwrap(), got);
    }

    #[test]
    fn kl_rejects_unnormalised_rows() {
        let p = Tensor::from_rows(&[vec![0.7, 0.7]]).unwrap();
        let q = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!(agreement_kl_probs(&p, &q).is_err());
    }

    #[test]
    fn tape_kl_matches_plain_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits =
            |rng: &mut ChaCha8Rng| Tensor::matrix(3, 5, (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let (a, b) = (logits(&mut rng), logits(&mut rng));
        let mut tape = Tape::new();
        let (la, lb) = (tape.param(a), tape.param(b));
        let (lpa, lpb) = (tape.log_softmax(la), tape.log_softmax(lb));
        let (pa, pb) = (tape.value(lpa).map(f64::exp), tape.value(lpb).map(f64::exp));
        let kl = agreement_kl(&mut tape, lpa, lpb).unwrap();
        let plain = agreement_kl_probs(&pa, &pb).unwrap();
        assert!((tape.value(kl).item().unwrap() - plain).abs() < 1e-12);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits =
            |rng: &mut ChaCha8Rng| Tensor::matrix(4, 6, (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let report = gradcheck::check(&[logits(&mut rng), logits(&mut rng)], 1e-5, |t, v| {
            let (a, b) = (t.log_softmax(v[0]), t.log_softmax(v[1]));
            agreement_kl(t, a, b)
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kl_is_symmetric_and_non_negative(n in 1usize..5, v in 2usize..7, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::new();
            let mut draw = |tape: &mut Tape| {
                let t = Tensor::matrix(n, v, (0..n * v).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap();
                let x = tape.param(t);
                tape.log_softmax(x)
            };
            let (a, b) = (draw(&mut tape), draw(&mut tape));
            let ab = agreement_kl(&mut tape, a, b).unwrap();
            let ba = agreement_kl(&mut tape, b, a).unwrap();
            prop_assert_eq!(tape.value(ab).item(), tape.value(ba).item());
            prop_assert!(tape.value(ab).item().unwrap() >= 0.0);
        }

        #[test]
        fn mixed_sample_reconstructs(len in 1usize..20, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<usize> = (0..len).map(|k| 100 + k).collect();
            let y: Vec<usize> = (0..len).map(|k| 200 + k).collect();
            let s = sample_mixup(&x, &y, 1, 2, &MixupConfig::default(), &mut rng).unwrap();
            prop_assert_eq!(s.n_prime, len);
            prop_assert!((0.0..=1.0).contains(&s.lambda));
            for k in 0..len {
                prop_assert_eq!(s.z[k], if s.gate[k] { x[k] } else { y[k] });
            }
        }
    }
}
