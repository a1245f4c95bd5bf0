//! Training objectives over a batch of sentence pairs.

use serde::{Deserialize, Serialize};

use super::{LenScale, Objective, TrainConfig};
use crate::agreement::{self, PROB_FLOOR};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{decode_batch, encode_batch, teacher_forcing_pair, weighted_nll, Dropout, TaggedSentence, Weights};
use crate::rng::stream;
use crate::smd;

/// Scalar parts of one batch loss.
///
/// `total = ce + gamma1 * avg_src_len * ot + gamma2 * at + aux`, where `aux`
/// holds the (already weighted) regulariser of a baseline objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ot: f64,
    pub at: f64,
    pub aux: f64,
    pub total: f64,
    pub avg_src_len: f64,
}

impl LossBreakdown {
    /// Recomputes the total from its parts.
    pub fn recombine(&self, gamma1: f64, gamma2: f64) -> f64 {
        self.ce + (gamma1 * self.avg_src_len) * self.ot + gamma2 * self.at + self.aux
    }
}

pub struct LossGraph {
    pub loss: Var,
    pub breakdown: LossBreakdown,
}

/// Where the randomness of one step comes from.
#[derive(Debug, Clone, Copy)]
pub struct StepRng {
    pub seed: u64,
    pub step: u64,
    /// Dropout is applied only when set (and the model rate is positive).
    pub train: bool,
}

impl StepRng {
    /// Dropout mask stream for one labelled forward pass of this step.
    pub fn dropout(&self, cfg: &TrainConfig, label: &str) -> Option<Dropout> {
        (self.train && cfg.model.dropout > 0.0)
            .then(|| Dropout::new(cfg.model.dropout, stream(self.seed, label, &[self.step])))
    }
}

/// Encoder states standing in for the target side.
pub enum TargetStates {
    /// Encode the target sentences on this tape (detached if the config says so).
    Encode,
    /// Use states that are already on the tape, one block per pair.
    Given { states: Var, segments: Vec<(usize, usize)> },
}

pub type Pair<'a> = (&'a TaggedSentence, &'a TaggedSentence);

struct Encodings {
    hx: Var,
    x_segs: Vec<(usize, usize)>,
    hy: Option<(Var, Vec<(usize, usize)>)>,
    avg_src_len: f64,
}

fn encode_sides(
    tape: &mut Tape,
    w: &Weights,
    batch: &[Pair<'_>],
    cfg: &TrainConfig,
    rng: &StepRng,
    need_hy: bool,
    target: TargetStates,
) -> Result<Encodings> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let xs: Vec<&[usize]> = batch.iter().map(|(x, _)| x.tokens.as_slice()).collect();
    let mut dx = rng.dropout(cfg, "dropout.enc_x");
    let enc_x = encode_batch(tape, w, &xs, dx.as_mut())?;
    let hy = match (need_hy, target) {
        (false, _) => None,
        (true, TargetStates::Given { states, segments }) => Some((states, segments)),
        (true, TargetStates::Encode) => {
            let ys: Vec<&[usize]> = batch.iter().map(|(_, y)| y.tokens.as_slice()).collect();
            let mut dy = rng.dropout(cfg, "dropout.enc_y");
            let enc_y = encode_batch(tape, w, &ys, dy.as_mut())?;
            let states = if cfg.stop_grad_hy {
                tape.stop_gradient(enc_y.states)
            } else {
                enc_y.states
            };
            Some((states, enc_y.segments))
        }
    };
    let avg_src_len = batch.iter().map(|(x, _)| x.content().len() as f64).sum::<f64>() / batch.len() as f64;
    Ok(Encodings {
        hx: enc_x.states,
        x_segs: enc_x.segments,
        hy,
        avg_src_len,
    })
}

/// Mean teacher-forced CE of `x -> y` over the batch (each sentence averaged over its own tokens).
fn ce_term(
    tape: &mut Tape,
    w: &Weights,
    enc: &Encodings,
    batch: &[Pair<'_>],
    cfg: &TrainConfig,
    rng: &StepRng,
) -> Result<(Var, Var)> {
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = batch
        .iter()
        .map(|(_, y)| teacher_forcing_pair(y.language, y.content()))
        .collect();
    let inputs: Vec<&[usize]> = pairs.iter().map(|(i, _)| i.as_slice()).collect();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut d = rng.dropout(cfg, "dropout.dec_ce");
    let (lp, segs) = decode_batch(tape, w, enc.hx, &enc.x_segs, &idx, &inputs, d.as_mut())?;
    let gold: Vec<usize> = pairs.iter().flat_map(|(_, g)| g.iter().copied()).collect();
    let b = batch.len() as f64;
    let weights: Vec<f64> = segs
        .iter()
        .flat_map(|&(_, l)| std::iter::repeat_n(1.0 / (b * l as f64), l))
        .collect();
    Ok((weighted_nll(tape, lp, &gold, &weights)?, lp))
}

fn state_block(tape: &mut Tape, states: Var, seg: (usize, usize), include_tag: bool) -> Result<Var> {
    let skip = usize::from(!include_tag && seg.1 > 1);
    tape.slice(states, 0, seg.0 + skip, seg.1 - skip)
}

/// Mean OT loss over the pairs of the batch.
fn ot_term(tape: &mut Tape, enc: &Encodings, batch: &[Pair<'_>], cfg: &TrainConfig) -> Result<Var> {
    let (hy, y_segs) = enc.hy.as_ref().expect("target states present");
    let mut terms = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let x = state_block(tape, enc.hx, enc.x_segs[i], cfg.include_tag_position)?;
        let y = state_block(tape, *hy, y_segs[i], cfg.include_tag_position)?;
        let l = smd::ot_loss_with(tape, x, y, false)?;
        terms.push(match cfg.len_scale {
            LenScale::BatchMean => l,
            LenScale::PerSentence => tape.scale(l, batch[i].0.content().len() as f64),
        });
    }
    let mut sum = terms[0];
    for &t in &terms[1..] {
        sum = tape.add(sum, t)?;
    }
    let mean = tape.scale(sum, 1.0 / batch.len() as f64);
    Ok(match cfg.len_scale {
        LenScale::BatchMean => mean,
        // length-weighted mean, so that `avg_src_len * ot` is the per-sentence scaled mean
        LenScale::PerSentence => tape.scale(mean, 1.0 / enc.avg_src_len),
    })
}

fn at_term(
    tape: &mut Tape,
    w: &Weights,
    enc: &Encodings,
    batch: &[Pair<'_>],
    cfg: &TrainConfig,
    rng: &StepRng,
) -> Result<Var> {
    let (hy, y_segs) = enc.hy.as_ref().expect("target states present");
    let b = batch.len();
    let mixup = cfg.mixup();
    let mut inputs = Vec::with_capacity(b);
    let mut n_primes = Vec::with_capacity(b);
    for (i, (x, y)) in batch.iter().enumerate() {
        let (xt, yt, n) = agreement::truncate_pair(x.content(), y.content())?;
        let mut r = stream(rng.seed, "mixup", &[rng.step, i as u64]);
        let s = agreement::sample_mixup(xt, yt, x.language, y.language, &mixup, &mut r)?;
        inputs.push(TaggedSentence::new(s.language_tag, &s.z).tokens);
        n_primes.push(n);
    }
    let tx = tape.value(enc.hx).rows();
    let memory = tape.concat(&[enc.hx, *hy], 0)?;
    let mut mem_segs = enc.x_segs.clone();
    mem_segs.extend(y_segs.iter().map(|&(s, l)| (tx + s, l)));
    let idx: Vec<usize> = (0..2 * b).collect();
    let all_inputs: Vec<&[usize]> = inputs.iter().chain(inputs.iter()).map(Vec::as_slice).collect();
    let mut d = rng.dropout(cfg, "dropout.dec_at");
    let (lp, segs) = decode_batch(tape, w, memory, &mem_segs, &idx, &all_inputs, d.as_mut())?;
    let mut rows_x = Vec::new();
    let mut rows_y = Vec::new();
    let mut weights = Vec::new();
    for (k, &n) in n_primes.iter().enumerate() {
        rows_x.extend(segs[k].0..segs[k].0 + n);
        rows_y.extend(segs[b + k].0..segs[b + k].0 + n);
        weights.extend(std::iter::repeat_n(1.0 / (2.0 * n as f64 * b as f64), n));
    }
    let px = tape.embedding_lookup(lp, &rows_x)?;
    let py = tape.embedding_lookup(lp, &rows_y)?;
    agreement::agreement_kl_weighted(tape, px, py, &weights)
}

/// Averaging matrix `[B, T]` that mean-pools each block of a packed state matrix.
fn pooling(segs: &[(usize, usize)], rows: usize, include_tag: bool) -> Result<Tensor> {
    let mut a = vec![0.0; segs.len() * rows];
    for (i, &(s, l)) in segs.iter().enumerate() {
        let skip = usize::from(!include_tag && l > 1);
        for r in s + skip..s + l {
            a[i * rows + r] = 1.0 / (l - skip) as f64;
        }
    }
    Tensor::matrix(segs.len(), rows, a)
}

fn pooled(tape: &mut Tape, states: Var, segs: &[(usize, usize)], include_tag: bool) -> Result<Var> {
    let rows = tape.value(states).rows();
    let a = tape.constant(pooling(segs, rows, include_tag)?);
    tape.matmul(a, states)
}

/// Mean Euclidean distance between matching rows of two `[B, d]` representation matrices.
pub fn sra_distance(tape: &mut Tape, rx: Var, ry: Var) -> Result<Var> {
    let diff = tape.sub(rx, ry)?;
    let dist = tape.vector_norm(diff)?;
    Ok(tape.mean(dist))
}

/// In-batch InfoNCE over cosine similarities: row `i` of `ry` is the positive
/// for row `i` of `rx`, every other row a negative.
pub fn info_nce(tape: &mut Tape, rx: Var, ry: Var, tau: f64) -> Result<Var> {
    let b = tape.value(rx).rows();
    if b < 2 {
        return Err(Error::InvalidInput("contrastive loss needs at least 2 pairs".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    let nx = tape.vector_norm(rx)?;
    let ny = tape.vector_norm(ry)?;
    let ux = tape.div_col(rx, nx)?;
    let uy = tape.div_col(ry, ny)?;
    let uyt = tape.transpose(uy)?;
    let sim = tape.matmul(ux, uyt)?;
    let sim = tape.scale(sim, 1.0 / tau);
    let ls = tape.log_softmax(sim);
    let diag: Vec<usize> = (0..b).collect();
    let pos = tape.select_per_row(ls, &diag)?;
    let m = tape.mean(pos);
    Ok(tape.neg(m))
}

fn baseline_term(
    tape: &mut Tape,
    w: &Weights,
    enc: &Encodings,
    ce_logprobs: Var,
    batch: &[Pair<'_>],
    which: Objective,
    cfg: &TrainConfig,
    rng: &StepRng,
) -> Result<Var> {
    let (hy, y_segs) = enc.hy.as_ref().expect("target states present");
    let b = batch.len();
    if which == Objective::Cl && b < 2 {
        return Err(Error::InvalidInput("contrastive loss needs at least 2 pairs".into()));
    }
    match which {
        Objective::Sra => {
            let rx = pooled(tape, enc.hx, &enc.x_segs, cfg.include_tag_position)?;
            let ry = pooled(tape, *hy, y_segs, cfg.include_tag_position)?;
            let d = sra_distance(tape, rx, ry)?;
            Ok(tape.scale(d, cfg.sra_gamma))
        }
        Objective::Sf => {
            let pairs: Vec<Vec<usize>> = batch
                .iter()
                .map(|(_, y)| teacher_forcing_pair(y.language, y.content()).0)
                .collect();
            let inputs: Vec<&[usize]> = pairs.iter().map(Vec::as_slice).collect();
            let idx: Vec<usize> = (0..b).collect();
            let mut d = rng.dropout(cfg, "dropout.dec_sf");
            let (teacher, segs) = decode_batch(tape, w, *hy, y_segs, &idx, &inputs, d.as_mut())?;
            let teacher = tape.stop_gradient(teacher);
            let lf = PROB_FLOOR.ln();
            let p = tape.exp(ce_logprobs);
            let ls = tape.clamp_min(ce_logprobs, lf);
            let lt = tape.clamp_min(teacher, lf);
            let diff = tape.sub(ls, lt)?;
            let prod = tape.mul(p, diff)?;
            let rows: usize = segs.iter().map(|s| s.1).sum();
            let wv = tape.constant(Tensor::vector(vec![1.0 / b as f64; rows])?);
            let weighted = tape.mul_col(prod, wv)?;
            let s = tape.sum(weighted);
            Ok(tape.scale(s, cfg.sf_gamma))
        }
        Objective::Cl => {
            let rx = pooled(tape, enc.hx, &enc.x_segs, cfg.include_tag_position)?;
            let ry = pooled(tape, *hy, y_segs, cfg.include_tag_position)?;
            let l = info_nce(tape, rx, ry, cfg.cl_tau)?;
            Ok(tape.scale(l, cfg.cl_gamma))
        }
        _ => unreachable!("not a baseline objective"),
    }
}

/// Builds the loss graph of `objective` for one batch.
///
/// For the CE/OT/AT family this is `ce + gamma1 * avg_src_len * ot + gamma2 * at`,
/// with one encoder pass per side shared by both extra terms. Baselines add their
/// own weighted regulariser to CE.
pub fn objective_loss(
    tape: &mut Tape,
    w: &Weights,
    batch: &[Pair<'_>],
    cfg: &TrainConfig,
    objective: Objective,
    rng: &StepRng,
    target: TargetStates,
) -> Result<LossGraph> {
    let (use_ot, use_at) = (objective.uses_ot(), objective.uses_at());
    let need_hy = use_ot || use_at || objective.is_baseline();
    let enc = encode_sides(tape, w, batch, cfg, rng, need_hy, target)?;
    let (ce, ce_lp) = ce_term(tape, w, &enc, batch, cfg, rng)?;
    let ot = if use_ot {
        Some(ot_term(tape, &enc, batch, cfg)?)
    } else {
        None
    };
    let at = if use_at {
        Some(at_term(tape, w, &enc, batch, cfg, rng)?)
    } else {
        None
    };
    let aux = if objective.is_baseline() {
        Some(baseline_term(tape, w, &enc, ce_lp, batch, objective, cfg, rng)?)
    } else {
        None
    };
    let (g1, g2) = (
        if use_ot { cfg.gamma1 } else { 0.0 },
        if use_at { cfg.gamma2 } else { 0.0 },
    );
    let mut loss = ce;
    if let Some(ot) = ot {
        let t = tape.scale(ot, g1 * enc.avg_src_len);
        loss = tape.add(loss, t)?;
    }
    if let Some(at) = at {
        let t = tape.scale(at, g2);
        loss = tape.add(loss, t)?;
    }
    if let Some(aux) = aux {
        loss = tape.add(loss, aux)?;
    }
    let val = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item().expect("scalar term"));
    let breakdown = LossBreakdown {
        ce: val(Some(ce)),
        ot: val(ot),
        at: val(at),
        aux: val(aux),
        total: val(Some(loss)),
        avg_src_len: enc.avg_src_len,
    };
    Ok(LossGraph { loss, breakdown })
}

/// Combined CE + OT + AT loss with the configured gammas.
pub fn combined_loss(
    tape: &mut Tape,
    w: &Weights,
    batch: &[Pair<'_>],
    cfg: &TrainConfig,
    rng: &StepRng,
) -> Result<LossGraph> {
    objective_loss(tape, w, batch, cfg, Objective::CeOtAt, rng, TargetStates::Encode)
}

/// CE plus one of the representation-alignment baselines.
pub fn baseline_loss(
    tape: &mut Tape,
    w: &Weights,
    batch: &[Pair<'_>],
    which: Objective,
    cfg: &TrainConfig,
    rng: &StepRng,
) -> Result<LossGraph> {
    if !which.is_baseline() {
        return Err(Error::Config(format!("{which} is not a baseline objective")));
    }
    objective_loss(tape, w, batch, cfg, which, rng, TargetStates::Encode)
}
