//! Packed forward passes: many sentences share one matrix of rows, and attention
//! is restricted to each sentence's own block.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelParameters};
use crate::autodiff::{AttnSegment, Tape, Tensor, Var};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: Var,
    b: Var,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: Var,
    b: Var,
}

#[derive(Debug, Clone, Copy)]
struct EncLayer {
    attn: Attn,
    ln1: Norm,
    ff1: Linear,
    ff2: Linear,
    ln2: Norm,
}

#[derive(Debug, Clone, Copy)]
struct DecLayer {
    attn: Attn,
    ln1: Norm,
    cross: Attn,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
    ln3: Norm,
}

/// Model parameters placed on a tape.
pub struct Weights {
    vars: Vec<Var>,
    cfg: ModelConfig,
    embed: Var,
    enc: Vec<EncLayer>,
    dec: Vec<DecLayer>,
    out: Linear,
}

struct Cursor<'a> {
    names: &'a [String],
    vars: &'a [Var],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, name: &str) -> Var {
        debug_assert_eq!(self.names[self.pos], name);
        self.pos += 1;
        self.vars[self.pos - 1]
    }

    fn linear(&mut self, p: &str) -> Linear {
        Linear {
            w: self.take(&format!("{p}.w")),
            b: self.take(&format!("{p}.b")),
        }
    }

    fn attn(&mut self, p: &str) -> Attn {
        Attn {
            q: self.linear(&format!("{p}.q")),
            k: self.linear(&format!("{p}.k")),
            v: self.linear(&format!("{p}.v")),
            o: self.linear(&format!("{p}.o")),
        }
    }

    fn norm(&mut self, p: &str) -> Norm {
        Norm {
            g: self.take(&format!("{p}.g")),
            b: self.take(&format!("{p}.b")),
        }
    }
}

impl Weights {
    /// Puts every parameter on `tape`, as gradient-tracked leaves when `trainable`.
    pub fn bind(tape: &mut Tape, params: &ModelParameters, trainable: bool) -> Self {
        let vars: Vec<Var> = params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self::from_vars(params, vars)
    }

    /// Wraps vars already on a tape, one per parameter tensor in storage order.
    pub fn from_vars(params: &ModelParameters, vars: Vec<Var>) -> Self {
        assert_eq!(vars.len(), params.len(), "one var per parameter tensor");
        let cfg = *params.config();
        let mut c = Cursor {
            names: params.names(),
            vars: &vars,
            pos: 0,
        };
        let embed = c.take("embed");
        let enc = (0..cfg.n_layers)
            .map(|l| EncLayer {
                attn: c.attn(&format!("enc.{l}.self")),
                ln1: c.norm(&format!("enc.{l}.ln1")),
                ff1: c.linear(&format!("enc.{l}.ff1")),
                ff2: c.linear(&format!("enc.{l}.ff2")),
                ln2: c.norm(&format!("enc.{l}.ln2")),
            })
            .collect();
        let dec = (0..cfg.n_layers)
            .map(|l| DecLayer {
                attn: c.attn(&format!("dec.{l}.self")),
                ln1: c.norm(&format!("dec.{l}.ln1")),
                cross: c.attn(&format!("dec.{l}.cross")),
                ln2: c.norm(&format!("dec.{l}.ln2")),
                ff1: c.linear(&format!("dec.{l}.ff1")),
                ff2: c.linear(&format!("dec.{l}.ff2")),
                ln3: c.norm(&format!("dec.{l}.ln3")),
            })
            .collect();
        let out = c.linear("out");
        Self {
            vars,
            cfg,
            embed,
            enc,
            dec,
            out,
        }
    }

    /// Parameter vars in storage order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Vars of encoder-side parameters (shared embedding included).
    pub fn encoder_vars(&self, params: &ModelParameters) -> Vec<Var> {
        params
            .names()
            .iter()
            .zip(&self.vars)
            .filter(|(n, _)| *n == "embed" || n.starts_with("enc."))
            .map(|(_, v)| *v)
            .collect()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }
}

/// Inverted dropout driven by its own random stream.
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Self { rate, rng }
    }

    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.rate == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - self.rate);
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let m = tape.constant(Tensor::new(&shape, mask).expect("mask matches shape"));
        tape.mul(x, m).expect("mask matches shape")
    }
}

fn drop(tape: &mut Tape, x: Var, d: &mut Option<&mut Dropout>) -> Var {
    match d {
        Some(d) => d.apply(tape, x),
        None => x,
    }
}

/// Row ranges `(start, len)` of each sentence inside a packed matrix.
pub type Segments = Vec<(usize, usize)>;

fn pack(cfg: &ModelConfig, seqs: &[&[usize]]) -> Result<(Vec<usize>, Vec<usize>, Segments)> {
    if seqs.is_empty() {
        return shape_err("pack", "empty batch");
    }
    let mut ids = Vec::new();
    let mut positions = Vec::new();
    let mut segs = Vec::with_capacity(seqs.len());
    for s in seqs {
        if s.is_empty() || s.len() > cfg.max_len {
            return shape_err(
                "pack",
                format!("sequence length {} outside 1..={}", s.len(), cfg.max_len),
            );
        }
        if let Some(&bad) = s.iter().find(|&&t| t >= cfg.vocab_size) {
            return shape_err("pack", format!("token {bad} outside vocabulary of {}", cfg.vocab_size));
        }
        segs.push((ids.len(), s.len()));
        ids.extend_from_slice(s);
        positions.extend(0..s.len());
    }
    Ok((ids, positions, segs))
}

/// `pe[p, 2i] = sin(p / 10000^(2i/d))`, `pe[p, 2i+1] = cos(...)`.
pub fn sinusoid(position: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let i = (j / 2) as f64;
            let angle = position as f64 / 10000f64.powf(2.0 * i / d as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

fn embed(tape: &mut Tape, w: &Weights, ids: &[usize], positions: &[usize]) -> Result<Var> {
    let d = w.cfg.d_model;
    let e = tape.embedding_lookup(w.embed, ids)?;
    let e = tape.scale(e, (d as f64).sqrt());
    let table: Vec<Vec<f64>> = (0..positions.iter().max().map_or(0, |m| m + 1))
        .map(|p| sinusoid(p, d))
        .collect();
    let mut pe = Vec::with_capacity(ids.len() * d);
    for &p in positions {
        pe.extend_from_slice(&table[p]);
    }
    let pe = tape.constant(Tensor::matrix(ids.len(), d, pe)?);
    tape.add(e, pe)
}

fn linear(tape: &mut Tape, l: Linear, x: Var) -> Result<Var> {
    let y = tape.matmul(x, l.w)?;
    tape.add_row(y, l.b)
}

fn attend(
    tape: &mut Tape,
    a: Attn,
    heads: usize,
    xq: Var,
    xkv: Var,
    segs: &[AttnSegment],
    causal: bool,
) -> Result<Var> {
    let q = linear(tape, a.q, xq)?;
    let k = linear(tape, a.k, xkv)?;
    let v = linear(tape, a.v, xkv)?;
    let o = tape.attention(q, k, v, heads, segs, causal)?;
    linear(tape, a.o, o)
}

fn residual_norm(tape: &mut Tape, n: Norm, x: Var, sub: Var) -> Result<Var> {
    let s = tape.add(x, sub)?;
    tape.layer_norm(s, n.g, n.b)
}

fn feed_forward(tape: &mut Tape, ff1: Linear, ff2: Linear, x: Var) -> Result<Var> {
    let h = linear(tape, ff1, x)?;
    let h = tape.gelu(h);
    linear(tape, ff2, h)
}

/// Encoder output for a packed batch.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[total rows, d_model]`.
    pub states: Var,
    pub segments: Segments,
}

impl Encoded {
    /// States of sentence `i` as a separate `[len, d]` node.
    pub fn sentence(&self, tape: &mut Tape, i: usize) -> Result<Var> {
        let (start, len) = self.segments[i];
        tape.slice(self.states, 0, start, len)
    }
}

/// Encodes tagged source sentences; row `k` of each block is position `k`.
pub fn encode_batch(
    tape: &mut Tape,
    w: &Weights,
    seqs: &[&[usize]],
    mut dropout: Option<&mut Dropout>,
) -> Result<Encoded> {
    let (ids, positions, segs) = pack(&w.cfg, seqs)?;
    let attn_segs: Vec<AttnSegment> = segs
        .iter()
        .map(|&(s, l)| AttnSegment {
            q_start: s,
            q_len: l,
            k_start: s,
            k_len: l,
        })
        .collect();
    let mut x = embed(tape, w, &ids, &positions)?;
    x = drop(tape, x, &mut dropout);
    for layer in &w.enc {
        let a = attend(tape, layer.attn, w.cfg.n_heads, x, x, &attn_segs, false)?;
        let a = drop(tape, a, &mut dropout);
        x = residual_norm(tape, layer.ln1, x, a)?;
        let f = feed_forward(tape, layer.ff1, layer.ff2, x)?;
        let f = drop(tape, f, &mut dropout);
        x = residual_norm(tape, layer.ln2, x, f)?;
    }
    Ok(Encoded {
        states: x,
        segments: segs,
    })
}

/// Teacher-forced decoder over packed inputs.
///
/// `inputs[i]` starts with the target language tag and attends to memory
/// block `memory_index[i]`. Returns `[total rows, vocab]` log-probabilities and
/// the row blocks; row `k` of a block predicts input token `k + 1` (or the end
/// marker after the last token).
pub fn decode_batch(
    tape: &mut Tape,
    w: &Weights,
    memory: Var,
    memory_segments: &[(usize, usize)],
    memory_index: &[usize],
    inputs: &[&[usize]],
    mut dropout: Option<&mut Dropout>,
) -> Result<(Var, Segments)> {
    if memory_index.len() != inputs.len() || memory_index.iter().any(|&i| i >= memory_segments.len()) {
        return shape_err(
            "decode",
            format!("{} inputs for {} memory indices", inputs.len(), memory_index.len()),
        );
    }
    let (ids, positions, segs) = pack(&w.cfg, inputs)?;
    let self_segs: Vec<AttnSegment> = segs
        .iter()
        .map(|&(s, l)| AttnSegment {
            q_start: s,
            q_len: l,
            k_start: s,
            k_len: l,
        })
        .collect();
    let cross_segs: Vec<AttnSegment> = segs
        .iter()
        .zip(memory_index)
        .map(|(&(s, l), &m)| AttnSegment {
            q_start: s,
            q_len: l,
            k_start: memory_segments[m].0,
            k_len: memory_segments[m].1,
        })
        .collect();
    let mut x = embed(tape, w, &ids, &positions)?;
    x = drop(tape, x, &mut dropout);
    for layer in &w.dec {
        let a = attend(tape, layer.attn, w.cfg.n_heads, x, x, &self_segs, true)?;
        let a = drop(tape, a, &mut dropout);
        x = residual_norm(tape, layer.ln1, x, a)?;
        let c = attend(tape, layer.cross, w.cfg.n_heads, x, memory, &cross_segs, false)?;
        let c = drop(tape, c, &mut dropout);
        x = residual_norm(tape, layer.ln2, x, c)?;
        let f = feed_forward(tape, layer.ff1, layer.ff2, x)?;
        let f = drop(tape, f, &mut dropout);
        x = residual_norm(tape, layer.ln3, x, f)?;
    }
    let logits = linear(tape, w.out, x)?;
    Ok((tape.log_softmax(logits), segs))
}

/// `-sum_k weights[k] * logprobs[k, gold[k]]`.
pub fn weighted_nll(tape: &mut Tape, logprobs: Var, gold: &[usize], weights: &[f64]) -> Result<Var> {
    if gold.len() != weights.len() {
        return shape_err(
            "weighted_nll",
            format!("{} gold tokens, {} weights", gold.len(), weights.len()),
        );
    }
    let picked = tape.select_per_row(logprobs, gold)?;
    let w = tape.constant(Tensor::vector(weights.to_vec())?);
    let s = tape.mul(picked, w)?;
    let s = tape.sum(s);
    Ok(tape.neg(s))
}
