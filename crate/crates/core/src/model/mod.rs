//! A small post-norm transformer encoder-decoder shared by every language.
//!
//! Token ids: `0` is the end-of-sentence marker, `1..=M` are language tags and
//! everything above belongs to the languages' token ranges. A source sentence
//! is `[tag(src), tokens...]`; the decoder starts from `[tag(tgt)]`.

pub mod checkpoint;
mod config;
mod forward;
mod params;

pub use config::ModelConfig;
pub use forward::{decode_batch, encode_batch, sinusoid, weighted_nll, Dropout, Encoded, Segments, Weights};
pub use params::{ModelParameters, INIT_STD};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

pub const EOS: usize = 0;

/// Token id of the language tag for language `lang`.
pub fn language_tag(lang: usize) -> usize {
    1 + lang
}

/// Token sequence with its language tag in front.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaggedSentence {
    pub language: usize,
    pub tokens: Vec<usize>,
}

impl TaggedSentence {
    pub fn new(language: usize, content: &[usize]) -> Self {
        let mut tokens = Vec::with_capacity(content.len() + 1);
        tokens.push(language_tag(language));
        tokens.extend_from_slice(content);
        Self { language, tokens }
    }

    /// Tokens after the tag.
    pub fn content(&self) -> &[usize] {
        &self.tokens[1..]
    }
}

/// Encoder states of one sentence, `[tokens.len(), d_model]`.
pub fn encode(params: &ModelParameters, src: &TaggedSentence) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w = Weights::bind(&mut tape, params, false);
    let enc = encode_batch(&mut tape, &w, &[&src.tokens], None)?;
    Ok(tape.value(enc.states).clone())
}

/// Teacher-forced log-probabilities, one row per token of `tgt_prefixed`.
pub fn decode_logprobs(params: &ModelParameters, states: &Tensor, tgt_prefixed: &TaggedSentence) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w = Weights::bind(&mut tape, params, false);
    let mem = tape.constant(states.clone());
    let (lp, _) = decode_batch(
        &mut tape,
        &w,
        mem,
        &[(0, states.rows())],
        &[0],
        &[&tgt_prefixed.tokens],
        None,
    )?;
    Ok(tape.value(lp).clone())
}

/// `-(1/n) sum_k logprobs[k, gold[k]]`.
pub fn cross_entropy_loss(tape: &mut Tape, logprobs: Var, gold: &[usize]) -> Result<Var> {
    let n = tape.value(logprobs).rows();
    if gold.len() != n || tape.value(logprobs).ndim() != 2 {
        return shape_err(
            "cross_entropy",
            format!("{} gold tokens for {:?}", gold.len(), tape.value(logprobs).shape()),
        );
    }
    weighted_nll(tape, logprobs, gold, &vec![1.0 / n as f64; n])
}

/// Decoder input `[tag(lang), content...]` and its gold sequence `[content..., EOS]`.
pub fn teacher_forcing_pair(lang: usize, content: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let input = TaggedSentence::new(lang, content).tokens;
    let mut gold = content.to_vec();
    gold.push(EOS);
    (input, gold)
}

/// Greedy decoding of one source sentence into `target_lang`.
pub fn greedy_decode(
    params: &ModelParameters,
    src: &TaggedSentence,
    target_lang: usize,
    max_steps: usize,
) -> Result<Vec<usize>> {
    Ok(greedy_decode_batch(params, &[src], target_lang, max_steps)?.remove(0))
}

/// Greedy decoding of many sources into one target language.
///
/// Each output stops at the end marker (not included) or after `max_steps` tokens.
pub fn greedy_decode_batch(
    params: &ModelParameters,
    srcs: &[&TaggedSentence],
    target_lang: usize,
    max_steps: usize,
) -> Result<Vec<Vec<usize>>> {
    if srcs.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = *params.config();
    if language_tag(target_lang) >= cfg.vocab_size {
        return Err(Error::InvalidInput(format!("unknown target language {target_lang}")));
    }
    let steps = max_steps.min(cfg.max_len - 1);
    let (memory, segments) = {
        let mut tape = Tape::new();
        let w = Weights::bind(&mut tape, params, false);
        let seqs: Vec<&[usize]> = srcs.iter().map(|s| s.tokens.as_slice()).collect();
        let enc = encode_batch(&mut tape, &w, &seqs, None)?;
        (tape.value(enc.states).clone(), enc.segments)
    };
    let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); srcs.len()];
    let mut active: Vec<usize> = (0..srcs.len()).collect();
    for _ in 0..steps {
        if active.is_empty() {
            break;
        }
        let mut tape = Tape::new();
        let w = Weights::bind(&mut tape, params, false);
        let mem = tape.constant(memory.clone());
        let inputs: Vec<Vec<usize>> = active
            .iter()
            .map(|&i| TaggedSentence::new(target_lang, &outputs[i]).tokens)
            .collect();
        let refs: Vec<&[usize]> = inputs.iter().map(Vec::as_slice).collect();
        let (lp, segs) = decode_batch(&mut tape, &w, mem, &segments, &active, &refs, None)?;
        let lpv = tape.value(lp);
        let mut still = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            let (start, len) = segs[k];
            let row = lpv.row(start + len - 1);
            let mut best = 0;
            for (t, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = t;
                }
            }
            if best != EOS {
                outputs[i].push(best);
                still.push(i);
            }
        }
        active = still;
    }
    Ok(outputs)
}

/// Mean of the encoder states of one sentence.
pub fn sentence_representation(params: &ModelParameters, src: &TaggedSentence) -> Result<Vec<f64>> {
    Ok(encode(params, src)?.mean_rows())
}
