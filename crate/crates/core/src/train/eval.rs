//! Greedy-decoding evaluation over every direction of a split.

use serde::{Deserialize, Serialize};

use crate::data::metrics::{corpus_bleu, off_target_rate, pairwise_consistency, token_accuracy};
use crate::data::{DirectionKind, ParallelCorpus, Split};
use crate::error::{Error, Result};
use crate::model::{greedy_decode_batch, ModelParameters, TaggedSentence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub src: usize,
    pub tgt: usize,
    pub kind: DirectionKind,
    pub accuracy: f64,
    pub off_target_rate: f64,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub sentences: usize,
    pub directions: Vec<DirectionMetrics>,
    pub zero_shot_accuracy: f64,
    pub supervised_accuracy: f64,
    /// Off-target rate pooled over zero-shot directions.
    pub zero_shot_off_target: f64,
    /// Mean pairwise BLEU between zero-shot outputs for the same sentence from
    /// different sources; `None` when no target has two zero-shot sources.
    pub consistency: Option<f64>,
}

impl EvalReport {
    pub fn direction(&self, src: usize, tgt: usize) -> Option<&DirectionMetrics> {
        self.directions.iter().find(|d| d.src == src && d.tgt == tgt)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Decodes the first `max_sentences` (0 = all) pairs of each direction of `split`.
pub fn evaluate(
    params: &ModelParameters,
    corpus: &ParallelCorpus,
    split: Split,
    max_sentences: usize,
) -> Result<EvalReport> {
    let max_steps = corpus.spec.max_len + 2;
    evaluate_with(corpus, split, max_sentences, |srcs, tgt| {
        greedy_decode_batch(params, srcs, tgt, max_steps)
    })
}

/// [`evaluate`] with any translator: `translate(sources, target_language)` returns one output per source.
pub fn evaluate_with<F>(
    corpus: &ParallelCorpus,
    split: Split,
    max_sentences: usize,
    mut translate: F,
) -> Result<EvalReport>
where
    F: FnMut(&[&TaggedSentence], usize) -> Result<Vec<Vec<usize>>>,
{
    if split == Split::Train {
        return Err(Error::InvalidInput("evaluation needs the valid or test split".into()));
    }
    let reg = &corpus.registry;
    let mut directions = Vec::new();
    let mut outputs = Vec::new();
    let mut sentences = 0;
    for set in corpus.sets(split) {
        let n = if max_sentences == 0 {
            set.pairs.len()
        } else {
            max_sentences.min(set.pairs.len())
        };
        if n == 0 {
            return Err(Error::InvalidInput(format!("no {} sentences", split.name())));
        }
        sentences = n;
        let pairs = &set.pairs[..n];
        let srcs: Vec<_> = pairs.iter().map(|(s, _)| s).collect();
        let refs: Vec<Vec<usize>> = pairs.iter().map(|(_, t)| t.content().to_vec()).collect();
        let hyps = translate(&srcs, set.direction.tgt)?;
        if hyps.len() != srcs.len() {
            return Err(Error::InvalidInput(format!(
                "{} outputs for {} sources",
                hyps.len(),
                srcs.len()
            )));
        }
        directions.push(DirectionMetrics {
            src: set.direction.src,
            tgt: set.direction.tgt,
            kind: set.direction.kind,
            accuracy: token_accuracy(&hyps, &refs)?,
            off_target_rate: off_target_rate(&hyps, set.direction.tgt, reg)?,
            bleu: corpus_bleu(&hyps, &refs)?,
        });
        outputs.push(hyps);
    }
    let of_kind = |k: DirectionKind| directions.iter().filter(move |d| d.kind == k);
    let zero_shot_accuracy = mean(of_kind(DirectionKind::ZeroShot).map(|d| d.accuracy));
    let supervised_accuracy = mean(of_kind(DirectionKind::Supervised).map(|d| d.accuracy));
    // every zero-shot direction holds the same number of sentences, so the pooled rate is the mean
    let zero_shot_off_target = mean(of_kind(DirectionKind::ZeroShot).map(|d| d.off_target_rate));

    let pivot = corpus.spec.pivot;
    let mut scores = Vec::new();
    for tgt in (0..reg.n_languages()).filter(|&l| l != pivot) {
        let srcs: Vec<usize> = directions
            .iter()
            .enumerate()
            .filter(|(_, d)| d.tgt == tgt && d.kind == DirectionKind::ZeroShot)
            .map(|(i, _)| i)
            .collect();
        for (a, &i) in srcs.iter().enumerate() {
            for &j in &srcs[a + 1..] {
                scores.push(pairwise_consistency(&outputs[i], &outputs[j])?);
            }
        }
    }
    Ok(EvalReport {
        split,
        sentences,
        directions,
        zero_shot_accuracy,
        supervised_accuracy,
        zero_shot_off_target,
        consistency: (!scores.is_empty()).then(|| mean(scores.into_iter())),
    })
}
