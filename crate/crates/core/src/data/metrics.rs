use std::collections::HashMap;

use super::LanguageRegistry;
use crate::error::{Error, Result};

/// True if most tokens of `output` lie outside the language's range.
/// An empty output counts as off-target.
pub fn is_off_target(output: &[usize], intended: usize, registry: &LanguageRegistry) -> bool {
    let range = registry.token_range(intended);
    let outside = output.iter().filter(|t| !range.contains(t)).count();
    output.is_empty() || 2 * outside > output.len()
}

/// Fraction of outputs that are off-target.
pub fn off_target_rate(outputs: &[Vec<usize>], intended: usize, registry: &LanguageRegistry) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::InvalidInput("off-target rate of an empty output list".into()));
    }
    let off = outputs.iter().filter(|o| is_off_target(o, intended, registry)).count();
    Ok(off as f64 / outputs.len() as f64)
}

/// `(matching positions, max(len(hyp), len(ref)))` for one sentence.
pub fn token_matches(hyp: &[usize], reference: &[usize]) -> (usize, usize) {
    let hits = hyp.iter().zip(reference).filter(|(a, b)| a == b).count();
    (hits, hyp.len().max(reference.len()))
}

/// Corpus token accuracy from summed matches over summed lengths.
pub fn token_accuracy(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidInput(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let (hits, total) = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| token_matches(h, r))
        .fold((0, 0), |(a, b), (h, t)| (a + h, b + t));
    Ok(if total == 0 { 1.0 } else { hits as f64 / total as f64 })
}

pub const BLEU_ORDER: usize = 4;

fn ngrams(s: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 on a 0-100 scale with add-one smoothing of every n-gram precision.
pub fn corpus_bleu(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidInput(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut matched = [0usize; BLEU_ORDER];
    let mut totals = [0usize; BLEU_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=BLEU_ORDER {
            let rc = ngrams(r, n);
            for (g, c) in ngrams(h, n) {
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let log_p: f64 = (0..BLEU_ORDER)
        .map(|i| ((matched[i] + 1) as f64 / (totals[i] + 1) as f64).ln())
        .sum::<f64>()
        / BLEU_ORDER as f64;
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * log_p.exp())
}

/// BLEU between two systems' outputs, averaged over both reference assignments.
pub fn pairwise_consistency(a: &[Vec<usize>], b: &[Vec<usize>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("{} vs {} translations", a.len(), b.len())));
    }
    Ok(0.5 * (corpus_bleu(a, b)? + corpus_bleu(b, a)?))
}
