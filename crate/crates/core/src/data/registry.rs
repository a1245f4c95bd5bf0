use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EOS;

/// Cipher languages: each one renders concept `c` as its own token `perm[c]`.
///
/// Layout of the shared vocabulary: the end marker, then `M` language tags,
/// then `M` disjoint blocks of `concept_vocab` tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageRegistry {
    n_languages: usize,
    concept_vocab: usize,
    pivot: usize,
    /// `perms[lang][concept]` is the token offset inside the language block.
    perms: Vec<Vec<usize>>,
}

impl LanguageRegistry {
    pub fn new<R: Rng + ?Sized>(n_languages: usize, concept_vocab: usize, pivot: usize, rng: &mut R) -> Result<Self> {
        if n_languages < 3 {
            return Err(Error::InvalidInput(format!(
                "need at least 3 languages for a zero-shot pair, got {n_languages}"
            )));
        }
        if concept_vocab == 0 {
            return Err(Error::InvalidInput("concept vocabulary must be non-empty".into()));
        }
        if pivot >= n_languages {
            return Err(Error::InvalidInput(format!(
                "pivot {pivot} is not one of {n_languages} languages"
            )));
        }
        let perms = (0..n_languages)
            .map(|_| {
                let mut p: Vec<usize> = (0..concept_vocab).collect();
                p.shuffle(rng);
                p
            })
            .collect();
        Ok(Self {
            n_languages,
            concept_vocab,
            pivot,
            perms,
        })
    }

    pub fn n_languages(&self) -> usize {
        self.n_languages
    }

    pub fn concept_vocab(&self) -> usize {
        self.concept_vocab
    }

    pub fn pivot(&self) -> usize {
        self.pivot
    }

    pub fn vocab_size(&self) -> usize {
        1 + self.n_languages * (1 + self.concept_vocab)
    }

    pub fn token_range(&self, lang: usize) -> Range<usize> {
        let start = 1 + self.n_languages + lang * self.concept_vocab;
        start..start + self.concept_vocab
    }

    /// Language whose block contains `token`, if any.
    pub fn language_of(&self, token: usize) -> Option<usize> {
        let base = 1 + self.n_languages;
        if token < base || token >= self.vocab_size() {
            return None;
        }
        Some((token - base) / self.concept_vocab)
    }

    pub fn render(&self, lang: usize, concepts: &[usize]) -> Vec<usize> {
        let start = self.token_range(lang).start;
        concepts.iter().map(|&c| start + self.perms[lang][c]).collect()
    }

    /// Inverse of [`render`](Self::render); `None` if a token is outside the language.
    pub fn read(&self, lang: usize, tokens: &[usize]) -> Option<Vec<usize>> {
        let range = self.token_range(lang);
        tokens
            .iter()
            .map(|&t| {
                if !range.contains(&t) {
                    return None;
                }
                self.perms[lang].iter().position(|&o| o == t - range.start)
            })
            .collect()
    }

    /// Word-by-word translation of a well-formed sentence.
    pub fn translate(&self, src_lang: usize, tgt_lang: usize, tokens: &[usize]) -> Option<Vec<usize>> {
        self.read(src_lang, tokens).map(|c| self.render(tgt_lang, &c))
    }

    pub fn name(&self, lang: usize) -> String {
        format!("L{lang}")
    }

    /// Parses `L<k>` (or a bare index) into a language id.
    pub fn parse_name(&self, name: &str) -> Result<usize> {
        let digits = name.strip_prefix('L').unwrap_or(name);
        let id: usize = digits
            .parse()
            .map_err(|_| Error::Parse(format!("bad language name {name:?}")))?;
        if id >= self.n_languages {
            return Err(Error::InvalidInput(format!("language {name} is not registered")));
        }
        Ok(id)
    }

    /// True for the end marker and language tags.
    pub fn is_special(&self, token: usize) -> bool {
        token == EOS || token <= self.n_languages
    }
}
