use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::LanguageRegistry;
use crate::error::{Error, Result};
use crate::model::TaggedSentence;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    Supervised,
    ZeroShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction {
    pub src: usize,
    pub tgt: usize,
    pub kind: DirectionKind,
}

/// Aligned sentence pairs of one direction in one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionSet {
    pub direction: Direction,
    pub split: Split,
    pub pairs: Vec<(TaggedSentence, TaggedSentence)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_languages: usize,
    pub pivot: usize,
    pub train_per_direction: usize,
    pub valid_sentences: usize,
    pub test_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub concept_vocab: usize,
    pub zipf_exponent: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_languages: 4,
            pivot: 0,
            train_per_direction: 2000,
            valid_sentences: 100,
            test_sentences: 200,
            min_len: 4,
            max_len: 16,
            concept_vocab: 64,
            zipf_exponent: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub spec: CorpusSpec,
    pub registry: LanguageRegistry,
    pub sets: Vec<DirectionSet>,
}

impl ParallelCorpus {
    pub fn sets(&self, split: Split) -> impl Iterator<Item = &DirectionSet> {
        self.sets.iter().filter(move |s| s.split == split)
    }

    pub fn get(&self, split: Split, src: usize, tgt: usize) -> Option<&DirectionSet> {
        self.sets
            .iter()
            .find(|s| s.split == split && s.direction.src == src && s.direction.tgt == tgt)
    }

    pub fn directions(&self, kind: DirectionKind) -> Vec<Direction> {
        let mut d: Vec<Direction> = self
            .sets(Split::Test)
            .map(|s| s.direction)
            .filter(|d| d.kind == kind)
            .collect();
        d.dedup();
        d
    }

    /// All training pairs, in a fixed order.
    pub fn train_pairs(&self) -> Vec<&(TaggedSentence, TaggedSentence)> {
        self.sets(Split::Train).flat_map(|s| s.pairs.iter()).collect()
    }
}

/// Every ordered pair of distinct languages, split by whether it touches the pivot.
pub fn directions(n_languages: usize, pivot: usize) -> Vec<Direction> {
    let mut out = Vec::new();
    for src in 0..n_languages {
        for tgt in 0..n_languages {
            if src == tgt {
                continue;
            }
            let kind = if src == pivot || tgt == pivot {
                DirectionKind::Supervised
            } else {
                DirectionKind::ZeroShot
            };
            out.push(Direction { src, tgt, kind });
        }
    }
    out
}

fn concept_sequence(rng: &mut ChaCha8Rng, spec: &CorpusSpec, zipf: &Zipf<f64>) -> Vec<usize> {
    let len = rng.gen_range(spec.min_len..=spec.max_len);
    (0..len).map(|_| zipf.sample(rng) as usize - 1).collect()
}

/// Generates cipher-language data for a pivot-centred star of supervised directions.
///
/// Training data exists only for directions touching the pivot. Validation and
/// test sets cover every direction and are rendered from one shared pool of
/// concept sequences per split, so outputs for the same sentence can be compared
/// across source languages.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<ParallelCorpus> {
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::InvalidInput(format!(
            "bad length range {}..={}",
            spec.min_len, spec.max_len
        )));
    }
    let registry = LanguageRegistry::new(
        spec.n_languages,
        spec.concept_vocab,
        spec.pivot,
        &mut stream(spec.seed, "registry", &[]),
    )?;
    let zipf =
        Zipf::new(spec.concept_vocab as u64, spec.zipf_exponent).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let dirs = directions(spec.n_languages, spec.pivot);
    let mut sets = Vec::new();
    for (di, d) in dirs.iter().enumerate() {
        if d.kind != DirectionKind::Supervised {
            continue;
        }
        let mut rng = stream(spec.seed, "train", &[di as u64]);
        let pairs = (0..spec.train_per_direction)
            .map(|_| {
                let c = concept_sequence(&mut rng, spec, &zipf);
                render_pair(&registry, *d, &c)
            })
            .collect();
        sets.push(DirectionSet {
            direction: *d,
            split: Split::Train,
            pairs,
        });
    }
    for (split, n) in [(Split::Valid, spec.valid_sentences), (Split::Test, spec.test_sentences)] {
        let mut rng = stream(spec.seed, split.name(), &[]);
        let pool: Vec<Vec<usize>> = (0..n).map(|_| concept_sequence(&mut rng, spec, &zipf)).collect();
        for d in &dirs {
            sets.push(DirectionSet {
                direction: *d,
                split,
                pairs: pool.iter().map(|c| render_pair(&registry, *d, c)).collect(),
            });
        }
    }
    Ok(ParallelCorpus {
        spec: *spec,
        registry,
        sets,
    })
}

fn render_pair(reg: &LanguageRegistry, d: Direction, concepts: &[usize]) -> (TaggedSentence, TaggedSentence) {
    (
        TaggedSentence::new(d.src, &reg.render(d.src, concepts)),
        TaggedSentence::new(d.tgt, &reg.render(d.tgt, concepts)),
    )
}
