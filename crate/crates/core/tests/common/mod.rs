#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqot::data::{generate_corpus, CorpusSpec, ParallelCorpus};
use seqot::model::{ModelConfig, ModelParameters, TaggedSentence};
use seqot::train::TrainConfig;

pub fn small_corpus(seed: u64) -> ParallelCorpus {
    generate_corpus(&CorpusSpec {
        seed,
        train_per_direction: 40,
        valid_sentences: 6,
        test_sentences: 6,
        min_len: 2,
        max_len: 6,
        concept_vocab: 8,
        ..Default::default()
    })
    .unwrap()
}

pub fn tiny_model(vocab: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        d_ff: 32,
        vocab_size: vocab,
        max_len: 10,
        dropout: 0.0,
    }
}

pub fn tiny_train_config(corpus: &ParallelCorpus) -> TrainConfig {
    TrainConfig {
        pretrain_steps: 4,
        total_steps: 10,
        warmup_steps: 4,
        batch_sentences: 4,
        eval_every: 5,
        eval_sentences: 3,
        model: ModelConfig {
            dropout: 0.1,
            ..tiny_model(corpus.registry.vocab_size())
        },
        ..Default::default()
    }
}

pub fn params(cfg: ModelConfig, seed: u64) -> ModelParameters {
    ModelParameters::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// `n` training pairs starting at `offset`, as owned sentences.
pub fn pairs(corpus: &ParallelCorpus, offset: usize, n: usize) -> Vec<(TaggedSentence, TaggedSentence)> {
    let all = corpus.train_pairs();
    (0..n).map(|i| all[(offset + 7 * i) % all.len()].clone()).collect()
}
