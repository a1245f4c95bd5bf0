//! Mean-pooled sentence representations of one sentence in every language,
//! and how far apart they sit before and after a little training.

use seqot::cli::export_representations;
use seqot::data::{generate_corpus, CorpusSpec, Split};
use seqot::model::{ModelConfig, ModelParameters};
use seqot::rng::stream;
use seqot::train::{self, Objective, TrainConfig};

fn spread(rows: &[(usize, usize, Vec<f64>)]) -> f64 {
    let d = rows[0].2.len();
    let mean: Vec<f64> = (0..d)
        .map(|k| rows.iter().map(|r| r.2[k]).sum::<f64>() / rows.len() as f64)
        .collect();
    rows.iter()
        .map(|r| {
            r.2.iter()
                .zip(&mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / rows.len() as f64
}

fn main() -> seqot::Result<()> {
    let corpus = generate_corpus(&CorpusSpec {
        seed: 2,
        train_per_direction: 300,
        valid_sentences: 10,
        test_sentences: 5,
        ..Default::default()
    })?;
    let cfg = TrainConfig {
        objective: Objective::CeOtAt,
        pretrain_steps: 100,
        total_steps: 300,
        warmup_steps: 50,
        eval_every: 0,
        batch_sentences: 16,
        model: ModelConfig {
            d_model: 32,
            d_ff: 64,
            vocab_size: corpus.registry.vocab_size(),
            max_len: 20,
            ..Default::default()
        },
        ..Default::default()
    };
    let init = ModelParameters::init(cfg.model, &mut stream(0, "init", &[]))?;
    let trained = train::train(&cfg, &corpus)?.params;
    for (name, params) in [("init", &init), ("trained", &trained)] {
        let rows = export_representations(params, &corpus, Split::Test, 1)?;
        println!(
            "{name:>8}: {} rows, mean distance to centroid {:.4}",
            rows.len(),
            spread(&rows)
        );
    }
    Ok(())
}
