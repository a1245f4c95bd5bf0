//! Short CE-only vs CE+OT+AT comparison on a small corpus, sharing the pretraining phase.
//!
//! Pass a step count to train longer: `cargo run --release --example train_zero_shot -- 3000`.

use seqot::data::{generate_corpus, CorpusSpec};
use seqot::model::ModelConfig;
use seqot::train::{self, Objective, TrainConfig};

fn main() -> seqot::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let corpus = generate_corpus(&CorpusSpec {
        seed: 1,
        train_per_direction: 500,
        valid_sentences: 30,
        test_sentences: 50,
        ..Default::default()
    })?;
    let base = TrainConfig {
        pretrain_steps: steps / 3,
        total_steps: steps,
        warmup_steps: 100,
        eval_every: steps / 3,
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
    let shared = train::pretrain(&base, &corpus, &mut |_| {})?;
    for objective in [Objective::CeOnly, Objective::CeOtAt] {
        let cfg = TrainConfig {
            objective,
            ..base.clone()
        };
        let out = train::finish(shared.clone(), &cfg, &corpus, &mut |r| {
            println!(
                "{objective:>9} step {:>5}  zero-shot {:.3}  supervised {:.3}  ot {:.4}  at {:.4}",
                r.step, r.eval.zero_shot_accuracy, r.eval.supervised_accuracy, r.probe.ot, r.probe.at
            )
        })?;
        println!(
            "{objective:>9} test: zero-shot {:.3}  supervised {:.3}  off-target {:.3}",
            out.test.zero_shot_accuracy, out.test.supervised_accuracy, out.test.zero_shot_off_target
        );
    }
    Ok(())
}
