//! Finite-difference check of the full model's cross-entropy gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqot::gradcheck;
use seqot::model::{
    decode_batch, encode_batch, teacher_forcing_pair, weighted_nll, ModelConfig, ModelParameters, Weights,
};

fn main() -> seqot::Result<()> {
    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ff: 16,
        vocab_size: 12,
        max_len: 8,
        dropout: 0.0,
    };
    let params = ModelParameters::init(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let src = [1usize, 5, 6, 7];
    let (input, gold) = teacher_forcing_pair(1, &[8, 9]);
    let weights = vec![1.0 / gold.len() as f64; gold.len()];

    let report = gradcheck::check(params.tensors(), 1e-5, |tape, vars| {
        let w = Weights::from_vars(&params, vars.to_vec());
        let enc = encode_batch(tape, &w, &[&src], None)?;
        let (lp, _) = decode_batch(tape, &w, enc.states, &enc.segments, &[0], &[&input], None)?;
        weighted_nll(tape, lp, &gold, &weights)
    })?;
    println!(
        "checked {} entries, max relative error {:.2e}",
        report.checked, report.max_rel_err
    );
    Ok(())
}
