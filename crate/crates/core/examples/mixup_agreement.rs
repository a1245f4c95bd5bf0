//! Hard mixup of a sentence pair and the agreement loss between two predictive distributions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqot::agreement::{self, MixupConfig};
use seqot::autodiff::Tensor;

fn main() -> seqot::Result<()> {
    let x = [11, 12, 13, 14, 15, 16];
    let y = [31, 32, 33, 34];
    let (xt, yt, n) = agreement::truncate_pair(&x, &y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = MixupConfig::default();
    for _ in 0..3 {
        let s = agreement::sample_mixup(xt, yt, 1, 2, &cfg, &mut rng)?;
        println!(
            "lambda {:.3}  z {:?}  tag L{}  (n' = {n})",
            s.lambda, s.z, s.language_tag
        );
    }

    let px = Tensor::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1]])?;
    let py = Tensor::from_rows(&[vec![0.6, 0.3, 0.1], vec![0.2, 0.6, 0.2]])?;
    println!("agreement kl = {:.6}", agreement::agreement_kl_probs(&px, &py)?);
    println!("same branch  = {:.6}", agreement::agreement_kl_probs(&px, &px)?);
    Ok(())
}
