//! Symmetric state mover's distance between two state sequences, with gradients.

use seqot::autodiff::{Tape, Tensor};
use seqot::smd;

fn main() -> seqot::Result<()> {
    let hx = Tensor::from_rows(&[vec![1.0, 0.0, 0.5], vec![0.2, 1.0, 0.0], vec![0.0, 0.3, 2.0]])?;
    let hy = Tensor::from_rows(&[vec![0.9, 0.1, 0.4], vec![0.0, 0.2, 1.8]])?;
    println!("smd(x -> y) = {:.6}", smd::smd_value(&hx, &hy)?);
    println!("smd(y -> x) = {:.6}", smd::smd_value(&hy, &hx)?);

    let mut tape = Tape::new();
    let x = tape.param(hx);
    let y = tape.param(hy);
    let loss = smd::ot_loss(&mut tape, x, y)?;
    println!("ot loss     = {:.6}", tape.value(loss).item().unwrap_or(f64::NAN));
    let grads = tape.backward(loss)?;
    println!("d loss / d hx = {:?}", grads.get_or_zeros(&tape, x).data());
    // the reference side is detached
    println!("d loss / d hy present: {}", grads.get(y).is_some());
    Ok(())
}
