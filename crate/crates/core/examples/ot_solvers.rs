//! Exact, relaxed and entropic transport costs between two small point clouds.

use seqot::autodiff::Tensor;
use seqot::ot::{self, IpotParams, MassDistribution, SinkhornParams};

fn main() -> seqot::Result<()> {
    let a = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]])?;
    let b = Tensor::from_rows(&[vec![0.5, 0.0], vec![0.0, 1.5]])?;
    let mu = MassDistribution::from_weights(a, &[1.0, 1.0, 2.0])?;
    let nu = MassDistribution::uniform(b)?;
    let cost = ot::euclidean_cost(mu.points(), nu.points())?;

    let exact = ot::exact_emd(&mu, &nu, &cost)?;
    let relaxed = ot::relaxed_smd(&mu, &nu, &cost)?;
    let sk = ot::sinkhorn(&mu, &nu, &cost, &SinkhornParams::default())?;
    let ip = ot::ipot(&mu, &nu, &cost, &IpotParams::default())?;

    println!("exact     {:.6}", exact.achieved_cost);
    println!("relaxed   {:.6}  (lower bound)", relaxed);
    println!("sinkhorn  {:.6}  ({} iterations)", sk.achieved_cost, sk.iterations);
    println!("ipot      {:.6}  ({} iterations)", ip.achieved_cost, ip.iterations);
    println!("exact plan:");
    for i in 0..exact.rows {
        let row: Vec<String> = (0..exact.cols).map(|j| format!("{:.3}", exact.get(i, j))).collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
