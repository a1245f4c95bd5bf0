use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn pts(rows: &[[f64; 2]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize, d: usize) -> MassDistribution {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    MassDistribution::from_weights(random_points(rng, n, d), &w).unwrap()
}

#[test]
fn mass_distribution_validation() {
    let p = pts(&[[0.0, 0.0], [1.0, 0.0]]);
    assert!(MassDistribution::new(p.clone(), vec![0.5, 0.5]).is_ok());
    assert!(MassDistribution::new(p.clone(), vec![0.6, 0.5]).is_err());
    assert!(MassDistribution::new(p.clone(), vec![1.0, 0.0]).is_err());
    assert!(MassDistribution::new(p.clone(), vec![1.0]).is_err());
    let d = MassDistribution::from_weights(p, &[3.0, 0.0]).unwrap();
    assert_eq!(d.len(), 1);
}

#[test]
fn euclidean_cost_examples() {
    let a = pts(&[[0.0, 0.0], [3.0, 4.0]]);
    let c = euclidean_cost(&a, &a).unwrap();
    assert_eq!(c.get(0, 0), 0.0);
    assert_eq!(c.get(1, 1), 0.0);
    assert_eq!(c.get(0, 1), 5.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, y) = (random_points(&mut rng, 3, 4), random_points(&mut rng, 5, 4));
    assert_eq!(
        euclidean_cost(&x, &y).unwrap(),
        euclidean_cost(&y, &x).unwrap().transpose()
    );
    assert!(euclidean_cost(&x, &random_points(&mut rng, 2, 3)).is_err());
}

#[test]
fn exact_emd_identity_and_single_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mu = random_dist(&mut rng, 5, 3);
    let plan = emd_between(&mu, &mu).unwrap();
    assert!(plan.achieved_cost.abs() <= 1e-9);

    let p = MassDistribution::uniform(pts(&[[0.0, 0.0]])).unwrap();
    let q = MassDistribution::uniform(pts(&[[3.0, 4.0]])).unwrap();
    assert_eq!(emd_between(&p, &q).unwrap().achieved_cost, 5.0);
}

#[test]
fn exact_emd_rejects_infeasible_marginals() {
    let c = CostMatrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    assert!(matches!(
        super::network_simplex::solve(&[0.5, 0.5], &[0.5, 0.6], &c),
        Err(Error::Infeasible(_))
    ));
}

#[test]
fn exact_emd_matches_permutation_oracle_n3() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (a, b) = (random_points(&mut rng, 3, 2), random_points(&mut rng, 3, 2));
        let oracle = permutation_oracle_emd(&a, &b).unwrap();
        let mu = MassDistribution::uniform(a.clone()).unwrap();
        let nu = MassDistribution::uniform(b.clone()).unwrap();
        let exact = emd_between(&mu, &nu).unwrap().achieved_cost;
        assert!((oracle - exact).abs() <= 1e-9, "{oracle} vs {exact}");
        // and the other direction
        let back = emd_between(&nu, &mu).unwrap().achieved_cost;
        assert!((permutation_oracle_emd(&b, &a).unwrap() - back).abs() <= 1e-9);
    }
}

#[test]
fn permutation_oracle_small_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_points(&mut rng, 4, 3);
    assert_eq!(permutation_oracle_emd(&a, &a).unwrap(), 0.0);
    let p = pts(&[[0.0, 0.0]]);
    let q = pts(&[[3.0, 4.0]]);
    assert_eq!(permutation_oracle_emd(&p, &q).unwrap(), 5.0);
    let big = random_points(&mut rng, 9, 2);
    assert!(permutation_oracle_emd(&big, &big).is_err());
}

#[test]
fn relaxed_hand_instance() {
    let mu = MassDistribution::uniform(pts(&[[0.0, 0.0], [2.0, 0.0]])).unwrap();
    let nu = MassDistribution::uniform(pts(&[[0.0, 0.0], [1.0, 0.0]])).unwrap();
    let c = euclidean_cost(mu.points(), nu.points()).unwrap();
    let relaxed = relaxed_smd(&mu, &nu, &c).unwrap();
    let exact = exact_emd(&mu, &nu, &c).unwrap().achieved_cost;
    assert!((relaxed - 0.5).abs() < 1e-15);
    assert!((exact - 0.5).abs() < 1e-12);
    assert!(relaxed <= exact + 1e-9);
}

#[test]
fn relaxed_identical_and_single_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mu = random_dist(&mut rng, 4, 3);
    let c = euclidean_cost(mu.points(), mu.points()).unwrap();
    assert_eq!(relaxed_smd(&mu, &mu, &c).unwrap(), 0.0);

    let q = MassDistribution::uniform(random_points(&mut rng, 1, 3)).unwrap();
    let c = euclidean_cost(mu.points(), q.points()).unwrap();
    let relaxed = relaxed_smd(&mu, &q, &c).unwrap();
    let forced: f64 = (0..mu.len()).map(|i| mu.masses()[i] * c.get(i, 0)).sum();
    assert!((relaxed - forced).abs() < 1e-15);
    assert!((exact_emd(&mu, &q, &c).unwrap().achieved_cost - forced).abs() < 1e-12);
}

#[test]
fn nearest_target_ties_take_lowest_index() {
    let c = CostMatrix::new(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
    assert_eq!(nearest_targets(&c), vec![0]);
    let c = CostMatrix::new(1, 3, vec![2.0, 1.0, 1.0]).unwrap();
    assert_eq!(nearest_targets(&c), vec![1]);
}

#[test]
fn sinkhorn_large_epsilon_gives_outer_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mu, nu) = (random_dist(&mut rng, 3, 2), random_dist(&mut rng, 4, 2));
    let c = euclidean_cost(mu.points(), nu.points()).unwrap();
    let params = SinkhornParams {
        epsilon: 1e3,
        ..Default::default()
    };
    let plan = sinkhorn(&mu, &nu, &c, &params).unwrap();
    assert!(plan.converged);
    let mut expected_cost = 0.0;
    for i in 0..3 {
        for j in 0..4 {
            let outer = mu.masses()[i] * nu.masses()[j];
            assert!((plan.get(i, j) - outer).abs() < 1e-3 * outer.max(1e-3));
            expected_cost += outer * c.get(i, j);
        }
    }
    assert!((plan.achieved_cost - expected_cost).abs() / expected_cost < 1e-3);
}

#[test]
fn sinkhorn_close_to_exact_at_small_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mu, nu) = (random_dist(&mut rng, 5, 3), random_dist(&mut rng, 5, 3));
    let c = euclidean_cost(mu.points(), nu.points()).unwrap();
    let exact = exact_emd(&mu, &nu, &c).unwrap().achieved_cost;
    let s = sinkhorn(&mu, &nu, &c, &SinkhornParams::default()).unwrap();
    assert!(
        (s.achieved_cost - exact).abs() / exact < 0.01,
        "{} vs {exact}",
        s.achieved_cost
    );
}

#[test]
fn sinkhorn_identity_shrinks_with_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mu = random_dist(&mut rng, 4, 2);
    let c = euclidean_cost(mu.points(), mu.points()).unwrap();
    let mut last = f64::INFINITY;
    for eps in [1e-1, 1e-2, 1e-3] {
        let p = SinkhornParams {
            epsilon: eps,
            ..Default::default()
        };
        let cost = sinkhorn(&mu, &mu, &c, &p).unwrap().achieved_cost;
        assert!(cost < last);
        last = cost;
    }
    assert!(last < 1e-6);
}

#[test]
fn sinkhorn_rejects_bad_epsilon() {
    let c = CostMatrix::new(1, 1, vec![1.0]).unwrap();
    let p = SinkhornParams {
        epsilon: 0.0,
        ..Default::default()
    };
    assert!(super::sinkhorn::sinkhorn_masses(&[1.0], &[1.0], &c, &p).is_err());
}

#[test]
fn sinkhorn_flags_non_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mu, nu) = (random_dist(&mut rng, 5, 2), random_dist(&mut rng, 5, 2));
    let c = euclidean_cost(mu.points(), nu.points()).unwrap();
    let p = SinkhornParams {
        epsilon: 1e-3,
        max_iters: 1,
        tol: 1e-15,
    };
    let plan = sinkhorn(&mu, &nu, &c, &p).unwrap();
    assert!(!plan.converged);
    assert_eq!(plan.iterations, 1);
}

#[test]
fn ipot_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mu = random_dist(&mut rng, 4, 3);
    let c = euclidean_cost(mu.points(), mu.points()).unwrap();
    assert!(ipot(&mu, &mu, &c, &IpotParams::default()).unwrap().achieved_cost <= 1e-6);

    let nu = random_dist(&mut rng, 6, 3);
    let c = euclidean_cost(mu.points(), nu.points()).unwrap();
    let exact = exact_emd(&mu, &nu, &c).unwrap().achieved_cost;
    let approx = ipot(&mu, &nu, &c, &IpotParams::default()).unwrap();
    assert!(
        (approx.achieved_cost - exact).abs() / exact < 0.01,
        "{} vs {exact}",
        approx.achieved_cost
    );

    let p = MassDistribution::uniform(pts(&[[0.0, 0.0]])).unwrap();
    let q = MassDistribution::uniform(pts(&[[3.0, 4.0]])).unwrap();
    let c = euclidean_cost(p.points(), q.points()).unwrap();
    assert!((ipot(&p, &q, &c, &IpotParams::default()).unwrap().achieved_cost - 5.0).abs() < 1e-12);
}

fn arb_instance() -> impl Strategy<Value = (MassDistribution, MassDistribution)> {
    (1usize..=6, 1usize..=6, 1usize..=8, any::<u64>()).prop_map(|(n, m, d, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_dist(&mut rng, n, d), random_dist(&mut rng, m, d))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relaxed_is_a_lower_bound((mu, nu) in arb_instance()) {
        let c = euclidean_cost(mu.points(), nu.points()).unwrap();
        let relaxed = relaxed_smd(&mu, &nu, &c).unwrap();
        let exact = exact_emd(&mu, &nu, &c).unwrap();
        prop_assert!(relaxed <= exact.achieved_cost + 1e-9);
        prop_assert!(exact.marginal_violation(mu.masses(), nu.masses()) <= 1e-9);
        if nu.len() == 1 {
            prop_assert!((relaxed - exact.achieved_cost).abs() <= 1e-9);
        }
    }

    #[test]
    fn solvers_are_scale_equivariant((mu, nu) in arb_instance(), s in 0.1f64..10.0) {
        let c = euclidean_cost(mu.points(), nu.points()).unwrap();
        let scaled = |d: &MassDistribution| MassDistribution::new(d.points().map(|v| v * s), d.masses().to_vec()).unwrap();
        let (mus, nus) = (scaled(&mu), scaled(&nu));
        let cs = euclidean_cost(mus.points(), nus.points()).unwrap();
        let close = |a: f64, b: f64| (a * s - b).abs() <= 1e-9 * (1.0 + b.abs());
        prop_assert!(close(exact_emd(&mu, &nu, &c).unwrap().achieved_cost, exact_emd(&mus, &nus, &cs).unwrap().achieved_cost));
        prop_assert!(close(relaxed_smd(&mu, &nu, &c).unwrap(), relaxed_smd(&mus, &nus, &cs).unwrap()));
        let sp = SinkhornParams { epsilon: 1e-2, max_iters: 500, tol: 1e-9 };
        prop_assert!(close(sinkhorn(&mu, &nu, &c, &sp).unwrap().achieved_cost, sinkhorn(&mus, &nus, &cs, &sp).unwrap().achieved_cost));
        let ip = IpotParams { outer_iters: 200, ..Default::default() };
        prop_assert!(close(ipot(&mu, &nu, &c, &ip).unwrap().achieved_cost, ipot(&mus, &nus, &cs, &ip).unwrap().achieved_cost));
    }
}
