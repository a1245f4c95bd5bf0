mod common;

use common::{pairs, params, small_corpus, tiny_model, tiny_train_config};
use proptest::prelude::*;
use seqot::autodiff::{Tape, Tensor};
use seqot::data::{DirectionKind, Split};
use seqot::model::{TaggedSentence, Weights};
use seqot::train::{
    self, baseline_loss, combined_loss, evaluate, evaluate_with, info_nce, lr_at, objective_loss, sra_distance,
    Objective, Pair, StepRng, TargetStates, TrainConfig, REFERENCE_PEAK_LR, REFERENCE_WARMUP_STEPS,
};

const NO_DROPOUT: StepRng = StepRng {
    seed: 5,
    step: 1,
    train: false,
};

fn as_pairs(v: &[(TaggedSentence, TaggedSentence)]) -> Vec<Pair<'_>> {
    v.iter().map(|(x, y)| (x, y)).collect()
}

#[test]
fn zero_gammas_give_plain_cross_entropy() {
    let corpus = small_corpus(1);
    let cfg = TrainConfig {
        gamma1: 0.0,
        gamma2: 0.0,
        ..tiny_train_config(&corpus)
    };
    let p = params(cfg.model, 1);
    let batch = pairs(&corpus, 0, 5);
    let rng = StepRng {
        train: true,
        ..NO_DROPOUT
    };

    let mut tape = Tape::new();
    let w = Weights::bind(&mut tape, &p, true);
    let full = combined_loss(&mut tape, &w, &as_pairs(&batch), &cfg, &rng).unwrap();
    let mut tape = Tape::new();
    let w = Weights::bind(&mut tape, &p, true);
    let ce = objective_loss(
        &mut tape,
        &w,
        &as_pairs(&batch),
        &cfg,
        Objective::CeOnly,
        &rng,
        TargetStates::Encode,
    )
    .unwrap();

    assert_eq!(full.breakdown.total.to_bits(), ce.breakdown.total.to_bits());
    assert_eq!(full.breakdown.total.to_bits(), full.breakdown.ce.to_bits());
    assert!(full.breakdown.ot > 0.0 && full.breakdown.at > 0.0);
}

#[test]
fn identical_pairs_have_zero_ot_and_at() {
    let corpus = small_corpus(2);
    let cfg = tiny_train_config(&corpus);
    let p = params(cfg.model, 2);
    let batch: Vec<_> = pairs(&corpus, 3, 4).into_iter().map(|(x, _)| (x.clone(), x)).collect();
    let mut tape = Tape::new();
    let w = Weights::bind(&mut tape, &p, true);
    let g = combined_loss(&mut tape, &w, &as_pairs(&batch), &cfg, &NO_DROPOUT).unwrap();
    assert_eq!(g.breakdown.ot, 0.0);
    assert_eq!(g.breakdown.at, 0.0);
}

#[test]
fn avg_src_len_excludes_the_tag() {
    let corpus = small_corpus(3);
    let cfg = tiny_train_config(&corpus);
    let p = params(cfg.model, 3);
    let batch = pairs(&corpus, 1, 3);
    let expected = batch.iter().map(|(x, _)| x.content().len() as f64).sum::<f64>() / 3.0;
    let mut tape = Tape::new();
    let w = Weights::bind(&mut tape, &p, true);
    let g = combined_loss(&mut tape, &w, &as_pairs(&batch), &cfg, &NO_DROPOUT).unwrap();
    assert_eq!(g.breakdown.avg_src_len, expected);
}

#[test]
fn empty_batch_is_rejected() {
    let corpus = small_corpus(4);
    let cfg = tiny_train_config(&corpus);
    let p = params(cfg.model, 4);
    let mut tape = Tape::new();
    let w = Weights::bind(&mut tape, &p, true);
    assert!(combined_loss(&mut tape, &w, &[], &cfg, &NO_DROPOUT).is_err());
}

#[test]
fn stop_gradient_matches_explicitly_detached_targets() {
    let corpus = small_corpus(5);
    let cfg = tiny_train_config(&corpus);
    let p = params(cfg.model, 5);
    let batch = pairs(&corpus, 2, 4);
    let bp = as_pairs(&batch);
    let ys: Vec<&[usize]> = batch.iter().map(|(_, y)| y.tokens.as_slice()).collect();

    let mut tape = Tape::new();
    let w = Weights::bind(&mut tape, &p, true);
    let a = combined_loss(&mut tape, &w, &bp, &cfg, &NO_DROPOUT).unwrap();
    let ga = tape.backward(a.loss).unwrap();
    let grads_a: Vec<Tensor> = w.encoder_vars(&p).iter().map(|&v| ga.get_or_zeros(&tape, v)).collect();

    let mut tape2 = Tape::new();
    let w2 = Weights::bind(&mut tape2, &p, true);
    let frozen = Weights::bind(&mut tape2, &p, false);
    let enc_y = seqot::model::encode_batch(&mut tape2, &frozen, &ys, None).unwrap();
    let target = TargetStates::Given {
        states: enc_y.states,
        segments: enc_y.segments,
    };
    let b = objective_loss(&mut tape2, &w2, &bp, &cfg, Objective::CeOtAt, &NO_DROPOUT, target).unwrap();
    let gb = tape2.backward(b.loss).unwrap();
    let grads_b: Vec<Tensor> = w2
        .encoder_vars(&p)
        .iter()
        .map(|&v| gb.get_or_zeros(&tape2, v))
        .collect();

    assert_eq!(a.breakdown, b.breakdown);
    for (x, y) in grads_a.iter().zip(&grads_b) {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn baselines_vanish_on_identical_pairs() {
    let corpus = small_corpus(6);
    let cfg = tiny_train_config(&corpus);
    let p = params(cfg.model, 6);
    let batch: Vec<_> = pairs(&corpus, 0, 3).into_iter().map(|(x, _)| (x.clone(), x)).collect();
    for which in [Objective::Sra, Objective::Sf] {
        let mut tape = Tape::new();
        let w = Weights::bind(&mut tape, &p, true);
        let g = baseline_loss(&mut tape, &w, &as_pairs(&batch), which, &cfg, &NO_DROPOUT).unwrap();
        assert_eq!(g.breakdown.aux, 0.0, "{which}");
        assert_eq!(g.breakdown.total, g.breakdown.ce, "{which}");
    }
}

#[test]
fn contrastive_baseline_needs_two_pairs() {
    let corpus = small_corpus(7);
    let cfg = tiny_train_config(&corpus);
    let p = params(cfg.model, 7);
    let batch = pairs(&corpus, 0, 1);
    let mut tape = Tape::new();
    let w = Weights::bind(&mut tape, &p, true);
    assert!(baseline_loss(&mut tape, &w, &as_pairs(&batch), Objective::Cl, &cfg, &NO_DROPOUT).is_err());
    assert!(baseline_loss(&mut tape, &w, &as_pairs(&batch), Objective::CeOt, &cfg, &NO_DROPOUT).is_err());
    let batch = pairs(&corpus, 0, 3);
    let g = baseline_loss(&mut tape, &w, &as_pairs(&batch), Objective::Cl, &cfg, &NO_DROPOUT).unwrap();
    assert!(g.breakdown.aux > 0.0);
}

fn nce(rx: Vec<Vec<f64>>, ry: Vec<Vec<f64>>, tau: f64) -> f64 {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_rows(&rx).unwrap());
    let b = tape.constant(Tensor::from_rows(&ry).unwrap());
    let l = info_nce(&mut tape, a, b, tau).unwrap();
    tape.value(l).item().unwrap()
}

#[test]
fn info_nce_against_direct_evaluation() {
    // anchor (1, 0); negative fixed at (0, 1); positive rotates towards the anchor
    let tau = 0.1;
    let mut prev = f64::INFINITY;
    for k in 0..=10 {
        let theta = std::f64::consts::FRAC_PI_2 * (1.0 - k as f64 / 10.0);
        let pos = vec![theta.cos(), theta.sin()];
        let rx = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let ry = vec![pos.clone(), vec![0.0, 1.0]];
        let got = nce(rx, ry, tau);
        // row 0: -log softmax over (cos theta, 0) / tau; row 1: sims (sin theta, 1) / tau
        let r0 = -(theta.cos() / tau) + ((theta.cos() / tau).exp() + 1.0).ln();
        let r1 = -(1.0 / tau) + ((theta.sin() / tau).exp() + (1.0 / tau).exp()).ln();
        assert!((got - 0.5 * (r0 + r1)).abs() < 1e-12, "{got} vs {}", 0.5 * (r0 + r1));
        assert!(got < prev);
        prev = got;
    }
    let separated = nce(
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        tau,
    );
    assert!(separated > 0.0 && separated < 1e-3);
    let mut tape = Tape::new();
    let one = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
    assert!(info_nce(&mut tape, one, one, tau).is_err());
}

#[test]
fn sra_distance_of_equal_representations_is_zero() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap());
    let b = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 3.0]]).unwrap());
    let same = sra_distance(&mut tape, a, a).unwrap();
    assert_eq!(tape.value(same).item(), Some(0.0));
    let d = sra_distance(&mut tape, a, b).unwrap();
    assert!((tape.value(d).item().unwrap() - 2.5).abs() < 1e-12);
}

#[test]
fn schedule_maximum_is_at_warmup() {
    let (peak, warm) = (REFERENCE_PEAK_LR, REFERENCE_WARMUP_STEPS);
    let top = lr_at(warm, peak, warm);
    assert!((top - peak / (warm as f64).sqrt()).abs() < 1e-18);
    for t in (1..5 * warm).step_by(37) {
        assert!(lr_at(t, peak, warm) <= top);
    }
    assert_eq!((REFERENCE_WARMUP_STEPS, REFERENCE_PEAK_LR), (4000, 0.0007));
}

#[test]
fn training_is_deterministic_and_pretraining_can_be_shared() {
    let corpus = small_corpus(8);
    let cfg = tiny_train_config(&corpus);
    let a = train::train(&cfg, &corpus).unwrap();
    let b = train::train(&cfg, &corpus).unwrap();
    assert_eq!(
        serde_json::to_string(&a.records).unwrap(),
        serde_json::to_string(&b.records).unwrap()
    );
    assert_eq!(a.params, b.params);

    let shared = train::pretrain(
        &TrainConfig {
            objective: Objective::CeOnly,
            ..cfg.clone()
        },
        &corpus,
        &mut |_| {},
    )
    .unwrap();
    let c = train::finish(shared, &cfg, &corpus, &mut |_| {}).unwrap();
    assert_eq!(c.records, a.records);
    assert_eq!(c.params, a.params);
    assert_eq!(c.test, a.test);
}

#[test]
fn degenerate_objective_matches_ce_only_stream() {
    let corpus = small_corpus(9);
    let zero = TrainConfig {
        gamma1: 0.0,
        gamma2: 0.0,
        ..tiny_train_config(&corpus)
    };
    let ce = TrainConfig {
        objective: Objective::CeOnly,
        ..zero.clone()
    };
    let a = train::train(&zero, &corpus).unwrap();
    let b = train::train(&ce, &corpus).unwrap();
    assert_eq!(
        serde_json::to_string(&a.records).unwrap(),
        serde_json::to_string(&b.records).unwrap()
    );
}

#[test]
fn records_hold_valid_metrics_and_identity() {
    let corpus = small_corpus(10);
    let cfg = TrainConfig {
        objective: Objective::CeOtAt,
        ..tiny_train_config(&corpus)
    };
    let out = train::train(&cfg, &corpus).unwrap();
    let steps: Vec<usize> = out.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![4, 5, 10]);
    assert!(out.best_step > cfg.pretrain_steps);
    for r in &out.records {
        let (g1, g2) = if r.step > cfg.pretrain_steps {
            (cfg.gamma1, cfg.gamma2)
        } else {
            (0.0, 0.0)
        };
        assert!((r.probe.recombine(g1, g2) - r.probe.total).abs() <= 1e-10);
        for d in &r.eval.directions {
            assert!((0.0..=1.0).contains(&d.accuracy));
            assert!((0.0..=1.0).contains(&d.off_target_rate));
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let corpus = small_corpus(11);
    let good = tiny_train_config(&corpus);
    for bad in [
        TrainConfig {
            gamma1: -1.0,
            ..good.clone()
        },
        TrainConfig {
            warmup_steps: 0,
            ..good.clone()
        },
        TrainConfig {
            pretrain_steps: 50,
            ..good.clone()
        },
        TrainConfig {
            objective: Objective::Cl,
            batch_sentences: 1,
            ..good.clone()
        },
        TrainConfig {
            model: tiny_model(corpus.registry.vocab_size() - 1),
            ..good.clone()
        },
    ] {
        assert!(train::train(&bad, &corpus).is_err());
    }
}

#[test]
fn oracle_translator_scores_perfectly() {
    let corpus = small_corpus(12);
    let reg = &corpus.registry;
    let r = evaluate_with(&corpus, Split::Test, 0, |srcs, tgt| {
        Ok(srcs
            .iter()
            .map(|s| reg.translate(s.language, tgt, s.content()).unwrap())
            .collect())
    })
    .unwrap();
    assert_eq!(r.zero_shot_accuracy, 1.0);
    assert_eq!(r.supervised_accuracy, 1.0);
    assert_eq!(r.zero_shot_off_target, 0.0);
    assert_eq!(r.consistency, Some(100.0));
    assert_eq!(r.directions.len(), 12);
}

#[test]
fn zero_shot_average_excludes_supervised_directions() {
    let corpus = small_corpus(13);
    let reg = &corpus.registry;
    let pivot = corpus.spec.pivot;
    let r = evaluate_with(&corpus, Split::Valid, 0, |srcs, tgt| {
        Ok(srcs
            .iter()
            .map(|s| {
                if s.language == pivot || tgt == pivot {
                    reg.translate(s.language, tgt, s.content()).unwrap()
                } else {
                    Vec::new()
                }
            })
            .collect())
    })
    .unwrap();
    assert_eq!(r.supervised_accuracy, 1.0);
    assert_eq!(r.zero_shot_accuracy, 0.0);
    assert_eq!(r.zero_shot_off_target, 1.0);
    for d in &r.directions {
        assert_eq!(d.accuracy == 1.0, d.kind == DirectionKind::Supervised);
    }
}

#[test]
fn untrained_model_is_mostly_off_target() {
    let corpus = small_corpus(14);
    let p = params(tiny_model(corpus.registry.vocab_size()), 14);
    let r = evaluate(&p, &corpus, Split::Test, 0).unwrap();
    // four languages: a random token is in the intended language a quarter of the time
    assert!(r.zero_shot_off_target > 0.5, "{}", r.zero_shot_off_target);
    assert!(evaluate(&p, &corpus, Split::Train, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn breakdown_identity_on_random_batches(seed in 0u64..1000, n in 1usize..6, g1 in 0.0f64..2.0, g2 in 0.0f64..2.0) {
        let corpus = small_corpus(20);
        let cfg = TrainConfig { gamma1: g1, gamma2: g2, ..tiny_train_config(&corpus) };
        let p = params(cfg.model, seed);
        let batch = pairs(&corpus, seed as usize, n);
        let rng = StepRng { seed, step: seed, train: true };
        let mut tape = Tape::new();
        let w = Weights::bind(&mut tape, &p, true);
        let g = combined_loss(&mut tape, &w, &as_pairs(&batch), &cfg, &rng).unwrap();
        let b = g.breakdown;
        prop_assert!((b.total - (b.ce + g1 * b.avg_src_len * b.ot + g2 * b.at)).abs() <= 1e-10);
        prop_assert_eq!(b.total, tape.value(g.loss).item().unwrap());
    }

    #[test]
    fn ot_term_is_symmetric_in_the_pair(seed in 0u64..1000, n in 1usize..6) {
        let corpus = small_corpus(21);
        let cfg = TrainConfig { objective: Objective::CeOt, ..tiny_train_config(&corpus) };
        let p = params(cfg.model, seed);
        let batch = pairs(&corpus, seed as usize, n);
        let swapped: Vec<_> = batch.iter().map(|(x, y)| (y.clone(), x.clone())).collect();
        let ot = |b: &[(TaggedSentence, TaggedSentence)]| {
            let mut tape = Tape::new();
            let w = Weights::bind(&mut tape, &p, true);
            objective_loss(&mut tape, &w, &as_pairs(b), &cfg, Objective::CeOt, &NO_DROPOUT, TargetStates::Encode)
                .unwrap()
                .breakdown
                .ot
        };
        prop_assert_eq!(ot(&batch).to_bits(), ot(&swapped).to_bits());
    }
}
