//! Synthetic multilingual corpora over cipher languages, plus the metrics used to score them.

mod corpus;
pub mod io;
pub mod metrics;
mod registry;

pub use corpus::{
    directions, generate_corpus, CorpusSpec, Direction, DirectionKind, DirectionSet, ParallelCorpus, Split,
};
pub use metrics::{corpus_bleu, off_target_rate, pairwise_consistency, token_accuracy};
pub use registry::LanguageRegistry;

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small_spec(seed: u64) -> CorpusSpec {
        CorpusSpec {
            seed,
            train_per_direction: 50,
            valid_sentences: 10,
            test_sentences: 12,
            concept_vocab: 20,
            ..Default::default()
        }
    }

    #[test]
    fn direction_counts() {
        let d = directions(4, 0);
        let sup = d.iter().filter(|d| d.kind == DirectionKind::Supervised).count();
        let zs = d.iter().filter(|d| d.kind == DirectionKind::ZeroShot).count();
        assert_eq!((sup, zs), (6, 6));
        let c = generate_corpus(&small_spec(1)).unwrap();
        assert_eq!(c.sets(Split::Train).count(), 6);
        assert_eq!(c.sets(Split::Test).count(), 12);
        assert_eq!(c.directions(DirectionKind::ZeroShot).len(), 6);
    }

    #[test]
    fn too_few_languages() {
        let spec = CorpusSpec {
            n_languages: 2,
            ..small_spec(0)
        };
        assert!(generate_corpus(&spec).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_corpus(&small_spec(3)).unwrap(),
            generate_corpus(&small_spec(3)).unwrap()
        );
        assert_ne!(
            generate_corpus(&small_spec(3)).unwrap(),
            generate_corpus(&small_spec(4)).unwrap()
        );
    }

    #[test]
    fn pairs_share_concepts_and_zero_shot_is_held_out() {
        let c = generate_corpus(&small_spec(5)).unwrap();
        let reg = &c.registry;
        for set in &c.sets {
            if set.split == Split::Train {
                assert_eq!(set.direction.kind, DirectionKind::Supervised);
            }
            for (s, t) in &set.pairs {
                assert_eq!(s.language, set.direction.src);
                let sc = reg.read(s.language, s.content()).unwrap();
                assert_eq!(Some(sc), reg.read(t.language, t.content()));
                assert_eq!(reg.translate(t.language, s.language, t.content()).unwrap(), s.content());
                assert!((4..=16).contains(&s.content().len()));
            }
        }
    }

    #[test]
    fn token_ranges_are_disjoint() {
        let reg = LanguageRegistry::new(4, 10, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut owner = vec![None; reg.vocab_size()];
        for l in 0..4 {
            for t in reg.token_range(l) {
                assert!(owner[t].is_none());
                owner[t] = Some(l);
                assert_eq!(reg.language_of(t), Some(l));
            }
        }
        for t in 0..=4 {
            assert!(reg.is_special(t));
            assert_eq!(reg.language_of(t), None);
        }
        assert_eq!(reg.parse_name("L2").unwrap(), 2);
        assert!(reg.parse_name("L9").is_err());
    }

    #[test]
    fn off_target_examples() {
        let reg = LanguageRegistry::new(3, 5, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let inside: Vec<usize> = reg.token_range(1).take(3).collect();
        let other: Vec<usize> = reg.token_range(2).take(3).collect();
        assert_eq!(
            off_target_rate(&[inside.clone(), inside.clone()], 1, &reg).unwrap(),
            0.0
        );
        assert_eq!(off_target_rate(&[other.clone(), other.clone()], 1, &reg).unwrap(), 1.0);
        assert_eq!(off_target_rate(&[inside.clone(), other.clone()], 1, &reg).unwrap(), 0.5);
        assert_eq!(off_target_rate(&[vec![]], 1, &reg).unwrap(), 1.0);
        // a tie is not a majority
        assert_eq!(off_target_rate(&[vec![inside[0], other[0]]], 1, &reg).unwrap(), 0.0);
        assert!(off_target_rate(&[], 1, &reg).is_err());
    }

    #[test]
    fn bleu_examples() {
        let a = vec![vec![1, 2, 3, 4, 5], vec![6, 7, 8, 9]];
        assert_eq!(pairwise_consistency(&a, &a).unwrap(), 100.0);
        let b = vec![vec![11, 12, 13, 14, 15], vec![16, 17, 18, 19]];
        let d = pairwise_consistency(&a, &b).unwrap();
        assert!(d > 0.0 && d < 1.0 * 100.0 / 5.0, "{d}");
        assert!(pairwise_consistency(&a, &b[..1]).is_err());
    }

    #[test]
    fn bleu_against_hand_count() {
        // hyp 1 2 3 4 vs ref 1 2 3 5: matches 3/4, 2/3, 1/2, 0/1
        let hyp = vec![vec![1, 2, 3, 4]];
        let r = vec![vec![1, 2, 3, 5]];
        let expected = 100.0 * ((4.0 / 5.0) * (3.0 / 4.0) * (2.0 / 3.0) * (1.0 / 2.0) as f64).powf(0.25);
        assert!((corpus_bleu(&hyp, &r).unwrap() - expected).abs() < 1e-12);
        // shorter hypothesis is penalised
        let short = vec![vec![1, 2]];
        let p = (3.0f64 / 3.0) * (2.0 / 2.0) * 1.0 * 1.0;
        let expected = 100.0 * (1.0 - 4.0 / 2.0f64).exp() * p.powf(0.25);
        assert!((corpus_bleu(&short, &r).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn token_accuracy_counts() {
        let refs = vec![vec![1, 2, 3, 4]];
        assert_eq!(token_accuracy(&refs, &refs).unwrap(), 1.0);
        assert_eq!(token_accuracy(&[vec![1, 2]], &refs).unwrap(), 0.5);
        assert_eq!(
            token_accuracy(&[vec![1, 9, 3, 4, 5, 6, 7, 8]], &refs).unwrap(),
            3.0 / 8.0
        );
    }

    #[test]
    fn corpus_files_round_trip() {
        let c = generate_corpus(&small_spec(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = io::write_corpus(&c, dir.path()).unwrap();
        assert_eq!(written.len(), 2 * c.sets.len() + 2);
        assert_eq!(io::read_corpus(dir.path()).unwrap(), c);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pairwise_consistency_is_symmetric(seed: u64) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || -> Vec<Vec<usize>> {
                (0..4).map(|_| (0..rng.gen_range(0..8)).map(|_| rng.gen_range(0..5)).collect()).collect()
            };
            let (a, b) = (draw(), draw());
            prop_assert_eq!(pairwise_consistency(&a, &b).unwrap(), pairwise_consistency(&b, &a).unwrap());
        }

        #[test]
        fn render_read_round_trip(seed: u64, concepts in proptest::collection::vec(0usize..12, 1..10)) {
            let reg = LanguageRegistry::new(3, 12, 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for l in 0..3 {
                prop_assert_eq!(reg.read(l, &reg.render(l, &concepts)), Some(concepts.clone()));
            }
        }
    }
}
