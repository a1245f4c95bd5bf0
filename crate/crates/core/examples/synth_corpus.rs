//! Generates a small cipher-language corpus and shows one sentence in every language.

use seqot::data::{generate_corpus, CorpusSpec, DirectionKind, Split};

fn main() -> seqot::Result<()> {
    let spec = CorpusSpec {
        seed: 7,
        train_per_direction: 100,
        valid_sentences: 10,
        test_sentences: 10,
        ..Default::default()
    };
    let corpus = generate_corpus(&spec)?;
    let reg = &corpus.registry;
    println!("vocabulary size {}", reg.vocab_size());
    for kind in [DirectionKind::Supervised, DirectionKind::ZeroShot] {
        let names: Vec<String> = corpus
            .directions(kind)
            .iter()
            .map(|d| format!("{}-{}", reg.name(d.src), reg.name(d.tgt)))
            .collect();
        println!("{kind:?}: {}", names.join(" "));
    }
    for lang in 0..reg.n_languages() {
        let set = corpus
            .sets(Split::Test)
            .find(|s| s.direction.src == lang)
            .expect("test set");
        let s = &set.pairs[0].0;
        println!(
            "{}: {:?} -> concepts {:?}",
            reg.name(lang),
            s.content(),
            reg.read(lang, s.content())
        );
    }
    Ok(())
}
