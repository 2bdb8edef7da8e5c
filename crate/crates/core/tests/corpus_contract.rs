use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;
use xlcons::data::{generate_corpus, is_reserved, label_by_rule, Corpus, CorpusSpec, Label, Split};

fn small(seed: u64) -> CorpusSpec {
    CorpusSpec {
        train_size: 90,
        dev_size: 30,
        test_size: 30,
        vocab_size: 200,
        seed,
        ..CorpusSpec::default()
    }
}

#[test]
fn noiseless_translations_keep_rule_labels() {
    let spec = CorpusSpec {
        noise_rate: 0.0,
        train_size: 600,
        ..small(21)
    };
    let corpus = generate_corpus(&spec).unwrap().corpus;
    let mut checked = 0;
    let mut mismatches = 0;
    for split in Split::ALL {
        for lang in &corpus.languages {
            for ex in corpus.get(split, lang) {
                checked += 1;
                if label_by_rule(&ex.claim, &ex.evidence) != ex.label {
                    mismatches += 1;
                }
            }
        }
    }
    assert_eq!(checked, 4 * 660);
    assert_eq!(mismatches, 0);
}

#[test]
fn noisy_translations_inherit_original_labels() {
    let spec = CorpusSpec {
        noise_rate: 0.3,
        ..small(4)
    };
    let corpus = generate_corpus(&spec).unwrap().corpus;
    for split in Split::ALL {
        let src = corpus.get(split, "src");
        for lang in corpus.targets() {
            let tr = corpus.get(split, lang);
            assert_eq!(src.len(), tr.len());
            for (o, t) in src.iter().zip(tr) {
                assert_eq!((o.pair_id, o.label), (t.pair_id, t.label));
                assert_eq!(t.lang, *lang);
            }
        }
    }
}

#[test]
fn classes_are_balanced_and_pair_ids_unique() {
    let corpus = generate_corpus(&small(8)).unwrap().corpus;
    let mut ids = BTreeSet::new();
    for split in Split::ALL {
        let src = corpus.get(split, "src");
        for label in Label::ALL {
            let n = src.iter().filter(|e| e.label == label).count();
            assert_eq!(n, src.len() / 3);
        }
        for e in src {
            assert!(ids.insert(e.pair_id));
        }
    }
}

#[test]
fn saved_corpus_is_byte_identical_across_runs_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    generate_corpus(&small(3)).unwrap().corpus.save(&a).unwrap();
    generate_corpus(&small(3)).unwrap().corpus.save(&b).unwrap();
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 12);
    for name in &names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
    let loaded = Corpus::load(&a).unwrap();
    assert_eq!(loaded, generate_corpus(&small(3)).unwrap().corpus);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn token_maps_are_bijections_with_cognate_share(rho in 0.0f64..=1.0, seed in any::<u64>()) {
        let spec = CorpusSpec { cognate_ratio: rho, noise_rate: 0.0, ..small(seed) };
        let generated = generate_corpus(&spec).unwrap();
        for (lang, map) in &generated.token_maps {
            let sources: Vec<String> = (0..spec.vocab_size).map(|i| format!("w{i:04}")).collect();
            let images: BTreeSet<String> = sources.iter().map(|t| map.translate(t)).collect();
            prop_assert_eq!(images.len(), spec.vocab_size, "{} not injective", lang);
            let shared = sources.iter().filter(|t| map.translate(t) == **t).count();
            let expected = (rho * spec.vocab_size as f64).round() as usize;
            prop_assert_eq!(shared, expected);
            for t in &sources {
                let image = map.translate(t);
                prop_assert_eq!(map.invert(&image), Some(t.as_str()));
            }
        }
    }

    #[test]
    fn reserved_tokens_survive_translation(seed in any::<u64>()) {
        let corpus = generate_corpus(&CorpusSpec { noise_rate: 0.5, ..small(seed) }).unwrap().corpus;
        let src = corpus.get(Split::Test, "src");
        for lang in corpus.targets() {
            for (o, t) in src.iter().zip(corpus.get(Split::Test, lang)) {
                let count = |ex: &[String]| ex.iter().filter(|x| is_reserved(x)).count();
                prop_assert_eq!(count(&o.evidence), count(&t.evidence));
                prop_assert_eq!(o.claim.len(), t.claim.len());
            }
        }
    }
}
