use std::collections::HashSet;

use entrain::corpus::{
    build_dataset, generate_synthetic_corpus, load_corpus, parse_corpus, save_corpus,
    DatasetConfig, DatasetSplits, MatchingExample, SyntheticConfig,
};
use proptest::prelude::*;

fn splits_for(n_dialogues: usize, turns: usize, seed: u64) -> DatasetSplits {
    let corpus =
        generate_synthetic_corpus(&SyntheticConfig::new(n_dialogues, 3, turns, 5, 0.5, seed))
            .unwrap();
    build_dataset(
        &corpus.dialogues,
        &DatasetConfig {
            seed,
            ..DatasetConfig::default()
        },
    )
    .unwrap()
}

fn positive_keys(examples: &[MatchingExample]) -> HashSet<(String, usize)> {
    examples
        .iter()
        .filter(|e| e.label == 1)
        .map(|e| (e.dialogue_id.clone(), e.turn_index))
        .collect()
}

#[test]
fn sixty_two_dialogues_survive_a_file_round_trip() {
    let corpus = generate_synthetic_corpus(&SyntheticConfig::new(62, 2, 4, 3, 0.2, 8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    save_corpus(&path, &corpus.dialogues).unwrap();
    let back = load_corpus(&path).unwrap();
    assert_eq!(back.len(), 62);
    assert_eq!(back, corpus.dialogues);
}

#[test]
fn malformed_and_invalid_lines_are_reported() {
    let bad = "{\"dialogue_id\":\"a\",\"turns\":[]}\nnot json\n";
    let err = parse_corpus(bad.as_bytes()).unwrap_err().to_string();
    assert!(err.contains('2'), "{err}");
    let backwards = r#"{"dialogue_id":"x","turns":[{"speaker":"a","text":"hi","start":2.0,"end":1.0}]}"#;
    let err = parse_corpus(backwards.as_bytes()).unwrap_err().to_string();
    assert!(err.contains('x'), "{err}");
}

#[test]
fn context_is_the_preceding_window() {
    let corpus = generate_synthetic_corpus(&SyntheticConfig::new(30, 2, 9, 4, 0.5, 1)).unwrap();
    let splits = build_dataset(&corpus.dialogues, &DatasetConfig::default()).unwrap();
    for e in splits.train.iter().chain(&splits.test).filter(|e| e.label == 1) {
        let d = corpus
            .dialogues
            .iter()
            .find(|d| d.dialogue_id == e.dialogue_id)
            .unwrap();
        let want: Vec<&str> = d.turns[e.turn_index - 5..e.turn_index]
            .iter()
            .map(|t| t.text.as_str())
            .collect();
        assert_eq!(e.context, want);
        assert_eq!(e.response, d.turns[e.turn_index].text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn count_identity_disjointness_and_no_leakage(n in 40usize..70, turns in 8usize..12, seed in 0u64..1000) {
        let s = splits_for(n, turns, seed);
        let (pt, pv, pe) = (
            DatasetSplits::positives(&s.train),
            DatasetSplits::positives(&s.validation),
            DatasetSplits::positives(&s.test),
        );
        prop_assert_eq!(pt + pv + pe, n * (turns - 5));
        prop_assert_eq!(s.train.len(), 2 * pt);
        prop_assert_eq!(s.validation.len(), 10 * pv);
        prop_assert_eq!(s.test.len(), 10 * pe);

        let (a, b, c) = (positive_keys(&s.train), positive_keys(&s.validation), positive_keys(&s.test));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));

        for split in [&s.train, &s.validation, &s.test] {
            // Negatives are positive responses of other dialogues in the same split.
            let mut sources: std::collections::HashMap<&str, HashSet<&str>> = Default::default();
            for e in split.iter().filter(|e| e.label == 1) {
                sources.entry(e.response.as_str()).or_default().insert(e.dialogue_id.as_str());
            }
            let mut pos = None;
            for e in split.iter() {
                if e.label == 1 {
                    pos = Some(e);
                } else {
                    let p = pos.unwrap();
                    prop_assert_eq!(&e.context, &p.context);
                    prop_assert_ne!(&e.response, &p.response);
                    let from = &sources[e.response.as_str()];
                    prop_assert!(from.iter().any(|d| *d != p.dialogue_id));
                }
            }
        }
    }

    #[test]
    fn dataset_is_deterministic(seed in 0u64..1000) {
        prop_assert_eq!(splits_for(40, 8, seed), splits_for(40, 8, seed));
    }
}
