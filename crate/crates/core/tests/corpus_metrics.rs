use std::collections::HashSet;

use astpath::corpus::{dedup, split, CorpusFile, DedupFilters, DigestAlgorithm, Split, SplitRatios};
use astpath::eval::{exact_match, subtoken_f1, EvalReport, Evaluator};
use proptest::prelude::*;

fn files(contents: &[Vec<u8>]) -> Vec<CorpusFile> {
    contents
        .iter()
        .enumerate()
        .map(|(i, c)| CorpusFile {
            path: format!("src/f{i}.ast.json"),
            content: Ok(c.clone()),
        })
        .collect()
}

#[test]
fn ten_thousand_files_split_near_ratio() {
    let contents: Vec<Vec<u8>> = (0..10_000u32).map(|i| format!("file {i}").into_bytes()).collect();
    for algorithm in [DigestAlgorithm::Xxh3_128, DigestAlgorithm::Md5] {
        let m = split(dedup(files(&contents), &DedupFilters::default(), algorithm), SplitRatios::default(), 0).unwrap();
        let train = m.included(Split::Train).count();
        assert!((7_760..=8_240).contains(&train), "{algorithm:?}: {train}");
        let total: usize = [Split::Train, Split::Validation, Split::Test]
            .iter()
            .map(|&s| m.included(s).count())
            .sum();
        assert_eq!(total, 10_000);
    }
}

proptest! {
    #[test]
    fn survivors_have_distinct_digests(contents in prop::collection::vec(prop::collection::vec(0u8..4, 0..4), 0..60)) {
        let m = dedup(files(&contents), &DedupFilters::default(), DigestAlgorithm::Xxh3_128);
        let survivors: Vec<&[u8]> = m
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_included())
            .map(|(i, _)| contents[i].as_slice())
            .collect();
        let rehashed: HashSet<u128> = survivors.iter().map(|c| DigestAlgorithm::Xxh3_128.digest(c)).collect();
        prop_assert_eq!(rehashed.len(), survivors.len());
        let distinct: HashSet<&Vec<u8>> = contents.iter().collect();
        prop_assert_eq!(survivors.len(), distinct.len());
    }

    #[test]
    fn dedup_is_idempotent(contents in prop::collection::vec(prop::collection::vec(0u8..3, 0..3), 0..40)) {
        let once = dedup(files(&contents), &DedupFilters::default(), DigestAlgorithm::Xxh3_128);
        let kept: Vec<CorpusFile> = once
            .entries
            .iter()
            .zip(&contents)
            .filter(|(e, _)| e.is_included())
            .map(|(e, c)| CorpusFile { path: e.path.clone(), content: Ok(c.clone()) })
            .collect();
        let twice = dedup(kept, &DedupFilters::default(), DigestAlgorithm::Xxh3_128);
        let first: Vec<_> = once.entries.into_iter().filter(|e| e.is_included()).collect();
        prop_assert_eq!(twice.entries, first);
    }

    #[test]
    fn adding_a_file_keeps_existing_splits(n in 1usize..200, seed in any::<u64>(), extra in prop::collection::vec(any::<u8>(), 1..32)) {
        let contents: Vec<Vec<u8>> = (0..n).map(|i| format!("{seed}-{i}").into_bytes()).collect();
        let before = split(dedup(files(&contents), &DedupFilters::default(), DigestAlgorithm::Xxh3_128), SplitRatios::default(), seed).unwrap();
        let mut grown = contents.clone();
        grown.insert(0, extra);
        let after = split(dedup(files(&grown), &DedupFilters::default(), DigestAlgorithm::Xxh3_128), SplitRatios::default(), seed).unwrap();
        for (old, new) in before.entries.iter().zip(&after.entries[1..]) {
            if new.is_included() {
                prop_assert_eq!(old.split, new.split);
            }
        }
    }

    #[test]
    fn exact_match_is_symmetric(a in "[a-zA-Z_0-9<>]{0,12}", b in "[a-zA-Z_0-9<>]{0,12}") {
        prop_assert_eq!(exact_match(&a, &b), exact_match(&b, &a));
    }

    #[test]
    fn matching_styles_score_full_f1(parts in prop::collection::vec("[a-z]{2,5}", 1..4), digits in 0u32..100) {
        let camel: String = parts
            .iter()
            .enumerate()
            .map(|(i, p)| if i == 0 { p.clone() } else { format!("{}{}", p[..1].to_uppercase(), &p[1..]) })
            .collect();
        let snake = format!("{}{digits}", parts.join("_"));
        prop_assert!(exact_match(&camel, &snake));
        prop_assert_eq!(subtoken_f1(&camel, &snake).f1, 1.0);
    }

    #[test]
    fn report_totals_sum_outcomes(pairs in prop::collection::vec(("[a-cA-C_]{0,6}", "[a-cA-C_]{1,6}|<UNK>", any::<bool>()), 0..40)) {
        let mut ev = Evaluator::new();
        let (mut hits, mut f1) = (0usize, 0.0f64);
        for (pred, gold, present) in &pairs {
            let p = present.then_some(pred.as_str());
            let hit = ev.add(p, gold);
            prop_assert_eq!(hit, p.is_some_and(|p| exact_match(p, gold)));
            hits += hit as usize;
            f1 += p.map_or(0.0, |p| subtoken_f1(p, gold).f1);
        }
        let r: EvalReport = ev.report();
        prop_assert_eq!(r.total, pairs.len());
        prop_assert_eq!(r.exact_matches, hits);
        for v in [r.accuracy, r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if !pairs.is_empty() {
            prop_assert!((r.accuracy - hits as f64 / pairs.len() as f64).abs() < 1e-12);
            prop_assert!((r.f1 - f1 / pairs.len() as f64).abs() < 1e-12);
        }
    }
}
