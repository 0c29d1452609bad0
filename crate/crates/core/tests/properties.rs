use proptest::prelude::*;
use synthmask::chunker::split_sentences;
use synthmask::featurizer::tokenize_words;
use synthmask::maskplanner::mask_count;
use synthmask::metrics::{lcs_len, meteor, rouge, RougeVariant};
use synthmask::nerharness::split_ids;
use synthmask::postprocessor::SpellDictionary;
use synthmask::text::{char_slice, normalize_whitespace};

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "the", "cat", "sat"]), 1..15)
        .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn token_offsets_slice_back(text in "[a-zA-Zé0-9 ,.;:()'\n_-]{0,80}") {
        let mut last = 0;
        for t in tokenize_words(&text, 0) {
            prop_assert_eq!(char_slice(&text, t.span()), t.text.as_str());
            prop_assert!(t.start >= last);
            last = t.end;
        }
    }

    #[test]
    fn sentences_cover_the_text(text in "([A-Z][a-z]{1,6}( [a-z]{1,6}){0,5}[.?!] ?\n?){1,8}") {
        let sentences = split_sentences(&text);
        let joined = sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
        prop_assert_eq!(normalize_whitespace(&joined), normalize_whitespace(&text));
        for s in &sentences {
            prop_assert_eq!(char_slice(&text, s.span()), s.text.as_str());
        }
    }

    #[test]
    fn rouge_swaps_precision_and_recall(c in words(), r in words()) {
        for v in [RougeVariant::One, RougeVariant::Two, RougeVariant::L] {
            let ab = rouge(&c, &r, v);
            let ba = rouge(&r, &c, v);
            prop_assert!((ab.precision - ba.recall).abs() < 1e-9);
            prop_assert!((ab.f1 - ba.f1).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&ab.f1));
        }
    }

    #[test]
    fn lcs_is_bounded(a in prop::collection::vec(0u8..4, 0..20), b in prop::collection::vec(0u8..4, 0..20)) {
        let l = lcs_len(&a, &b);
        prop_assert!(l <= a.len().min(b.len()));
        prop_assert_eq!(lcs_len(&a, &a), a.len());
        prop_assert_eq!(l, lcs_len(&b, &a));
    }

    #[test]
    fn meteor_is_a_fraction(c in words(), r in words()) {
        let m = meteor(&c, &r);
        prop_assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn mask_count_rounds_half_up(n in 0usize..5000, r in 0.0f64..=1.0) {
        let k = mask_count(r, n);
        prop_assert!(k <= n);
        prop_assert!((k as f64 - r * n as f64).abs() <= 0.5 + 1e-9);
    }

    #[test]
    fn split_partitions_the_ids(n in 2usize..60, f in 0.05f64..0.5, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("n{i:03}")).collect();
        if let Ok((train, test)) = split_ids(&ids, f, seed) {
            prop_assert_eq!(train.len(), (n as f64 * (1.0 - f) + 1e-9).floor() as usize);
            let mut all: Vec<String> = train.iter().chain(&test).cloned().collect();
            all.sort();
            prop_assert_eq!(all, ids.clone());
            let again = split_ids(&ids, f, seed).unwrap();
            prop_assert_eq!((train, test), again);
        }
    }

    #[test]
    fn common_words_are_in_the_bundled_dictionary(w in prop::sample::select(vec!["healthy", "patient", "the", "heart"])) {
        let dict = SpellDictionary::bundled();
        prop_assert!(dict.contains(w));
    }
}
