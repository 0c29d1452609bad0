//! End to end over the fixture corpus with the mock backends.

use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use synthmask::chunker::ChunkConfig;
use synthmask::corpus::{load_annotations, load_letters, merge_and_validate, AnnotatedLetter};
use synthmask::generator::{Generator, GeneratorConfig, InfillOptions, Infiller, Selection, SyntheticLetter};
use synthmask::maskplanner::MaskSpec;
use synthmask::metrics::{evaluate_letter, EvaluationInput, EvaluationReport, MetricOptions};
use synthmask::modelgate::{DictionaryBackend, EchoBackend, ModelGate, MASK_SENTINEL};
use synthmask::text::char_slice;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn corpus() -> Vec<AnnotatedLetter> {
    let dir = Path::new(FIXTURES);
    let letters = load_letters(File::open(dir.join("letters.csv")).unwrap()).unwrap();
    let annotations = load_annotations(File::open(dir.join("annotations.csv")).unwrap()).unwrap();
    merge_and_validate(letters, annotations).into_validated().unwrap()
}

fn generator(spec: &str, seed: u64, infiller: Infiller, annotator: Option<ModelGate>) -> Generator {
    let config = GeneratorConfig {
        chunking: ChunkConfig::default(),
        spec: MaskSpec::from_str(spec).unwrap(),
        seed,
        infill: InfillOptions::default(),
    };
    Generator::new(config, infiller, annotator).unwrap()
}

fn dictionary(spec: &str, seed: u64) -> Generator {
    let gate = ModelGate::new(DictionaryBackend::new(1));
    generator(spec, seed, Infiller::Gate(gate.clone()), Some(gate))
}

fn run(g: &Generator, letters: &[AnnotatedLetter]) -> Vec<SyntheticLetter> {
    g.generate_corpus(letters).into_iter().map(|r| r.unwrap()).collect()
}

#[test]
fn fixture_merges_with_one_orphan() {
    let dir = Path::new(FIXTURES);
    let letters = load_letters(File::open(dir.join("letters.csv")).unwrap()).unwrap();
    let annotations = load_annotations(File::open(dir.join("annotations.csv")).unwrap()).unwrap();
    let total = annotations.len();
    let outcome = merge_and_validate(letters, annotations);
    assert_eq!(outcome.letters.len(), 20);
    assert_eq!(outcome.orphans.len(), 1);
    assert!(outcome.rejected.is_empty());
    assert_eq!(outcome.accepted_count() + outcome.orphans.len(), total);
}

#[test]
fn dictionary_generation_is_deterministic_across_thread_counts() {
    let letters = corpus();
    let g = dictionary("random:0.4", 42);
    let a = run(&g, &letters);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = single.install(|| run(&g, &letters));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.text, y.text, "{}", x.note_id);
        assert_eq!(x.masked_text, y.masked_text);
        assert_eq!(x.validity_flags(), y.validity_flags());
    }
}

#[test]
fn seeds_change_the_plan() {
    let letters = corpus();
    let a = run(&dictionary("random:0.4", 1), &letters);
    let b = run(&dictionary("random:0.4", 2), &letters);
    assert!(a.iter().zip(&b).any(|(x, y)| x.masked_text != y.masked_text));
}

#[test]
fn every_sentinel_is_filled_and_entities_survive() {
    let letters = corpus();
    for s in run(&dictionary("random:0.6", 7), &letters).iter() {
        assert_eq!(s.masked_text.matches(MASK_SENTINEL).count(), s.slot_count(), "{}", s.note_id);
        assert!(!s.text.contains(MASK_SENTINEL));
        let letter = letters.iter().find(|l| l.note_id() == s.note_id).unwrap();
        for span in letter.entity_spans() {
            let surface = char_slice(letter.text(), span);
            assert!(s.masked_text.contains(surface), "{}: entity {surface:?} masked", s.note_id);
            assert!(s.text.contains(surface), "{}: entity {surface:?} lost", s.note_id);
        }
    }
}

#[test]
fn ratios_grow_with_the_request() {
    let letters = corpus();
    let low = run(&dictionary("random:0.2", 3), &letters);
    let high = run(&dictionary("random:0.8", 3), &letters);
    for (l, h) in low.iter().zip(&high) {
        assert!(l.eligible_ratio() <= h.eligible_ratio());
        assert!(l.actual_ratio() <= h.actual_ratio());
        assert!((0.0..=1.0).contains(&h.invalid_rate()));
    }
}

#[test]
fn sampling_is_seeded() {
    let letters = corpus();
    let gate = ModelGate::new(DictionaryBackend::new(4));
    let sampled = |seed| {
        let mut g = generator("random:0.5", seed, Infiller::Gate(gate.clone()), Some(gate.clone()));
        g.config.infill.selection = Selection::TopKSample { k: 3 };
        run(&g, &letters[..4])
    };
    let a = sampled(11);
    let b = sampled(11);
    assert_eq!(
        a.iter().map(|s| &s.text).collect::<Vec<_>>(),
        b.iter().map(|s| &s.text).collect::<Vec<_>>()
    );
}

#[test]
fn echo_run_evaluates_to_perfect_similarity() {
    let letters = corpus();
    let gate = ModelGate::new(EchoBackend::from_references(letters.iter().map(|l| l.text().to_string())));
    let synthetic = run(&generator("random:0.5", 5, Infiller::EchoOracle, None), &letters);
    let options = MetricOptions {
        bertscore: true,
        perplexity: true,
    };
    let rows = letters
        .iter()
        .zip(&synthetic)
        .map(|(l, s)| {
            evaluate_letter(
                &EvaluationInput {
                    note_id: l.note_id().into(),
                    original: l.text().into(),
                    masked: s.masked_text.clone(),
                    synthetic: s.text.clone(),
                    invalid_rate: Some(s.invalid_rate()),
                },
                Some(&gate),
                &options,
            )
        })
        .collect();
    let report = EvaluationReport::new(rows);
    let agg: std::collections::HashMap<_, _> = report.aggregate().into_iter().collect();
    assert!((agg["syn_rouge1_f1"].unwrap() - 100.0).abs() < 1e-9);
    assert!((agg["syn_bertscore_f1"].unwrap() - 1.0).abs() < 1e-9);
    assert!(agg["base_rouge1_f1"].unwrap() < 100.0);
    assert_eq!(agg["invalid_rate"], Some(0.0));
    // Every true token has probability one under the oracle.
    assert!((agg["syn_perplexity"].unwrap() - 1.0).abs() < 1e-12);

    let dir = std::env::temp_dir().join(format!("synthmask-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("evaluation_report.csv");
    report.write_csv(&path).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(reader.headers().unwrap().get(0), Some("note_id"));
    assert_eq!(reader.records().count(), 20);
    std::fs::remove_dir_all(&dir).unwrap();
}
