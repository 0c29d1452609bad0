use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use synthmask::chunker::{chunk_letter, tune_max_lines, write_chunk_dump};
use synthmask::corpus::{load_annotations, load_letters, merge_and_validate, AnnotatedLetter, LetterRecord};
use synthmask::featurizer::{write_feature_dump, Featurizer, StopwordSet};
use synthmask::generator::{GenerationRow, Generator, GeneratorConfig, Infiller, SyntheticLetter};
use synthmask::maskplanner::{parse_sweep, MaskSpec};
use synthmask::metrics::report::METRIC_VERSIONS;
use synthmask::metrics::{evaluate_letter, EvaluationInput, EvaluationReport, LetterEvaluation, MetricOptions};
use synthmask::modelgate::{Backend, BackendKind, DictionaryBackend, EchoBackend, ModelGate, RemoteBackend, RemoteOptions};
use synthmask::nerharness::{build_silver_dataset, compare_downstream};
use synthmask::postprocessor::{correct_text, fill_blanks, Correction, SpellDictionary};
use synthmask::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::Manifest;

pub const SYNTHETIC_FILE: &str = "synthetic_letters.csv";
pub const MASKED_FILE: &str = "masked_letters.csv";
pub const GENERATION_REPORT: &str = "generation_report.jsonl";
pub const EVALUATION_REPORT: &str = "evaluation_report.csv";
pub const EVALUATION_SUMMARY: &str = "evaluation_summary.json";
pub const POSTPROCESSED_FILE: &str = "postprocessed_letters.csv";
pub const POSTPROCESS_REPORT: &str = "postprocess_report.jsonl";
pub const NER_REPORT: &str = "ner_report.json";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const FEATURE_DUMP: &str = "features.jsonl";
pub const TUNING_REPORT: &str = "chunk_tuning.json";
pub const CHUNK_DUMP: &str = "chunks.jsonl";

/// Everything a command needs after configuration is settled.
pub struct Context {
    pub config: RunConfig,
    pub command: &'static str,
}

struct Backends {
    /// Embeddings, pseudo-likelihood, blank filling and NER.
    gate: ModelGate,
    infiller: Infiller,
    annotator: Option<ModelGate>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Validation(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

impl Context {
    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.config.paths.output_dir.clone();
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn config_json(&self) -> Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn manifest(&self, gate: &ModelGate) -> Manifest {
        Manifest::new(self.command, self.config_json(), Some(gate.descriptor()))
            .seed("generation", self.config.generation.seed)
            .seed("backend", self.config.backend.seed)
            .seed("ner_split", self.config.ner.split_seed)
    }

    fn featurizer(&self) -> Result<Featurizer> {
        let mut f = Featurizer::default();
        if let Some(path) = &self.config.paths.stopwords {
            f.stopwords = StopwordSet::from_reader(std::io::BufReader::new(open(path)?))?;
        }
        Ok(f)
    }

    fn load_records(&self) -> Result<Vec<LetterRecord>> {
        load_letters(open(&self.config.paths.letters)?)
    }

    fn load_corpus(&self) -> Result<Vec<AnnotatedLetter>> {
        let letters = self.load_records()?;
        let annotations = match &self.config.paths.annotations {
            Some(p) => load_annotations(open(p)?)?,
            None => Vec::new(),
        };
        merge_and_validate(letters, annotations).into_validated()
    }

    fn backends(&self, references: &[AnnotatedLetter]) -> Result<Backends> {
        let b = &self.config.backend;
        Ok(match b.kind {
            BackendKind::MockEcho => Backends {
                gate: ModelGate::new(EchoBackend::from_references(
                    references.iter().map(|l| l.text().to_string()),
                )),
                infiller: Infiller::EchoOracle,
                annotator: None,
            },
            BackendKind::MockDictionary => {
                let gate = ModelGate::new(DictionaryBackend::new(b.seed));
                Backends {
                    infiller: Infiller::Gate(gate.clone()),
                    annotator: Some(gate.clone()),
                    gate,
                }
            }
            BackendKind::Remote => {
                let mut options = RemoteOptions::new(b.url.clone().unwrap_or_default());
                options.timeout = Duration::from_secs(b.timeout_secs);
                options.retries = b.retries;
                options.max_in_flight = b.max_in_flight;
                let remote = RemoteBackend::connect(options)?;
                let served = remote.descriptor().model_name;
                if let Some(expected) = b.model.as_deref().filter(|m| *m != served) {
                    return Err(Error::Protocol(format!(
                        "backend serves model `{served}`, config expects `{expected}`"
                    )));
                }
                let gate = ModelGate::new(remote);
                Backends {
                    infiller: Infiller::Gate(gate.clone()),
                    annotator: Some(gate.clone()),
                    gate,
                }
            }
        })
    }

    fn generator(&self, spec: MaskSpec, backends: &Backends) -> Result<Generator> {
        let config = GeneratorConfig {
            chunking: self.config.chunk_config()?,
            spec,
            seed: self.config.generation.seed,
            infill: self.config.infill_options(),
        };
        Ok(Generator::new(config, backends.infiller.clone(), backends.annotator.clone())?
            .with_featurizer(self.featurizer()?))
    }

    fn metric_options(&self) -> MetricOptions {
        MetricOptions {
            bertscore: self.config.metrics.bertscore,
            perplexity: self.config.metrics.perplexity,
        }
    }
}

/// Generate every letter; the first failure aborts the run.
fn generate_all(generator: &Generator, letters: &[AnnotatedLetter]) -> Result<Vec<SyntheticLetter>> {
    let mut out = Vec::with_capacity(letters.len());
    for result in generator.generate_corpus(letters) {
        match result {
            Ok(l) => out.push(l),
            Err(failure) => {
                log::error!("{failure}");
                return Err(failure.error);
            }
        }
    }
    Ok(out)
}

fn write_letters_csv<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["note_id", "text"])?;
    for (id, text) in rows {
        w.write_record([id, text])?;
    }
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn print_json(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON prints"));
}

pub fn ingest(ctx: &Context, feature_dump: bool) -> Result<()> {
    let records = ctx.load_records()?;
    let annotations = match &ctx.config.paths.annotations {
        Some(p) => load_annotations(open(p)?)?,
        None => Vec::new(),
    };
    let outcome = merge_and_validate(records, annotations);
    let dir = ctx.out_dir()?;
    let report = json!({
        "letters": outcome.letters.len(),
        "annotations_accepted": outcome.accepted_count(),
        "orphans": outcome.orphans,
        "rejected": outcome.rejected,
    });
    write_json(&dir.join(INGEST_REPORT), &report)?;
    let letters = outcome.into_validated()?;

    let backends = ctx.backends(&letters)?;
    let mut manifest = ctx.manifest(&backends.gate);
    manifest.record(&dir, INGEST_REPORT)?;
    if feature_dump {
        let generator = ctx.generator(ctx.config.mask_spec()?, &backends)?;
        let prepared: Vec<_> = letters
            .par_iter()
            .map(|l| generator.prepare(l).map(|p| (l.note_id().to_string(), p)))
            .collect::<Result<_>>()?;
        let mut w = create(&dir.join(FEATURE_DUMP))?;
        for (note_id, chunks) in &prepared {
            for c in chunks {
                write_feature_dump(&mut w, note_id, c.chunk.chunk_index, &c.tokens)?;
            }
        }
        w.flush()?;
        manifest.record(&dir, FEATURE_DUMP)?;
    }
    manifest.write(&dir)?;
    print_json(&report);
    Ok(())
}

pub fn chunk_tune(ctx: &Context) -> Result<()> {
    let letters = ctx.load_corpus()?;
    let base = ctx.config.chunk_config()?;
    let report = tune_max_lines(&letters, &base, &ctx.config.tuning_params())?;
    let dir = ctx.out_dir()?;
    write_json(&dir.join(TUNING_REPORT), &report)?;

    let chosen = synthmask::chunker::ChunkConfig::new(report.chosen_max_lines, base.max_tokens)?;
    let chunks: Vec<_> = letters.par_iter().flat_map_iter(|l| chunk_letter(l, &chosen)).collect();
    write_chunk_dump(create(&dir.join(CHUNK_DUMP))?, &chunks)?;

    let mut manifest = Manifest::new(ctx.command, ctx.config_json(), None);
    manifest.record(&dir, TUNING_REPORT)?;
    manifest.record(&dir, CHUNK_DUMP)?;
    manifest.write(&dir)?;
    print_json(&json!({
        "chosen_max_lines": report.chosen_max_lines,
        "plateau_average": report.plateau_average,
        "rows": report.rows.len(),
    }));
    Ok(())
}

pub fn generate(ctx: &Context) -> Result<()> {
    let letters = ctx.load_corpus()?;
    let backends = ctx.backends(&letters)?;
    let spec = ctx.config.mask_spec()?;
    let generator = ctx.generator(spec.clone(), &backends)?;
    let synthetic = generate_all(&generator, &letters)?;

    let dir = ctx.out_dir()?;
    write_letters_csv(
        &dir.join(SYNTHETIC_FILE),
        synthetic.iter().map(|l| (l.note_id.as_str(), l.text.as_str())),
    )?;
    write_letters_csv(
        &dir.join(MASKED_FILE),
        synthetic.iter().map(|l| (l.note_id.as_str(), l.masked_text.as_str())),
    )?;
    let rows: Vec<GenerationRow> = synthetic.iter().map(|l| GenerationRow::new(l, &spec)).collect();
    write_jsonl(&dir.join(GENERATION_REPORT), &rows)?;

    let mut manifest = ctx.manifest(&backends.gate);
    for f in [SYNTHETIC_FILE, MASKED_FILE, GENERATION_REPORT] {
        manifest.record(&dir, f)?;
    }
    manifest.write(&dir)?;

    let n = rows.len().max(1) as f64;
    print_json(&json!({
        "letters": rows.len(),
        "strategy": spec.to_string(),
        "mean_actual_ratio": rows.iter().map(|r| r.actual_ratio).sum::<f64>() / n,
        "mean_invalid_rate": rows.iter().map(|r| r.invalid_rate).sum::<f64>() / n,
        "total_duration_ms": rows.iter().map(|r| r.duration_ms).sum::<f64>(),
    }));
    Ok(())
}

fn read_letter_map(path: &Path) -> Result<HashMap<String, String>> {
    Ok(load_letters(open(path)?)?
        .into_iter()
        .map(|l| (l.note_id, l.text))
        .collect())
}

#[derive(Deserialize)]
struct InvalidRateRow {
    note_id: String,
    invalid_rate: f64,
}

fn read_invalid_rates(path: &Path) -> Result<HashMap<String, f64>> {
    if !path.exists() {
        return Ok(HashMap::new());
    }
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let row: InvalidRateRow = serde_json::from_str(l)?;
            Ok((row.note_id, row.invalid_rate))
        })
        .collect()
}

fn evaluate_rows(ctx: &Context, inputs: &[EvaluationInput], gate: &ModelGate) -> Vec<LetterEvaluation> {
    let options = ctx.metric_options();
    inputs
        .par_iter()
        .map(|i| evaluate_letter(i, Some(gate), &options))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One summary row per sweep point, ratios ascending.
#[derive(Debug, Serialize)]
struct SweepRow {
    strategy: String,
    requested_ratio: f64,
    eligible_ratio: f64,
    actual_ratio: f64,
    invalid_rate: f64,
    total_duration_ms: f64,
    aggregate: serde_json::Map<String, Value>,
}

fn spec_ratio(spec: &MaskSpec) -> f64 {
    spec.components.iter().map(|(_, r)| *r).fold(0.0, f64::max)
}

pub fn evaluate(ctx: &Context, input_dir: Option<PathBuf>) -> Result<()> {
    let dir = ctx.out_dir()?;
    match ctx.config.metrics.sweep.clone() {
        Some(sweep) => evaluate_sweep(ctx, &sweep, &dir),
        None => evaluate_files(ctx, input_dir.unwrap_or_else(|| dir.clone()), &dir),
    }
}

fn evaluate_files(ctx: &Context, input_dir: PathBuf, dir: &Path) -> Result<()> {
    let letters = ctx.load_corpus()?;
    let synthetic = read_letter_map(&input_dir.join(SYNTHETIC_FILE))?;
    let masked = read_letter_map(&input_dir.join(MASKED_FILE))?;
    let rates = read_invalid_rates(&input_dir.join(GENERATION_REPORT))?;
    let inputs = letters
        .iter()
        .map(|l| {
            let id = l.note_id();
            let get = |map: &HashMap<String, String>, what: &str| {
                map.get(id)
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("no {what} text for note_id `{id}`")))
            };
            Ok(EvaluationInput {
                note_id: id.to_string(),
                original: l.text().to_string(),
                masked: get(&masked, "masked")?,
                synthetic: get(&synthetic, "synthetic")?,
                invalid_rate: rates.get(id).copied(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let backends = ctx.backends(&letters)?;
    let report = EvaluationReport::new(evaluate_rows(ctx, &inputs, &backends.gate));
    report.write_csv(&dir.join(EVALUATION_REPORT))?;
    let summary = report.summary(ctx.config_json());
    write_json(&dir.join(EVALUATION_SUMMARY), &summary)?;

    let mut manifest = ctx.manifest(&backends.gate);
    manifest.record(dir, EVALUATION_REPORT)?;
    manifest.record(dir, EVALUATION_SUMMARY)?;
    manifest.write(dir)?;
    print_json(&summary["aggregate"]);
    Ok(())
}

fn evaluate_sweep(ctx: &Context, sweep: &str, dir: &Path) -> Result<()> {
    let mut specs = parse_sweep(sweep)?;
    specs.sort_by(|a, b| spec_ratio(a).total_cmp(&spec_ratio(b)));
    let letters = ctx.load_corpus()?;
    let backends = ctx.backends(&letters)?;

    let mut per_letter = csv::Writer::from_path(dir.join(EVALUATION_REPORT))?;
    let mut header_written = false;
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let generator = ctx.generator(spec.clone(), &backends)?;
        let synthetic = generate_all(&generator, &letters)?;
        let gen_rows: Vec<GenerationRow> = synthetic.iter().map(|l| GenerationRow::new(l, &spec)).collect();
        let inputs: Vec<EvaluationInput> = letters
            .iter()
            .zip(&synthetic)
            .map(|(l, s)| EvaluationInput {
                note_id: l.note_id().to_string(),
                original: l.text().to_string(),
                masked: s.masked_text.clone(),
                synthetic: s.text.clone(),
                invalid_rate: Some(s.invalid_rate()),
            })
            .collect();
        let report = EvaluationReport::new(evaluate_rows(ctx, &inputs, &backends.gate));
        for letter in &report.letters {
            let cols = letter.columns();
            if !header_written {
                let mut h = vec!["strategy".to_string(), "note_id".to_string()];
                h.extend(cols.iter().map(|(n, _)| n.clone()));
                per_letter.write_record(&h)?;
                header_written = true;
            }
            let mut r = vec![spec.to_string(), letter.note_id.clone()];
            r.extend(cols.into_iter().map(|(_, v)| fmt_opt(v)));
            per_letter.write_record(&r)?;
        }
        let n = gen_rows.len().max(1) as f64;
        let mean = |f: fn(&GenerationRow) -> f64| gen_rows.iter().map(f).sum::<f64>() / n;
        rows.push(SweepRow {
            strategy: spec.to_string(),
            requested_ratio: spec_ratio(&spec),
            eligible_ratio: mean(|r| r.eligible_ratio),
            actual_ratio: mean(|r| r.actual_ratio),
            invalid_rate: mean(|r| r.invalid_rate),
            total_duration_ms: gen_rows.iter().map(|r| r.duration_ms).sum(),
            aggregate: report
                .aggregate()
                .into_iter()
                .map(|(k, v)| (k, v.map_or(Value::Null, |x| json!(x))))
                .collect(),
        });
    }
    per_letter.flush()?;
    let versions: serde_json::Map<String, Value> =
        METRIC_VERSIONS.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let summary = json!({
        "sweep": sweep,
        "letters": letters.len(),
        "rows": rows,
        "config": ctx.config_json(),
        "metric_versions": versions,
    });
    write_json(&dir.join(EVALUATION_SUMMARY), &summary)?;

    let mut manifest = ctx.manifest(&backends.gate);
    manifest.record(dir, EVALUATION_REPORT)?;
    manifest.record(dir, EVALUATION_SUMMARY)?;
    manifest.write(dir)?;
    let brief: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "strategy": r.strategy,
                "actual_ratio": r.actual_ratio,
                "syn_rouge1_f1": r.aggregate.get("syn_rouge1_f1"),
                "base_rouge1_f1": r.aggregate.get("base_rouge1_f1"),
                "invalid_rate": r.invalid_rate,
            })
        })
        .collect();
    print_json(&Value::Array(brief));
    Ok(())
}

#[derive(Serialize)]
struct PostprocessRow {
    note_id: String,
    blanks_filled: usize,
    blanks_left: usize,
    corrections: Vec<Correction>,
}

pub fn postprocess(ctx: &Context, input: Option<PathBuf>) -> Result<()> {
    let dir = ctx.out_dir()?;
    let input = input.unwrap_or_else(|| dir.join(SYNTHETIC_FILE));
    let letters = load_letters(open(&input)?)?;
    let originals = ctx.load_corpus().unwrap_or_else(|e| {
        log::warn!("original corpus unavailable, no entity terms added to the dictionary: {e}");
        Vec::new()
    });
    let backends = ctx.backends(&originals)?;

    let pp = &ctx.config.postprocess;
    let mut dictionary = match &ctx.config.paths.dictionary {
        Some(p) => SpellDictionary::from_path(p)?,
        None => SpellDictionary::bundled(),
    }
    .with_max_edit_distance(pp.max_edit_distance);
    dictionary.add_terms(originals.iter().flat_map(|l| l.surfaces()));
    let featurizer = ctx.featurizer()?;

    let results: Vec<(LetterRecord, PostprocessRow)> = letters
        .par_iter()
        .map(|l| {
            let mut text = l.text.clone();
            let (mut filled, mut left) = (0, 0);
            if pp.fill_blanks {
                let out = fill_blanks(&text, &backends.gate);
                text = out.text;
                filled = out.filled;
                left = out.left;
            }
            let mut corrections = Vec::new();
            if pp.spelling {
                let features = featurizer.letter_features(&text, &[], None);
                let tokens = featurizer.featurize(&text, 0, &features);
                let (fixed, c) = correct_text(&text, &tokens, &dictionary);
                text = fixed;
                corrections = c;
            }
            (
                LetterRecord {
                    note_id: l.note_id.clone(),
                    text,
                },
                PostprocessRow {
                    note_id: l.note_id.clone(),
                    blanks_filled: filled,
                    blanks_left: left,
                    corrections,
                },
            )
        })
        .collect();

    write_letters_csv(
        &dir.join(POSTPROCESSED_FILE),
        results.iter().map(|(l, _)| (l.note_id.as_str(), l.text.as_str())),
    )?;
    let rows: Vec<&PostprocessRow> = results.iter().map(|(_, r)| r).collect();
    write_jsonl(&dir.join(POSTPROCESS_REPORT), &rows)?;
    let mut manifest = ctx.manifest(&backends.gate);
    manifest.record(&dir, POSTPROCESSED_FILE)?;
    manifest.record(&dir, POSTPROCESS_REPORT)?;
    manifest.write(&dir)?;
    print_json(&json!({
        "letters": rows.len(),
        "blanks_filled": rows.iter().map(|r| r.blanks_filled).sum::<usize>(),
        "blanks_left": rows.iter().map(|r| r.blanks_left).sum::<usize>(),
        "corrections": rows.iter().map(|r| r.corrections.len()).sum::<usize>(),
    }));
    Ok(())
}

pub fn ner_eval(ctx: &Context, synthetic_path: Option<PathBuf>) -> Result<()> {
    let letters = ctx.load_corpus()?;
    let backends = ctx.backends(&letters)?;
    let originals: Vec<(String, String)> = letters
        .iter()
        .map(|l| (l.note_id().to_string(), l.text().to_string()))
        .collect();
    let synthetic: Vec<(String, String)> = match synthetic_path {
        Some(p) => load_letters(open(&p)?)?
            .into_iter()
            .map(|l| (l.note_id, l.text))
            .collect(),
        None => {
            let generator = ctx.generator(ctx.config.ner_spec()?, &backends)?;
            generate_all(&generator, &letters)?
                .into_iter()
                .map(|l| (l.note_id, l.text))
                .collect()
        }
    };
    let original_docs = build_silver_dataset(&originals, &backends.gate)?;
    let synthetic_docs = build_silver_dataset(&synthetic, &backends.gate)?;
    let report = compare_downstream(&original_docs, &synthetic_docs, &backends.gate, &ctx.config.ner_config())?;

    let dir = ctx.out_dir()?;
    write_json(&dir.join(NER_REPORT), &report)?;
    let mut manifest = ctx.manifest(&backends.gate);
    manifest.record(&dir, NER_REPORT)?;
    manifest.write(&dir)?;
    print_json(&json!({
        "original": report.original,
        "synthetic": report.synthetic,
        "delta_f1": report.delta_f1,
    }));
    Ok(())
}

pub fn backend_check(ctx: &Context) -> Result<()> {
    let backends = ctx.backends(&[])?;
    let caps = backends.gate.capabilities()?;
    print_json(&json!({
        "descriptor": backends.gate.descriptor(),
        "capabilities": caps,
    }));
    Ok(())
}
