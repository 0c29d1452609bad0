use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::sync::{Mutex, OnceLock};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{
    AnnotationResult, AnnotationSpan, Backend, BackendDescriptor, BackendKind, Candidate,
    Capabilities, EmbeddingResult, FillMaskQuery, FillMaskResult, LabeledSpan, Layer, NerExample,
    MASK_SENTINEL,
};
use crate::error::{Error, Result};
use crate::featurizer::tokenize_words;
use crate::hashing::stable_hash;
use crate::text::CharIndex;

const MOCK_MAX_INPUT_TOKENS: usize = 512;
const MOCK_EMBEDDING_DIM: usize = 32;
const BUNDLED_VOCAB: &str = include_str!("../../data/mock_vocab.txt");
const BUNDLED_GAZETTEER: &str = include_str!("../../data/gazetteer.tsv");

/// Seeded unit vector for a lowercased token.
fn hashed_vector(token: &str) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[token.to_lowercase().as_bytes()]));
    let v: Vec<f64> = (0..MOCK_EMBEDDING_DIM)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn hashed_embedding(text: &str) -> EmbeddingResult {
    let mut tokens: Vec<String> = tokenize_words(text, 0).into_iter().map(|t| t.text).collect();
    let truncated = tokens.len() > MOCK_MAX_INPUT_TOKENS;
    tokens.truncate(MOCK_MAX_INPUT_TOKENS);
    let vectors = tokens.iter().map(|t| hashed_vector(t)).collect();
    EmbeddingResult {
        tokens,
        vectors,
        truncated,
    }
}

/// Case-insensitive whole-word matcher over a term → label table. At each
/// position the longest term wins and matches never overlap.
#[derive(Debug, Clone)]
struct TermMatcher {
    re: Option<Regex>,
    labels: HashMap<String, String>,
}

impl TermMatcher {
    fn new(table: &BTreeMap<String, String>) -> Self {
        let mut terms: Vec<&String> = table.keys().collect();
        terms.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then(a.cmp(b)));
        let re = (!terms.is_empty()).then(|| {
            let alts: Vec<String> = terms.iter().map(|t| regex::escape(t)).collect();
            Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("escaped terms")
        });
        Self {
            re,
            labels: table.clone().into_iter().collect(),
        }
    }

    fn find(&self, text: &str) -> Vec<LabeledSpan> {
        let Some(re) = &self.re else {
            return Vec::new();
        };
        let idx = CharIndex::new(text);
        re.find_iter(text)
            .filter_map(|m| {
                let label = self.labels.get(&m.as_str().to_lowercase())?;
                let span = idx.span_of_bytes(m.start(), m.end());
                Some(LabeledSpan::new(span.start, span.end, label.clone()))
            })
            .collect()
    }
}

/// Term lists for the mock `ner` and `medterm` layers.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    ner: TermMatcher,
    medterm: TermMatcher,
}

impl Gazetteer {
    pub fn bundled() -> &'static Gazetteer {
        static G: OnceLock<Gazetteer> = OnceLock::new();
        G.get_or_init(|| Gazetteer::from_reader(BUNDLED_GAZETTEER.as_bytes()).expect("bundled gazetteer"))
    }

    /// `term<TAB>layer<TAB>label` lines; `#` starts a comment line.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut ner = BTreeMap::new();
        let mut medterm = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [term, layer, label] = fields[..] else {
                return Err(Error::Parse {
                    row: i as u64 + 1,
                    detail: "expected term, layer and label separated by tabs".into(),
                });
            };
            let table = match layer {
                "ner" => &mut ner,
                "medterm" => &mut medterm,
                other => {
                    return Err(Error::Parse {
                        row: i as u64 + 1,
                        detail: format!("unknown layer `{other}`"),
                    })
                }
            };
            table.insert(term.to_lowercase(), label.to_string());
        }
        Ok(Self {
            ner: TermMatcher::new(&ner),
            medterm: TermMatcher::new(&medterm),
        })
    }

    fn spans(&self, text: &str, layer: Layer) -> Vec<AnnotationSpan> {
        let matcher = match layer {
            Layer::Ner => &self.ner,
            Layer::Medterm => &self.medterm,
            Layer::Pos => return Vec::new(),
        };
        matcher
            .find(text)
            .into_iter()
            .map(|s| AnnotationSpan {
                start: s.start,
                end: s.end,
                label: s.label,
                layer,
            })
            .collect()
    }
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "his", "her", "their", "its", "my", "your", "our",
];
const PRONOUNS: &[&str] = &["i", "you", "he", "she", "it", "we", "they", "him", "them", "me", "us"];
const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does", "did",
    "will", "would", "can", "could", "should", "may", "might", "must", "shall",
];
const ADPOSITIONS: &[&str] = &[
    "in", "on", "at", "from", "to", "of", "with", "for", "by", "about", "into", "over", "after",
    "before", "under", "during", "w/", "without", "since",
];
const CONJUNCTIONS: &[&str] = &["and", "or", "but", "nor", "if", "because", "as", "than"];

/// Suffix-and-wordlist tagger standing in for a trained POS model.
fn heuristic_pos(text: &str) -> Vec<AnnotationSpan> {
    let tokens = tokenize_words(text, 0);
    let mut sentence_start = true;
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let lower = tok.text.to_lowercase();
        let w = lower.as_str();
        let tag = if tok.text.chars().all(|c| c.is_ascii_punctuation()) {
            "PUNCT"
        } else if tok.text.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') {
            "NUM"
        } else if DETERMINERS.contains(&w) {
            "DET"
        } else if PRONOUNS.contains(&w) {
            "PRON"
        } else if AUXILIARIES.contains(&w) {
            "AUX"
        } else if ADPOSITIONS.contains(&w) {
            "ADP"
        } else if CONJUNCTIONS.contains(&w) {
            "OTHER"
        } else if w.ends_with("ly") {
            "ADV"
        } else if w.ends_with("ing") || w.ends_with("ed") {
            "VERB"
        } else if ["ous", "ful", "ive", "able", "ical", "al"].iter().any(|s| w.ends_with(s)) {
            "ADJ"
        } else if !sentence_start && tok.text.starts_with(|c: char| c.is_uppercase()) {
            "PROPN"
        } else {
            "NOUN"
        };
        sentence_start = matches!(tok.text.as_str(), "." | "!" | "?" | ":");
        out.push(AnnotationSpan {
            start: tok.start,
            end: tok.end,
            label: tag.into(),
            layer: Layer::Pos,
        });
    }
    out
}

/// Oracle backend that answers every sentinel with the word it replaced.
///
/// It is given the unmasked reference texts up front. A query is matched
/// against them with each sentinel standing for one whitespace-free word,
/// and the captured words come back as the only candidates, score 1.0.
#[derive(Debug, Clone, Default)]
pub struct EchoBackend {
    references: Vec<String>,
}

impl EchoBackend {
    pub fn from_references<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            references: texts.into_iter().map(Into::into).collect(),
        }
    }

    pub fn add_reference(&mut self, text: impl Into<String>) {
        self.references.push(text.into());
    }

    fn originals(&self, masked: &str) -> Option<Vec<String>> {
        let pattern = masked
            .split(MASK_SENTINEL)
            .map(regex::escape)
            .collect::<Vec<_>>()
            .join(r"(\S+?)");
        let re = Regex::new(&format!("(?s)^{pattern}$")).ok()?;
        self.references.iter().find_map(|r| {
            let caps = re.captures(r)?;
            Some(
                caps.iter()
                    .skip(1)
                    .map(|m| m.map(|m| m.as_str().to_string()).unwrap_or_default())
                    .collect(),
            )
        })
    }
}

impl Backend for EchoBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::MockEcho,
            model_name: "mock-echo".into(),
            max_input_tokens: MOCK_MAX_INPUT_TOKENS,
            base_url: None,
        }
    }

    fn capabilities(&self) -> Result<Capabilities> {
        Ok(Capabilities {
            model_name: "mock-echo".into(),
            max_input_tokens: MOCK_MAX_INPUT_TOKENS,
            embedding_dim: MOCK_EMBEDDING_DIM,
            layers: vec![],
            pll: true,
            ner_training: false,
        })
    }

    fn fill_mask(&self, query: &FillMaskQuery) -> Result<FillMaskResult> {
        let originals = self.originals(&query.text).ok_or_else(|| {
            Error::Protocol("echo backend has no reference text matching the query".into())
        })?;
        Ok(FillMaskResult {
            masks: originals
                .into_iter()
                .map(|token| vec![Candidate { token, score: 1.0 }])
                .collect(),
        })
    }

    fn embed(&self, text: &str) -> Result<EmbeddingResult> {
        Ok(hashed_embedding(text))
    }

    /// Every true token is predicted with probability 1.
    fn pseudo_log_likelihood(&self, _text: &str) -> Result<f64> {
        Ok(0.0)
    }

    fn annotate(&self, _text: &str, _layers: &[Layer]) -> Result<AnnotationResult> {
        Ok(AnnotationResult::default())
    }

    fn ner_train(&self, _: &[NerExample], _: u64, _: u32) -> Result<String> {
        Err(Error::Capability("NER training".into()))
    }

    fn ner_predict(&self, _: &str, _: &[String]) -> Result<Vec<Vec<LabeledSpan>>> {
        Err(Error::Capability("NER prediction".into()))
    }
}

/// Deterministic stand-in for a real masked LM.
///
/// Fill-mask candidates are distinct words from a fixed vocabulary, drawn
/// with a PRNG seeded from the backend seed, the query text and the
/// sentinel position. Annotation uses a suffix tagger and the gazetteer.
/// NER "training" memorises the labelled surface forms.
#[derive(Debug)]
pub struct DictionaryBackend {
    seed: u64,
    vocab: Vec<String>,
    gazetteer: Gazetteer,
    models: Mutex<HashMap<String, TermMatcher>>,
}

impl DictionaryBackend {
    pub fn new(seed: u64) -> Self {
        let vocab = BUNDLED_VOCAB
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Self::with_vocab(seed, vocab).expect("bundled vocabulary is non-empty")
    }

    pub fn with_vocab(seed: u64, vocab: Vec<String>) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::InvalidArgument("mock vocabulary is empty".into()));
        }
        Ok(Self {
            seed,
            vocab,
            gazetteer: Gazetteer::bundled().clone(),
            models: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_gazetteer(mut self, gazetteer: Gazetteer) -> Self {
        self.gazetteer = gazetteer;
        self
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    fn token_probability(token: &str) -> f64 {
        let h = stable_hash(&[b"pll", token.to_lowercase().as_bytes()]);
        0.05 + 0.9 * (h % 10_001) as f64 / 10_000.0
    }
}

impl Backend for DictionaryBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::MockDictionary,
            model_name: format!("mock-dictionary(seed={})", self.seed),
            max_input_tokens: MOCK_MAX_INPUT_TOKENS,
            base_url: None,
        }
    }

    fn capabilities(&self) -> Result<Capabilities> {
        Ok(Capabilities {
            model_name: format!("mock-dictionary(seed={})", self.seed),
            max_input_tokens: MOCK_MAX_INPUT_TOKENS,
            embedding_dim: MOCK_EMBEDDING_DIM,
            layers: vec![Layer::Pos, Layer::Ner, Layer::Medterm],
            pll: true,
            ner_training: true,
        })
    }

    fn fill_mask(&self, query: &FillMaskQuery) -> Result<FillMaskResult> {
        let text_hash = stable_hash(&[query.text.as_bytes()]);
        let k = query.top_k.min(self.vocab.len());
        let masks = (0..query.sentinel_count())
            .map(|i| {
                let slot = stable_hash(&[&(i as u64).to_be_bytes()]);
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ text_hash ^ slot);
                sample(&mut rng, self.vocab.len(), k)
                    .into_iter()
                    .enumerate()
                    .map(|(rank, w)| Candidate {
                        token: self.vocab[w].clone(),
                        score: 1.0 / (rank as f64 + 2.0),
                    })
                    .collect()
            })
            .collect();
        Ok(FillMaskResult { masks })
    }

    fn embed(&self, text: &str) -> Result<EmbeddingResult> {
        Ok(hashed_embedding(text))
    }

    fn pseudo_log_likelihood(&self, text: &str) -> Result<f64> {
        let tokens = tokenize_words(text, 0);
        if tokens.is_empty() {
            return Ok(0.0);
        }
        let total: f64 = tokens
            .iter()
            .map(|t| -Self::token_probability(&t.text).ln())
            .sum();
        Ok(total / tokens.len() as f64)
    }

    fn annotate(&self, text: &str, layers: &[Layer]) -> Result<AnnotationResult> {
        let mut spans = Vec::new();
        for layer in layers {
            match layer {
                Layer::Pos => spans.extend(heuristic_pos(text)),
                Layer::Ner | Layer::Medterm => spans.extend(self.gazetteer.spans(text, *layer)),
            }
        }
        Ok(AnnotationResult { spans })
    }

    fn ner_train(&self, dataset: &[NerExample], seed: u64, epochs: u32) -> Result<String> {
        let mut table = BTreeMap::new();
        for ex in dataset {
            let idx = CharIndex::new(&ex.text);
            let len = idx.char_len();
            for s in &ex.spans {
                if s.start >= s.end || s.end > len {
                    return Err(Error::Backend {
                        status: 400,
                        error: "bad_span".into(),
                        detail: format!("span [{}, {}) outside text of length {len}", s.start, s.end),
                    });
                }
                let surface = idx.slice(&ex.text, crate::text::CharSpan::new(s.start, s.end));
                table
                    .entry(surface.to_lowercase())
                    .or_insert_with(|| s.label.clone());
            }
        }
        let digest = serde_json::to_vec(dataset)?;
        let handle = format!(
            "dict-ner-{:016x}",
            stable_hash(&[&digest, &seed.to_be_bytes(), &epochs.to_be_bytes()])
        );
        self.models
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(handle.clone(), TermMatcher::new(&table));
        Ok(handle)
    }

    fn ner_predict(&self, model_handle: &str, texts: &[String]) -> Result<Vec<Vec<LabeledSpan>>> {
        let models = self.models.lock().unwrap_or_else(|e| e.into_inner());
        let model = models.get(model_handle).ok_or_else(|| Error::Backend {
            status: 404,
            error: "unknown_model".into(),
            detail: format!("no model with handle `{model_handle}`"),
        })?;
        Ok(texts.iter().map(|t| model.find(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelgate::ModelGate;
    use crate::text::char_slice;

    #[test]
    fn echo_returns_original_word() {
        let gate = ModelGate::new(EchoBackend::from_references(["He had a fall from a ladder"]));
        let out = gate
            .fill_mask(&FillMaskQuery::new("He had a [MASK] from a ladder", 5))
            .unwrap();
        assert_eq!(out.masks[0], vec![Candidate { token: "fall".into(), score: 1.0 }]);
    }

    #[test]
    fn echo_multi_mask_in_order() {
        let gate = ModelGate::new(EchoBackend::from_references([
            "unrelated text",
            "previously healthy presenting w/ fall",
        ]));
        let out = gate
            .fill_mask(&FillMaskQuery::new("[MASK] healthy [MASK] w/ fall", 1))
            .unwrap();
        let got: Vec<_> = out.masks.iter().map(|m| m[0].token.as_str()).collect();
        assert_eq!(got, vec!["previously", "presenting"]);
    }

    #[test]
    fn echo_without_reference_is_protocol_error() {
        let gate = ModelGate::new(EchoBackend::default());
        assert!(matches!(
            gate.fill_mask(&FillMaskQuery::new("a [MASK]", 1)),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn dictionary_fill_is_deterministic_and_from_vocab() {
        let a = DictionaryBackend::new(7);
        let b = DictionaryBackend::new(7);
        let q = FillMaskQuery::new("Patient is a [MASK] male with [MASK].", 5);
        let ra = a.fill_mask(&q).unwrap();
        assert_eq!(ra, b.fill_mask(&q).unwrap());
        assert_eq!(ra.masks.len(), 2);
        for list in &ra.masks {
            assert_eq!(list.len(), 5);
            assert!(list.iter().all(|c| a.vocabulary().contains(&c.token)));
            assert!(list.windows(2).all(|w| w[0].score > w[1].score));
        }
        let other = DictionaryBackend::new(8).fill_mask(&q).unwrap();
        assert_ne!(ra, other);
    }

    #[test]
    fn identical_tokens_embed_identically() {
        let e = DictionaryBackend::new(0).embed("a b a").unwrap();
        assert_eq!(e.vectors[0], e.vectors[2]);
        assert_ne!(e.vectors[0], e.vectors[1]);
        let norm: f64 = e.vectors[1].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn echo_pll_is_zero() {
        let gate = ModelGate::new(EchoBackend::default());
        assert_eq!(gate.pseudo_log_likelihood("any text").unwrap(), 0.0);
    }

    #[test]
    fn dictionary_pll_is_mean_of_token_nll() {
        let backend = DictionaryBackend::new(0);
        let p1 = DictionaryBackend::token_probability("cat");
        let p2 = DictionaryBackend::token_probability("sat");
        let want = (-p1.ln() - p2.ln()) / 2.0;
        assert!((backend.pseudo_log_likelihood("cat sat").unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn gazetteer_layers() {
        let gate = ModelGate::new(DictionaryBackend::new(0));
        let text = "Jone is living with Deep Vein Thrombosis";
        let ann = gate.annotate(text, &[Layer::Ner, Layer::Medterm]).unwrap();
        let ner: Vec<_> = ann
            .layer(Layer::Ner)
            .map(|s| (char_slice(text, crate::text::CharSpan::new(s.start, s.end)), s.label.as_str()))
            .collect();
        assert_eq!(ner, vec![("Jone", "PERSON"), ("Deep Vein Thrombosis", "DISEASE")]);
        let med: Vec<_> = ann.layer(Layer::Medterm).map(|s| s.label.as_str()).collect();
        assert_eq!(med, vec!["PROBLEM"]);
        assert!(gate.annotate("", &[Layer::Ner]).unwrap().spans.is_empty());
    }

    #[test]
    fn pos_tagger_marks_aux_and_verb() {
        let gate = ModelGate::new(DictionaryBackend::new(0));
        let ann = gate.annotate("Jone is living in Leeds.", &[Layer::Pos]).unwrap();
        let tags: Vec<_> = ann.spans.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(tags, vec!["NOUN", "AUX", "VERB", "ADP", "PROPN", "PUNCT"]);
    }

    #[test]
    fn memorising_ner_round_trip() {
        let gate = ModelGate::new(DictionaryBackend::new(0));
        let train = vec![NerExample {
            text: "given enoxaparin for DVT".into(),
            spans: vec![LabeledSpan::new(6, 16, "CHEMICAL"), LabeledSpan::new(21, 24, "DISEASE")],
        }];
        let h = gate.ner_train(&train, 1, 3).unwrap();
        assert_eq!(h, gate.ner_train(&train, 1, 3).unwrap());
        let pred = gate.ner_predict(&h, &["Enoxaparin stopped; DVT resolved".into()]).unwrap();
        assert_eq!(
            pred[0],
            vec![LabeledSpan::new(0, 10, "CHEMICAL"), LabeledSpan::new(20, 23, "DISEASE")]
        );
        assert!(matches!(
            gate.ner_predict("nope", &[]),
            Err(Error::Backend { status: 404, .. })
        ));
    }
}
