//! Masked-LM capabilities behind one interface.
//!
//! [`Backend`] is implemented by the in-process mocks and by the HTTP
//! client. Callers go through [`ModelGate`], which checks every response
//! against the protocol invariants before handing it on.

mod mock;
mod remote;
pub mod wire;

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mock::{DictionaryBackend, EchoBackend, Gazetteer};
pub use remote::{RemoteBackend, RemoteOptions};

/// The literal mask token in every query.
pub const MASK_SENTINEL: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    MockEcho,
    MockDictionary,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock-echo" => Ok(Self::MockEcho),
            "mock-dictionary" => Ok(Self::MockDictionary),
            "remote" => Ok(Self::Remote),
            other => Err(Error::InvalidArgument(format!(
                "unknown backend kind `{other}` (expected mock-echo, mock-dictionary or remote)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub model_name: String,
    pub max_input_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Pos,
    Ner,
    Medterm,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub model_name: String,
    pub max_input_tokens: usize,
    pub embedding_dim: usize,
    pub layers: Vec<Layer>,
    /// Absent from older servers; assumed supported.
    #[serde(default = "yes")]
    pub pll: bool,
    #[serde(default = "yes")]
    pub ner_training: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskQuery {
    pub text: String,
    pub top_k: usize,
}

impl FillMaskQuery {
    pub fn new(text: impl Into<String>, top_k: usize) -> Self {
        Self {
            text: text.into(),
            top_k,
        }
    }

    pub fn sentinel_count(&self) -> usize {
        self.text.matches(MASK_SENTINEL).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    pub score: f64,
}

/// One candidate list per sentinel, in sentinel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskResult {
    pub masks: Vec<Vec<Candidate>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
    pub layer: Layer,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub spans: Vec<AnnotationSpan>,
}

impl AnnotationResult {
    pub fn layer(&self, layer: Layer) -> impl Iterator<Item = &AnnotationSpan> {
        self.spans.iter().filter(move |s| s.layer == layer)
    }
}

/// A labelled character span, as used for NER training and prediction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl LabeledSpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerExample {
    pub text: String,
    pub spans: Vec<LabeledSpan>,
}

/// Raw backend operations. Implementations do not need to validate their
/// own output; [`ModelGate`] does.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    fn capabilities(&self) -> Result<Capabilities>;
    fn fill_mask(&self, query: &FillMaskQuery) -> Result<FillMaskResult>;
    fn embed(&self, text: &str) -> Result<EmbeddingResult>;
    /// Mean negative log-probability per backend token.
    fn pseudo_log_likelihood(&self, text: &str) -> Result<f64>;
    fn annotate(&self, text: &str, layers: &[Layer]) -> Result<AnnotationResult>;
    fn ner_train(&self, dataset: &[NerExample], seed: u64, epochs: u32) -> Result<String>;
    fn ner_predict(&self, model_handle: &str, texts: &[String]) -> Result<Vec<Vec<LabeledSpan>>>;
}

/// Validating, shareable front end to a [`Backend`].
#[derive(Clone)]
pub struct ModelGate {
    backend: Arc<dyn Backend>,
    caps: Arc<OnceLock<Capabilities>>,
}

impl std::fmt::Debug for ModelGate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelGate")
            .field("descriptor", &self.backend.descriptor())
            .finish()
    }
}

impl ModelGate {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self::from_arc(Arc::new(backend))
    }

    pub fn from_arc(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            caps: Arc::new(OnceLock::new()),
        }
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        self.backend.descriptor()
    }

    /// Fetched once and cached for the lifetime of the gate.
    pub fn capabilities(&self) -> Result<Capabilities> {
        if let Some(c) = self.caps.get() {
            return Ok(c.clone());
        }
        let caps = self.backend.capabilities()?;
        if caps.max_input_tokens == 0 {
            return Err(Error::Protocol("capabilities report max_input_tokens = 0".into()));
        }
        Ok(self.caps.get_or_init(|| caps).clone())
    }

    /// All sentinels answered in one request. Candidate lists come back
    /// sorted by descending score, without the sentinel itself, and cut to
    /// `top_k`.
    pub fn fill_mask(&self, query: &FillMaskQuery) -> Result<FillMaskResult> {
        let expected = query.sentinel_count();
        if expected == 0 {
            return Err(Error::InvalidArgument("fill-mask query has no [MASK] sentinel".into()));
        }
        if query.top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be positive".into()));
        }
        let limit = self.capabilities()?.max_input_tokens;
        let words = crate::featurizer::tokenize_words(&query.text, 0).len();
        if words > limit {
            return Err(Error::InvalidArgument(format!(
                "query has {words} word tokens, backend limit is {limit}"
            )));
        }
        let mut result = self.backend.fill_mask(query)?;
        if result.masks.len() != expected {
            return Err(Error::Protocol(format!(
                "expected {expected} candidate lists, got {}",
                result.masks.len()
            )));
        }
        for list in &mut result.masks {
            if let Some(bad) = list.iter().find(|c| !(c.score > 0.0 && c.score <= 1.0)) {
                return Err(Error::Protocol(format!(
                    "candidate `{}` has score {} outside (0, 1]",
                    bad.token, bad.score
                )));
            }
            list.retain(|c| c.token != MASK_SENTINEL);
            list.sort_by(|a, b| b.score.total_cmp(&a.score));
            list.truncate(query.top_k);
        }
        Ok(result)
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingResult> {
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("cannot embed empty text".into()));
        }
        let result = self.backend.embed(text)?;
        if result.tokens.len() != result.vectors.len() {
            return Err(Error::Protocol(format!(
                "{} tokens but {} vectors",
                result.tokens.len(),
                result.vectors.len()
            )));
        }
        if let Some(first) = result.vectors.first() {
            let dim = first.len();
            if dim == 0 || result.vectors.iter().any(|v| v.len() != dim) {
                return Err(Error::Protocol("embedding vectors differ in dimension".into()));
            }
        }
        Ok(result)
    }

    pub fn pseudo_log_likelihood(&self, text: &str) -> Result<f64> {
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("cannot score empty text".into()));
        }
        if !self.capabilities()?.pll {
            return Err(Error::Capability("pseudo-log-likelihood scoring".into()));
        }
        let nll = self.backend.pseudo_log_likelihood(text)?;
        if !nll.is_finite() || nll < 0.0 {
            return Err(Error::Protocol(format!("mean_nll {nll} is not a non-negative number")));
        }
        Ok(nll)
    }

    /// Layers the backend does not offer are skipped silently.
    pub fn annotate(&self, text: &str, layers: &[Layer]) -> Result<AnnotationResult> {
        let offered = self.capabilities()?.layers;
        let wanted: Vec<Layer> = layers.iter().copied().filter(|l| offered.contains(l)).collect();
        if text.is_empty() || wanted.is_empty() {
            return Ok(AnnotationResult::default());
        }
        let mut result = self.backend.annotate(text, &wanted)?;
        let len = text.chars().count();
        if let Some(bad) = result.spans.iter().find(|s| s.start >= s.end || s.end > len) {
            return Err(Error::Protocol(format!(
                "annotation span [{}, {}) outside text of length {len}",
                bad.start, bad.end
            )));
        }
        result.spans.retain(|s| wanted.contains(&s.layer));
        Ok(result)
    }

    pub fn has_layer(&self, layer: Layer) -> Result<bool> {
        Ok(self.capabilities()?.layers.contains(&layer))
    }

    pub fn ner_train(&self, dataset: &[NerExample], seed: u64, epochs: u32) -> Result<String> {
        if !self.capabilities()?.ner_training {
            return Err(Error::Capability("NER training".into()));
        }
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("NER training set is empty".into()));
        }
        self.backend.ner_train(dataset, seed, epochs)
    }

    pub fn ner_predict(&self, model_handle: &str, texts: &[String]) -> Result<Vec<Vec<LabeledSpan>>> {
        let out = self.backend.ner_predict(model_handle, texts)?;
        if out.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "{} texts but {} prediction lists",
                texts.len(),
                out.len()
            )));
        }
        Ok(out)
    }
}
