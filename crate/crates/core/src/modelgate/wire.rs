//! JSON bodies of the HTTP backend protocol.
//!
//! Every request except `capabilities` carries an `id` that the server
//! echoes back; the client rejects a response whose id differs.

use serde::{Deserialize, Serialize};

use super::{AnnotationSpan, Candidate, Layer, LabeledSpan, NerExample};

pub const CAPABILITIES: &str = "/v1/capabilities";
pub const FILL_MASK: &str = "/v1/fill_mask";
pub const EMBED: &str = "/v1/embed";
pub const PLL: &str = "/v1/pll";
pub const ANNOTATE: &str = "/v1/annotate";
pub const NER_TRAIN: &str = "/v1/ner/train";
pub const NER_PREDICT: &str = "/v1/ner/predict";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskRequest {
    pub id: String,
    pub text: String,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskCandidates {
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskResponse {
    pub id: String,
    pub masks: Vec<MaskCandidates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRequest {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub id: String,
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PllResponse {
    pub id: String,
    pub mean_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateRequest {
    pub id: String,
    pub text: String,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateResponse {
    pub id: String,
    pub spans: Vec<AnnotationSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerTrainRequest {
    pub id: String,
    pub dataset: Vec<NerExample>,
    pub seed: u64,
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerTrainResponse {
    pub id: String,
    pub model_handle: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerPredictRequest {
    pub id: String,
    pub model_handle: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerPredictResponse {
    pub id: String,
    pub per_text_spans: Vec<Vec<LabeledSpan>>,
}

/// Body of any 4xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default)]
    pub detail: String,
}
