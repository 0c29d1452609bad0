use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, ErrorBody};
use super::{
    AnnotationResult, Backend, BackendDescriptor, BackendKind, Capabilities, EmbeddingResult,
    FillMaskQuery, FillMaskResult, LabeledSpan, Layer, NerExample,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub base_url: String,
    pub timeout: Duration,
    /// Extra attempts after the first, for connection failures and 5xx.
    pub retries: u32,
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl RemoteOptions {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(60),
            retries: 2,
            backoff: Duration::from_millis(200),
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore capping concurrent requests.
#[derive(Debug)]
struct InFlight {
    busy: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut busy = self.busy.lock().unwrap_or_else(|e| e.into_inner());
        while *busy >= self.max {
            busy = self.freed.wait(busy).unwrap_or_else(|e| e.into_inner());
        }
        *busy += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut busy = self.0.busy.lock().unwrap_or_else(|e| e.into_inner());
        *busy -= 1;
        self.0.freed.notify_one();
    }
}

/// HTTP client for the backend protocol in [`wire`].
#[derive(Debug)]
pub struct RemoteBackend {
    client: Client,
    options: RemoteOptions,
    model_name: String,
    max_input_tokens: usize,
    next_id: AtomicU64,
    in_flight: InFlight,
}

impl RemoteBackend {
    /// Builds the client and probes `/v1/capabilities` once so the
    /// descriptor can report the served model.
    pub fn connect(options: RemoteOptions) -> Result<Self> {
        let mut backend = Self::unprobed(options)?;
        let caps = backend.capabilities()?;
        backend.model_name = caps.model_name;
        backend.max_input_tokens = caps.max_input_tokens;
        Ok(backend)
    }

    /// No network traffic until the first call.
    pub fn unprobed(options: RemoteOptions) -> Result<Self> {
        if options.base_url.trim().is_empty() {
            return Err(Error::InvalidArgument("remote backend requires a base URL".into()));
        }
        let client = Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| Error::Transport {
                detail: e.to_string(),
                retries: 0,
            })?;
        let max = options.max_in_flight.max(1);
        Ok(Self {
            client,
            options,
            model_name: String::new(),
            max_input_tokens: 0,
            next_id: AtomicU64::new(1),
            in_flight: InFlight {
                busy: Mutex::new(0),
                freed: Condvar::new(),
                max,
            },
        })
    }

    fn fresh_id(&self) -> String {
        format!("req-{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.options.base_url.trim_end_matches('/'), path)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let _permit = self.in_flight.acquire();
        let url = self.url(path);
        let mut attempt = 0u32;
        loop {
            let failure = match self.client.post(&url).json(body).send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let bytes = resp.bytes().map_err(|e| Error::Transport {
                            detail: e.to_string(),
                            retries: attempt,
                        })?;
                        return serde_json::from_slice(&bytes).map_err(|e| {
                            Error::Protocol(format!("malformed response from {path}: {e}"))
                        });
                    }
                    let text = resp.text().unwrap_or_default();
                    if status.is_client_error() {
                        let body: ErrorBody =
                            serde_json::from_str(&text).unwrap_or_else(|_| ErrorBody {
                                error: "http_error".into(),
                                detail: text.clone(),
                            });
                        return Err(Error::Backend {
                            status: status.as_u16(),
                            error: body.error,
                            detail: body.detail,
                        });
                    }
                    format!("{url}: HTTP {status}: {text}")
                }
                Err(e) => format!("{url}: {e}"),
            };
            if attempt >= self.options.retries {
                return Err(Error::Transport {
                    detail: failure,
                    retries: attempt,
                });
            }
            log::warn!("backend request failed (attempt {}): {failure}", attempt + 1);
            std::thread::sleep(self.options.backoff * 2u32.saturating_pow(attempt));
            attempt += 1;
        }
    }

    fn check_id(sent: &str, got: &str) -> Result<()> {
        if sent == got {
            Ok(())
        } else {
            Err(Error::Protocol(format!("response id `{got}` does not match request `{sent}`")))
        }
    }
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Remote,
            model_name: self.model_name.clone(),
            max_input_tokens: self.max_input_tokens,
            base_url: Some(self.options.base_url.clone()),
        }
    }

    fn capabilities(&self) -> Result<Capabilities> {
        self.post(wire::CAPABILITIES, &serde_json::json!({}))
    }

    fn fill_mask(&self, query: &FillMaskQuery) -> Result<FillMaskResult> {
        let id = self.fresh_id();
        let resp: wire::FillMaskResponse = self.post(
            wire::FILL_MASK,
            &wire::FillMaskRequest {
                id: id.clone(),
                text: query.text.clone(),
                top_k: query.top_k,
            },
        )?;
        Self::check_id(&id, &resp.id)?;
        Ok(FillMaskResult {
            masks: resp.masks.into_iter().map(|m| m.candidates).collect(),
        })
    }

    fn embed(&self, text: &str) -> Result<EmbeddingResult> {
        let id = self.fresh_id();
        let resp: wire::EmbedResponse = self.post(
            wire::EMBED,
            &wire::TextRequest {
                id: id.clone(),
                text: text.into(),
            },
        )?;
        Self::check_id(&id, &resp.id)?;
        Ok(EmbeddingResult {
            tokens: resp.tokens,
            vectors: resp.vectors,
            truncated: resp.truncated,
        })
    }

    fn pseudo_log_likelihood(&self, text: &str) -> Result<f64> {
        let id = self.fresh_id();
        let resp: wire::PllResponse = self.post(
            wire::PLL,
            &wire::TextRequest {
                id: id.clone(),
                text: text.into(),
            },
        )?;
        Self::check_id(&id, &resp.id)?;
        Ok(resp.mean_nll)
    }

    fn annotate(&self, text: &str, layers: &[Layer]) -> Result<AnnotationResult> {
        let id = self.fresh_id();
        let resp: wire::AnnotateResponse = self.post(
            wire::ANNOTATE,
            &wire::AnnotateRequest {
                id: id.clone(),
                text: text.into(),
                layers: layers.to_vec(),
            },
        )?;
        Self::check_id(&id, &resp.id)?;
        Ok(AnnotationResult { spans: resp.spans })
    }

    fn ner_train(&self, dataset: &[NerExample], seed: u64, epochs: u32) -> Result<String> {
        let id = self.fresh_id();
        let resp: wire::NerTrainResponse = self.post(
            wire::NER_TRAIN,
            &wire::NerTrainRequest {
                id: id.clone(),
                dataset: dataset.to_vec(),
                seed,
                epochs,
            },
        )?;
        Self::check_id(&id, &resp.id)?;
        Ok(resp.model_handle)
    }

    fn ner_predict(&self, model_handle: &str, texts: &[String]) -> Result<Vec<Vec<LabeledSpan>>> {
        let id = self.fresh_id();
        let resp: wire::NerPredictResponse = self.post(
            wire::NER_PREDICT,
            &wire::NerPredictRequest {
                id: id.clone(),
                model_handle: model_handle.into(),
                texts: texts.to_vec(),
            },
        )?;
        Self::check_id(&id, &resp.id)?;
        Ok(resp.per_text_spans)
    }
}
