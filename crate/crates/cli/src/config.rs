//! Run configuration: TOML file, then environment, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthmask::chunker::{ChunkConfig, TuningParams};
use synthmask::generator::{InfillOptions, Selection};
use synthmask::maskplanner::{parse_sweep, MaskSpec};
use synthmask::modelgate::BackendKind;
use synthmask::nerharness::NerConfig;
use synthmask::{Error, Result};

pub const BACKEND_URL_ENV: &str = "SYNTHMASK_BACKEND_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub letters: PathBuf,
    pub annotations: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub stopwords: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            letters: PathBuf::from("letters.csv"),
            annotations: None,
            output_dir: PathBuf::from("out"),
            stopwords: None,
            dictionary: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub url: Option<String>,
    pub model: Option<String>,
    /// Seed of the dictionary mock's candidate draws.
    pub seed: u64,
    pub timeout_secs: u64,
    pub retries: u32,
    pub max_in_flight: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::MockDictionary,
            url: None,
            model: None,
            seed: 0,
            timeout_secs: 60,
            retries: 2,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingSection {
    pub max_lines: usize,
    pub max_tokens: usize,
    pub coarse_step: usize,
    pub fine_step: usize,
    pub plateau_epsilon: f64,
}

impl Default for ChunkingSection {
    fn default() -> Self {
        let c = ChunkConfig::default();
        let t = TuningParams::default();
        Self {
            max_lines: c.max_lines,
            max_tokens: c.max_tokens,
            coarse_step: t.coarse_step,
            fine_step: t.fine_step,
            plateau_epsilon: t.plateau_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub strategy: String,
    pub seed: u64,
    /// 0 means greedy; k > 0 samples among the best k.
    pub top_k_sample: usize,
    pub retry_invalid: u32,
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self {
            strategy: "random:0.4".into(),
            seed: 42,
            top_k_sample: 0,
            retry_invalid: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub bertscore: bool,
    pub perplexity: bool,
    pub sweep: Option<String>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            bertscore: true,
            perplexity: true,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessSection {
    pub fill_blanks: bool,
    pub spelling: bool,
    pub max_edit_distance: usize,
}

impl Default for PostprocessSection {
    fn default() -> Self {
        Self {
            fill_blanks: true,
            spelling: true,
            max_edit_distance: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NerSection {
    pub test_fraction: f64,
    pub split_seed: u64,
    pub epochs: u32,
    /// Masking used to build the synthetic side when no synthetic file is
    /// given.
    pub strategy: String,
}

impl Default for NerSection {
    fn default() -> Self {
        let d = NerConfig::default();
        Self {
            test_fraction: d.test_fraction,
            split_seed: d.split_seed,
            epochs: d.epochs,
            strategy: "random:0.3".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub backend: BackendSection,
    pub chunking: ChunkingSection,
    pub generation: GenerationSection,
    pub metrics: MetricsSection,
    pub postprocess: PostprocessSection,
    pub ner: NerSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub letters: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub backend_url: Option<String>,
    pub strategy: Option<String>,
    pub seed: Option<u64>,
    pub max_lines: Option<usize>,
    pub max_tokens: Option<usize>,
    pub top_k_sample: Option<usize>,
    pub retry_invalid: Option<u32>,
    pub dictionary: Option<PathBuf>,
    pub max_edit_distance: Option<usize>,
    pub sweep: Option<String>,
    pub no_bertscore: bool,
    pub no_perplexity: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Layer the environment and the flags over the file values, then
    /// validate.
    pub fn resolve(mut self, flags: Overrides, env_url: Option<String>) -> Result<Self> {
        set(&mut self.paths.letters, flags.letters);
        if flags.annotations.is_some() {
            self.paths.annotations = flags.annotations;
        }
        set(&mut self.paths.output_dir, flags.output_dir);
        set(&mut self.backend.kind, flags.backend);
        if let Some(url) = flags.backend_url.or(env_url).filter(|u| !u.trim().is_empty()) {
            self.backend.url = Some(url);
        }
        set(&mut self.generation.strategy, flags.strategy);
        set(&mut self.generation.seed, flags.seed);
        set(&mut self.chunking.max_lines, flags.max_lines);
        set(&mut self.chunking.max_tokens, flags.max_tokens);
        set(&mut self.generation.top_k_sample, flags.top_k_sample);
        set(&mut self.generation.retry_invalid, flags.retry_invalid);
        if flags.dictionary.is_some() {
            self.paths.dictionary = flags.dictionary;
        }
        set(&mut self.postprocess.max_edit_distance, flags.max_edit_distance);
        if flags.sweep.is_some() {
            self.metrics.sweep = flags.sweep;
        }
        if flags.no_bertscore {
            self.metrics.bertscore = false;
        }
        if flags.no_perplexity {
            self.metrics.perplexity = false;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.chunk_config()?;
        self.tuning_params();
        self.mask_spec()?;
        self.ner_spec()?;
        if let Some(sweep) = &self.metrics.sweep {
            parse_sweep(sweep)?;
        }
        if self.backend.kind == BackendKind::Remote && self.backend.url.is_none() {
            return Err(Error::Validation(format!(
                "remote backend needs backend.url, --backend-url or {BACKEND_URL_ENV}"
            )));
        }
        if self.backend.max_in_flight == 0 {
            return Err(Error::Validation("backend.max_in_flight must be positive".into()));
        }
        if !(self.ner.test_fraction > 0.0 && self.ner.test_fraction < 1.0) {
            return Err(Error::Validation("ner.test_fraction must lie strictly between 0 and 1".into()));
        }
        if self.chunking.coarse_step == 0 || self.chunking.fine_step == 0 {
            return Err(Error::Validation("chunking steps must be positive".into()));
        }
        if !(self.chunking.plateau_epsilon > 0.0) {
            return Err(Error::Validation("chunking.plateau_epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn chunk_config(&self) -> Result<ChunkConfig> {
        ChunkConfig::new(self.chunking.max_lines, self.chunking.max_tokens)
    }

    pub fn tuning_params(&self) -> TuningParams {
        TuningParams {
            coarse_step: self.chunking.coarse_step,
            fine_step: self.chunking.fine_step,
            plateau_epsilon: self.chunking.plateau_epsilon,
        }
    }

    pub fn mask_spec(&self) -> Result<MaskSpec> {
        self.generation.strategy.parse()
    }

    pub fn ner_spec(&self) -> Result<MaskSpec> {
        self.ner.strategy.parse()
    }

    pub fn infill_options(&self) -> InfillOptions {
        InfillOptions {
            selection: match self.generation.top_k_sample {
                0 => Selection::Greedy,
                k => Selection::TopKSample { k },
            },
            retry_invalid: self.generation.retry_invalid,
        }
    }

    pub fn ner_config(&self) -> NerConfig {
        NerConfig {
            test_fraction: self.ner.test_fraction,
            split_seed: self.ner.split_seed,
            epochs: self.ner.epochs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.chunking.max_lines, 41);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[generation]\nstrategy = \"random:0.2\"\nsed = 1\n").is_err());
        assert!(RunConfig::parse("[nonsense]\n").is_err());
    }

    #[test]
    fn precedence_flag_over_env_over_file() {
        let cfg = RunConfig::parse("[backend]\nkind = \"remote\"\nurl = \"http://file\"\n").unwrap();
        let r = cfg.clone().resolve(Overrides::default(), Some("http://env".into())).unwrap();
        assert_eq!(r.backend.url.as_deref(), Some("http://env"));
        let flags = Overrides {
            backend_url: Some("http://flag".into()),
            ..Default::default()
        };
        let r = cfg.resolve(flags, Some("http://env".into())).unwrap();
        assert_eq!(r.backend.url.as_deref(), Some("http://flag"));
    }

    #[test]
    fn validation_catches_bad_values() {
        let bad = |toml: &str| RunConfig::parse(toml).unwrap().resolve(Overrides::default(), None).is_err();
        assert!(bad("[generation]\nstrategy = \"random:1.5\"\n"));
        assert!(bad("[chunking]\nmax_tokens = 0\n"));
        assert!(bad("[backend]\nkind = \"remote\"\n"));
        assert!(bad("[metrics]\nsweep = \"random:0..1\"\n"));
        assert!(!bad("[generation]\nstrategy = \"hybrid:(pos:noun:0.5,stopwords:0.5)\"\n"));
    }
}
