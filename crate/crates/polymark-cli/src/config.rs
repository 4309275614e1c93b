//! Run configuration and attack manifest files.
//!
//! One JSON run config describes a whole experiment; each subcommand reads
//! the slice it needs. Input paths are resolved relative to the config
//! file's directory so configs stay relocatable; `out_dir` is resolved
//! relative to the working directory so outputs land where the tool runs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use polymark::attack::AttackKind;
use polymark::deltamodel::TrainingConfig;
use polymark::embedding::ToyEmbeddingConfig;
use polymark::hashing::sha256_hex;

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_order")]
    pub order: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Toy,
}

fn default_order() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SirLevel {
    Token,
    Cluster,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub level: SirLevel,
    #[serde(default)]
    pub embedding: ToyEmbeddingConfig,
    /// Optimizer settings; the seed inside is ignored, training randomness
    /// derives from the run seed.
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_pair_count")]
    pub pair_count: usize,
    #[serde(default = "default_pair_len_min")]
    pub pair_len_min: usize,
    #[serde(default = "default_pair_len_max")]
    pub pair_len_max: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_pair_count() -> usize {
    300
}
fn default_pair_len_min() -> usize {
    3
}
fn default_pair_len_max() -> usize {
    10
}
fn default_scale() -> f64 {
    4.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Detection scores of the unattacked watermarked corpus.
    pub before: PathBuf,
    /// Detection scores of the attacked corpus; defaults to `before`.
    #[serde(default)]
    pub after: Option<PathBuf>,
    /// Detection scores of an unwatermarked corpus, the ROC negative class.
    pub clean: PathBuf,
    #[serde(default = "default_bin_width")]
    pub bin_width: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_fpr_target")]
    pub fpr_target: f64,
}

fn default_bin_width() -> usize {
    25
}
fn default_epsilon() -> f64 {
    polymark::eval::DEFAULT_RE_EPSILON
}
fn default_fpr_target() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub vocab: PathBuf,
    #[serde(default)]
    pub dictionary: Option<PathBuf>,
    #[serde(default)]
    pub engine: Option<PathBuf>,
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    /// Generated corpus: written by `generate`, read by `attack`/`detect`.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub attack_manifest: Option<PathBuf>,
    #[serde(default)]
    pub clustering: Option<PathBuf>,
    /// Corpus `detect` reads; defaults to the `corpus` path.
    #[serde(default)]
    pub detect_input: Option<PathBuf>,
    /// Which text to score: response, attacked_response, or pivot_response.
    #[serde(default)]
    pub detect_field: Option<String>,
    pub model: ModelSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub evaluate: Option<EvaluateSection>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_max_len() -> usize {
    200
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslatorSection {
    #[serde(default = "default_translator_kind")]
    pub kind: String,
    #[serde(default)]
    pub noise_rate: Option<f64>,
    #[serde(default)]
    pub reorder_window: Option<usize>,
}

fn default_translator_kind() -> String {
    "mock".into()
}

impl Default for TranslatorSection {
    fn default() -> Self {
        Self {
            kind: default_translator_kind(),
            noise_rate: None,
            reorder_window: None,
        }
    }
}

/// What `attack` should do: the attack itself plus its knobs. An unknown
/// `kind` fails parsing, which surfaces as a usage error.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackManifest {
    pub kind: AttackKind,
    pub original_lang: String,
    #[serde(default)]
    pub pivot_lang: Option<String>,
    #[serde(default)]
    pub translator: TranslatorSection,
    /// Engine for pivot-language generation (CWRA); defaults to the run
    /// config's engine.
    #[serde(default)]
    pub engine: Option<PathBuf>,
    /// Input corpus override; defaults to the run config's corpus path.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub max_len: Option<usize>,
}

/// A run config together with where it came from and its byte digest.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub dir: PathBuf,
    pub sha256: String,
}

pub fn load_run_config(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading run config {}", path.display()))?;
    let config: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing run config {}", path.display()))?;
    if config.max_len == 0 {
        bail!("max_len must be at least 1");
    }
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let sha256 = sha256_hex(text.as_bytes());
    Ok(LoadedConfig { config, dir, sha256 })
}

pub fn load_attack_manifest(path: &Path) -> Result<(AttackManifest, String)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading attack manifest {}", path.display()))?;
    let manifest: AttackManifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing attack manifest {}", path.display()))?;
    if manifest.translator.kind != "mock" {
        bail!(
            "unsupported translator kind {:?}; only \"mock\" is built in",
            manifest.translator.kind
        );
    }
    let sha256 = sha256_hex(text.as_bytes());
    Ok((manifest, sha256))
}

impl LoadedConfig {
    /// Resolve an input path from the config against the config directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    /// An input path that must be present in the config and exist on disk.
    pub fn required_input(&self, field: &str, value: Option<&PathBuf>) -> Result<PathBuf> {
        let p = value.with_context(|| format!("run config is missing {field:?}"))?;
        let resolved = self.resolve(p);
        if !resolved.exists() {
            bail!("{field} path {} does not exist", resolved.display());
        }
        Ok(resolved)
    }
}
