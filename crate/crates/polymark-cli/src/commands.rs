//! Subcommand implementations.
//!
//! Each command runs in two phases. The prepare phase loads and validates
//! configuration (missing fields, absent files, malformed config JSON) and
//! its failures exit with code 2. The execute phase does the work (data
//! loads, artifact checks, computation, output writes) and its failures exit
//! with code 1. Outputs are sorted by record id and carry a provenance meta
//! line (or sibling meta file), so a rerun with the same inputs is
//! byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use polymark::attack::{
    cwra, paraphrase_attack, retranslation_attack, AttackKind, AttackSpec,
    MockDictionaryTranslator, MockTranslatorConfig,
};
use polymark::cluster::{cluster_vocabulary, BilingualDictionary, SemanticClustering};
use polymark::corpus::{
    read_corpus, read_detections, write_jsonl, CorpusRecord, DetectionOutput, Provenance,
};
use polymark::deltamodel::{synthesize_training_pairs, train, SirArtifact, WatermarkModel};
use polymark::embedding::ToyEmbedding;
use polymark::eval::{
    pcc, relative_error, roc, strength_vs_length_report, tpr_at_fpr, DetectionRecord, Label,
    ScoredText, StrengthSeries,
};
use polymark::hashing::{self, domain, fnv1a64};
use polymark::lm::{generate, TokenSequence, ToyLm, Vocabulary};
use polymark::watermark::{BuiltEngine, EngineConfig};

use crate::config::{
    load_attack_manifest, load_run_config, sha256_file, EvaluateSection, LoadedConfig, ModelKind,
    SirLevel,
};

/// A failure tagged with the exit code it deserves.
#[derive(Debug)]
pub enum CmdError {
    /// Bad invocation or configuration; exit code 2.
    Usage(anyhow::Error),
    /// Failure while doing the work; exit code 1.
    Runtime(anyhow::Error),
}

impl CmdError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CmdError::Usage(_) => 2,
            CmdError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CmdError::Usage(e) | CmdError::Runtime(e) => format!("{e:#}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CommonArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

struct Ctx {
    loaded: LoadedConfig,
    seed: u64,
    out_dir: PathBuf,
    jobs: usize,
}

fn context(args: &CommonArgs) -> Result<Ctx> {
    let path = args
        .config
        .as_deref()
        .context("missing required --config <run-config.json>")?;
    let loaded = load_run_config(path)?;
    let seed = args.seed.unwrap_or(loaded.config.seed);
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| loaded.config.out_dir.clone());
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    Ok(Ctx {
        loaded,
        seed,
        out_dir,
        jobs: args.jobs,
    })
}

impl Ctx {
    fn load_vocab(&self) -> Result<(Arc<Vocabulary>, PathBuf)> {
        let path = self
            .loaded
            .required_input("vocab", Some(&self.loaded.config.vocab))?;
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let vocab = Vocabulary::from_tsv_str(&text)
            .with_context(|| format!("parsing vocabulary {}", path.display()))?;
        Ok((Arc::new(vocab), path))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .context("building worker pool")
    }

    fn provenance(&self, kind: &str, manifest_sha256: Option<String>) -> Provenance {
        Provenance {
            kind: kind.into(),
            seed: self.seed,
            config_sha256: self.loaded.sha256.clone(),
            manifest_sha256,
        }
    }
}

/// Engine config plus the directory its relative artifact paths resolve
/// against.
struct EnginePlan {
    config: EngineConfig,
    path: PathBuf,
    base_dir: PathBuf,
}

fn engine_plan(path: PathBuf) -> Result<EnginePlan> {
    let config = EngineConfig::from_json_path(&path)
        .with_context(|| format!("parsing engine config {}", path.display()))?;
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(EnginePlan {
        config,
        path,
        base_dir,
    })
}

impl EnginePlan {
    fn needs_clustering(&self) -> bool {
        matches!(
            self.config,
            EngineConfig::Sir { .. } | EngineConfig::Xsir { .. }
        )
    }

    fn build(
        &self,
        vocab_size: usize,
        clustering: Option<&Arc<SemanticClustering>>,
    ) -> Result<BuiltEngine> {
        self.config
            .build(vocab_size, clustering, &self.base_dir)
            .with_context(|| format!("building engine from {}", self.path.display()))
    }
}

fn load_clustering(path: &Path) -> Result<Arc<SemanticClustering>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let clustering = SemanticClustering::from_json_str(&text)
        .with_context(|| format!("parsing clustering {}", path.display()))?;
    Ok(Arc::new(clustering))
}

fn toy_model(ctx: &Ctx, vocab: &Arc<Vocabulary>) -> ToyLm {
    let m = &ctx.loaded.config.model;
    match m.kind {
        ModelKind::Toy => ToyLm::with_order(Arc::clone(vocab), m.seed, m.order.max(1)),
    }
}

fn write_meta_sibling(path: &Path, meta: &Provenance) -> Result<()> {
    #[derive(Serialize)]
    struct MetaDoc<'a> {
        meta: &'a Provenance,
    }
    let sibling = path.with_extension("meta.json");
    let mut text = serde_json::to_string_pretty(&MetaDoc { meta })?;
    text.push('\n');
    fs::write(&sibling, text).with_context(|| format!("writing {}", sibling.display()))?;
    Ok(())
}

// ---------------------------------------------------------------- generate

pub fn cmd_generate(args: &CommonArgs) -> Result<(), CmdError> {
    let prep = (|| -> Result<_> {
        let ctx = context(args)?;
        let (vocab, _) = ctx.load_vocab()?;
        let engine = engine_plan(
            ctx.loaded
                .required_input("engine", ctx.loaded.config.engine.as_ref())?,
        )?;
        let prompts = ctx
            .loaded
            .required_input("prompts", ctx.loaded.config.prompts.as_ref())?;
        let clustering_path = if engine.needs_clustering() {
            Some(
                ctx.loaded
                    .required_input("clustering", ctx.loaded.config.clustering.as_ref())?,
            )
        } else {
            None
        };
        Ok((ctx, vocab, engine, prompts, clustering_path))
    })()
    .map_err(CmdError::Usage)?;
    let (ctx, vocab, engine, prompts_path, clustering_path) = prep;

    (|| -> Result<()> {
        let clustering = clustering_path.as_deref().map(load_clustering).transpose()?;
        let built = engine.build(vocab.len(), clustering.as_ref())?;
        let model = toy_model(&ctx, &vocab);
        let (_, prompts) = read_corpus(&prompts_path)
            .with_context(|| format!("reading prompts {}", prompts_path.display()))?;
        let max_len = ctx.loaded.config.max_len;

        let mut records: Vec<CorpusRecord> = ctx.pool()?.install(|| {
            prompts
                .par_iter()
                .map(|rec| -> Result<CorpusRecord> {
                    let prompt = TokenSequence::new(rec.prompt.clone(), rec.language.clone());
                    let sub = hashing::derive_chain(
                        ctx.seed,
                        &[domain::CLI_GENERATE, fnv1a64(rec.id.as_bytes())],
                    );
                    let response = generate(&model, &prompt, max_len, built.as_dyn(), sub)
                        .with_context(|| format!("generating response for {}", rec.id))?;
                    Ok(CorpusRecord {
                        id: rec.id.clone(),
                        prompt: rec.prompt.clone(),
                        response: response.ids,
                        language: rec.language.clone(),
                        pivot_response: None,
                        attacked_response: None,
                        attack: None,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        records.sort_by(|a, b| a.id.cmp(&b.id));

        let meta = ctx.provenance("generate", Some(sha256_file(&engine.path)?));
        let out = ctx.out_dir.join("corpus.jsonl");
        write_jsonl(&out, Some(&meta), &records)
            .with_context(|| format!("writing {}", out.display()))?;
        println!(
            "generate: {} responses ({}) -> {}",
            records.len(),
            engine.config.scheme_name(),
            out.display()
        );
        Ok(())
    })()
    .map_err(CmdError::Runtime)
}

// ------------------------------------------------------------------ attack

pub fn cmd_attack(args: &CommonArgs) -> Result<(), CmdError> {
    let prep = (|| -> Result<_> {
        let ctx = context(args)?;
        let (vocab, _) = ctx.load_vocab()?;
        let manifest_path = ctx
            .loaded
            .required_input("attack_manifest", ctx.loaded.config.attack_manifest.as_ref())?;
        let (manifest, manifest_sha) = load_attack_manifest(&manifest_path)?;
        let manifest_dir = manifest_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));

        let spec = AttackSpec {
            kind: manifest.kind,
            original_lang: manifest.original_lang.clone(),
            pivot_lang: manifest.pivot_lang.clone(),
        };
        spec.validate()?;

        let clustering_path = ctx
            .loaded
            .required_input("clustering", ctx.loaded.config.clustering.as_ref())?;

        // Input corpus: manifest override, else the run config's corpus.
        let corpus_path = match &manifest.corpus {
            Some(p) => {
                let resolved = if p.is_absolute() {
                    p.clone()
                } else {
                    manifest_dir.join(p)
                };
                if !resolved.exists() {
                    bail!("corpus path {} does not exist", resolved.display());
                }
                resolved
            }
            None => ctx
                .loaded
                .required_input("corpus", ctx.loaded.config.corpus.as_ref())?,
        };

        // CWRA regenerates in the pivot language, so it needs an engine.
        let engine = if manifest.kind == AttackKind::Cwra {
            let path = match &manifest.engine {
                Some(p) => {
                    let resolved = if p.is_absolute() {
                        p.clone()
                    } else {
                        manifest_dir.join(p)
                    };
                    if !resolved.exists() {
                        bail!("engine path {} does not exist", resolved.display());
                    }
                    resolved
                }
                None => ctx
                    .loaded
                    .required_input("engine", ctx.loaded.config.engine.as_ref())?,
            };
            Some(engine_plan(path)?)
        } else {
            None
        };

        Ok((
            ctx,
            vocab,
            manifest,
            manifest_sha,
            spec,
            clustering_path,
            corpus_path,
            engine,
        ))
    })()
    .map_err(CmdError::Usage)?;
    let (ctx, vocab, manifest, manifest_sha, spec, clustering_path, corpus_path, engine) = prep;

    (|| -> Result<()> {
        let clustering = load_clustering(&clustering_path)?;
        let mut translator_config = MockTranslatorConfig {
            seed: ctx.seed,
            ..Default::default()
        };
        if let Some(n) = manifest.translator.noise_rate {
            translator_config.noise_rate = n;
        }
        if let Some(w) = manifest.translator.reorder_window {
            translator_config.reorder_window = w;
        }
        let translator = MockDictionaryTranslator::new(
            Arc::clone(&vocab),
            Arc::clone(&clustering),
            translator_config,
        )?;

        let built = match &engine {
            Some(plan) => Some(plan.build(vocab.len(), Some(&clustering))?),
            None => None,
        };
        let model = toy_model(&ctx, &vocab);
        let max_len = manifest.max_len.unwrap_or(ctx.loaded.config.max_len);

        let (_, input) = read_corpus(&corpus_path)
            .with_context(|| format!("reading corpus {}", corpus_path.display()))?;

        let mut records: Vec<CorpusRecord> = ctx.pool()?.install(|| {
            input
                .par_iter()
                .map(|rec| -> Result<CorpusRecord> {
                    if rec.language != spec.original_lang {
                        bail!(
                            "record {} is in language {:?} but the attack expects {:?}",
                            rec.id,
                            rec.language,
                            spec.original_lang
                        );
                    }
                    let mut out = rec.clone();
                    out.attack = Some(manifest.kind.to_string());
                    match manifest.kind {
                        AttackKind::ReTranslation => {
                            let seq =
                                TokenSequence::new(rec.response.clone(), rec.language.clone());
                            let rt = retranslation_attack(&seq, &translator, &spec)
                                .with_context(|| format!("attacking {}", rec.id))?;
                            out.pivot_response = Some(rt.pivot_response.ids);
                            out.attacked_response = Some(rt.attacked_response.ids);
                        }
                        AttackKind::Paraphrase => {
                            let seq =
                                TokenSequence::new(rec.response.clone(), rec.language.clone());
                            let attacked = paraphrase_attack(&seq, &translator)
                                .with_context(|| format!("attacking {}", rec.id))?;
                            out.attacked_response = Some(attacked.ids);
                        }
                        AttackKind::Cwra => {
                            let prompt =
                                TokenSequence::new(rec.prompt.clone(), rec.language.clone());
                            let sub = hashing::derive_chain(
                                ctx.seed,
                                &[domain::CLI_ATTACK, fnv1a64(rec.id.as_bytes())],
                            );
                            let outcome = cwra(
                                &prompt,
                                &model,
                                built.as_ref().and_then(|b| b.as_dyn()),
                                &translator,
                                &spec,
                                max_len,
                                sub,
                            )
                            .with_context(|| format!("attacking {}", rec.id))?;
                            out.pivot_response = Some(outcome.pivot_response.ids);
                            out.attacked_response = Some(outcome.final_response.ids);
                        }
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        records.sort_by(|a, b| a.id.cmp(&b.id));

        let meta = ctx.provenance("attack", Some(manifest_sha));
        let out = ctx.out_dir.join("attacked.jsonl");
        write_jsonl(&out, Some(&meta), &records)
            .with_context(|| format!("writing {}", out.display()))?;
        println!(
            "attack: {} records ({}) -> {}",
            records.len(),
            manifest.kind,
            out.display()
        );
        Ok(())
    })()
    .map_err(CmdError::Runtime)
}

// ------------------------------------------------------------------ detect

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DetectField {
    Response,
    AttackedResponse,
    PivotResponse,
}

impl DetectField {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "response" => Ok(Self::Response),
            "attacked_response" => Ok(Self::AttackedResponse),
            "pivot_response" => Ok(Self::PivotResponse),
            other => bail!(
                "unknown detect_field {other:?}; expected response, attacked_response, or pivot_response"
            ),
        }
    }

    fn extract<'a>(&self, rec: &'a CorpusRecord) -> Result<&'a [u32]> {
        match self {
            Self::Response => Ok(&rec.response),
            Self::AttackedResponse => rec
                .attacked_response
                .as_deref()
                .with_context(|| format!("record {} has no attacked_response", rec.id)),
            Self::PivotResponse => rec
                .pivot_response
                .as_deref()
                .with_context(|| format!("record {} has no pivot_response", rec.id)),
        }
    }
}

pub fn cmd_detect(args: &CommonArgs) -> Result<(), CmdError> {
    let prep = (|| -> Result<_> {
        let ctx = context(args)?;
        let (vocab, _) = ctx.load_vocab()?;
        let engine = engine_plan(
            ctx.loaded
                .required_input("engine", ctx.loaded.config.engine.as_ref())?,
        )?;
        let input = ctx.loaded.required_input(
            "detect_input (or corpus)",
            ctx.loaded
                .config
                .detect_input
                .as_ref()
                .or(ctx.loaded.config.corpus.as_ref()),
        )?;
        let field = DetectField::parse(
            ctx.loaded
                .config
                .detect_field
                .as_deref()
                .unwrap_or("response"),
        )?;
        let clustering_path = if engine.needs_clustering() {
            Some(
                ctx.loaded
                    .required_input("clustering", ctx.loaded.config.clustering.as_ref())?,
            )
        } else {
            None
        };
        Ok((ctx, vocab, engine, input, field, clustering_path))
    })()
    .map_err(CmdError::Usage)?;
    let (ctx, vocab, engine, input_path, field, clustering_path) = prep;

    (|| -> Result<()> {
        let clustering = clustering_path.as_deref().map(load_clustering).transpose()?;
        let built = engine.build(vocab.len(), clustering.as_ref())?;
        let model = toy_model(&ctx, &vocab);
        let (_, input) = read_corpus(&input_path)
            .with_context(|| format!("reading corpus {}", input_path.display()))?;

        let mut outputs: Vec<DetectionOutput> = ctx.pool()?.install(|| {
            input
                .par_iter()
                .map(|rec| -> Result<DetectionOutput> {
                    let ids = field.extract(rec)?;
                    let score = built
                        .score(ids, &model)
                        .with_context(|| format!("scoring {}", rec.id))?;
                    Ok(DetectionOutput {
                        id: rec.id.clone(),
                        score: score.value,
                        scheme: score.scheme,
                        token_count: score.token_count,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        outputs.sort_by(|a, b| a.id.cmp(&b.id));

        let meta = ctx.provenance("detect", Some(sha256_file(&engine.path)?));
        let out = ctx.out_dir.join("detections.jsonl");
        write_jsonl(&out, Some(&meta), &outputs)
            .with_context(|| format!("writing {}", out.display()))?;
        println!(
            "detect: {} scores ({}) -> {}",
            outputs.len(),
            engine.config.scheme_name(),
            out.display()
        );
        Ok(())
    })()
    .map_err(CmdError::Runtime)
}

// ----------------------------------------------------------------- cluster

pub fn cmd_cluster(args: &CommonArgs) -> Result<(), CmdError> {
    let prep = (|| -> Result<_> {
        let ctx = context(args)?;
        let (vocab, _) = ctx.load_vocab()?;
        let dict_path = ctx
            .loaded
            .required_input("dictionary", ctx.loaded.config.dictionary.as_ref())?;
        Ok((ctx, vocab, dict_path))
    })()
    .map_err(CmdError::Usage)?;
    let (ctx, vocab, dict_path) = prep;

    (|| -> Result<()> {
        let text = fs::read_to_string(&dict_path)
            .with_context(|| format!("reading {}", dict_path.display()))?;
        let dict = BilingualDictionary::from_tsv_str(&text)
            .with_context(|| format!("parsing dictionary {}", dict_path.display()))?;
        let (clustering, graph) = cluster_vocabulary(&vocab, &dict)?;

        let out = ctx.out_dir.join("clustering.json");
        fs::write(&out, clustering.to_json_string() + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
        write_meta_sibling(&out, &ctx.provenance("cluster", Some(sha256_file(&dict_path)?)))?;
        println!(
            "cluster: {} clusters over {} tokens, {} dictionary pairs skipped -> {}",
            clustering.num_clusters(),
            clustering.len(),
            graph.skipped_pairs,
            out.display()
        );
        Ok(())
    })()
    .map_err(CmdError::Runtime)
}

// --------------------------------------------------------------- train-sir

pub fn cmd_train_sir(args: &CommonArgs) -> Result<(), CmdError> {
    let prep = (|| -> Result<_> {
        let ctx = context(args)?;
        let (vocab, _) = ctx.load_vocab()?;
        let clustering_path = ctx
            .loaded
            .required_input("clustering", ctx.loaded.config.clustering.as_ref())?;
        let section = ctx
            .loaded
            .config
            .train
            .clone()
            .context("run config is missing the \"train\" section")?;
        section.training.validate()?;
        if section.embedding.dim < 2 {
            bail!("embedding dim must be at least 2");
        }
        if !(section.embedding.decay > 0.0 && section.embedding.decay <= 1.0) {
            bail!("embedding decay must be in (0, 1]");
        }
        if section.embedding.context_window == 0 {
            bail!("embedding context_window must be at least 1");
        }
        if section.pair_len_min < 1 || section.pair_len_min > section.pair_len_max {
            bail!("pair length range must satisfy 1 <= min <= max");
        }
        if section.pair_count == 0 {
            bail!("pair_count must be at least 1");
        }
        if !(section.scale.is_finite() && section.scale >= 0.0) {
            bail!("scale must be finite and non-negative");
        }
        Ok((ctx, vocab, clustering_path, section))
    })()
    .map_err(CmdError::Usage)?;
    let (ctx, vocab, clustering_path, section) = prep;

    (|| -> Result<()> {
        let clustering = load_clustering(&clustering_path)?;
        if clustering.len() != vocab.len() {
            bail!(
                "clustering covers {} tokens but vocabulary has {}",
                clustering.len(),
                vocab.len()
            );
        }
        let embedder = ToyEmbedding::new(section.embedding.clone(), Arc::clone(&clustering));
        let cluster_level = section.level == SirLevel::Cluster;
        let out_dim = if cluster_level {
            clustering.num_clusters() as usize
        } else {
            vocab.len()
        };

        let mut training = section.training.clone();
        training.seed = hashing::derive_chain(ctx.seed, &[domain::CLI_TRAIN, 1]);
        let pair_seed = hashing::derive_chain(ctx.seed, &[domain::CLI_TRAIN, 2]);
        let init_seed = hashing::derive_chain(ctx.seed, &[domain::CLI_TRAIN, 3]);

        let pairs = synthesize_training_pairs(
            &clustering,
            &embedder,
            section.pair_count,
            (section.pair_len_min, section.pair_len_max),
            pair_seed,
        );
        let mut model = WatermarkModel::new(section.embedding.dim, out_dim, init_seed);
        let curve = train(&mut model, &training, &pairs, &embedder)?;

        let artifact = SirArtifact::from_model(
            &model,
            section.embedding.clone(),
            &clustering,
            cluster_level,
            section.scale,
            vocab.len(),
        );
        let out = ctx.out_dir.join("sir_artifact.json");
        artifact
            .save(&out)
            .with_context(|| format!("writing {}", out.display()))?;
        write_meta_sibling(&out, &ctx.provenance("train-sir", None))?;

        let mut csv = String::from("epoch,alignment,polarity,balance,total\n");
        for (epoch, loss) in curve.iter().enumerate() {
            writeln!(
                csv,
                "{epoch},{},{},{},{}",
                loss.alignment, loss.polarity, loss.balance, loss.total
            )?;
        }
        let curve_path = ctx.out_dir.join("loss_curve.csv");
        fs::write(&curve_path, csv)
            .with_context(|| format!("writing {}", curve_path.display()))?;

        let first = curve.first().map(|l| l.total).unwrap_or(f64::NAN);
        let last = curve.last().map(|l| l.total).unwrap_or(f64::NAN);
        println!(
            "train-sir: loss {first:.4} -> {last:.4} over {} epochs -> {}",
            curve.len().saturating_sub(1),
            out.display()
        );
        Ok(())
    })()
    .map_err(CmdError::Runtime)
}

// ---------------------------------------------------------------- evaluate

#[derive(Serialize)]
struct SummaryConfig {
    seed: u64,
    config_sha256: String,
    bin_width: usize,
    epsilon: f64,
    fpr_target: f64,
    before: PathBuf,
    after: Option<PathBuf>,
    clean: PathBuf,
}

#[derive(Serialize)]
struct Summary {
    pcc: f64,
    re_pct: f64,
    auc: f64,
    tpr_at_fpr01: f64,
    config: SummaryConfig,
}

fn scored(records: &[DetectionOutput]) -> Vec<ScoredText> {
    records
        .iter()
        .map(|d| ScoredText {
            id: d.id.clone(),
            length: d.token_count,
            score: d.score,
        })
        .collect()
}

pub fn cmd_evaluate(args: &CommonArgs) -> Result<(), CmdError> {
    let prep = (|| -> Result<_> {
        let ctx = context(args)?;
        let section: EvaluateSection = ctx
            .loaded
            .config
            .evaluate
            .clone()
            .context("run config is missing the \"evaluate\" section")?;
        let before = ctx.loaded.required_input("evaluate.before", Some(&section.before))?;
        let clean = ctx.loaded.required_input("evaluate.clean", Some(&section.clean))?;
        let after = section
            .after
            .as_ref()
            .map(|p| ctx.loaded.required_input("evaluate.after", Some(p)))
            .transpose()?;
        let bin_width = NonZeroUsize::new(section.bin_width)
            .context("bin_width must be at least 1")?;
        if !(section.epsilon.is_finite() && section.epsilon >= 0.0) {
            bail!("epsilon must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&section.fpr_target) {
            bail!("fpr_target must be in [0, 1]");
        }
        Ok((ctx, section, before, after, clean, bin_width))
    })()
    .map_err(CmdError::Usage)?;
    let (ctx, section, before_path, after_path, clean_path, bin_width) = prep;

    (|| -> Result<()> {
        let (_, before) = read_detections(&before_path)
            .with_context(|| format!("reading {}", before_path.display()))?;
        let (_, clean) = read_detections(&clean_path)
            .with_context(|| format!("reading {}", clean_path.display()))?;
        let after = match &after_path {
            Some(p) => {
                read_detections(p)
                    .with_context(|| format!("reading {}", p.display()))?
                    .1
            }
            None => before.clone(),
        };

        let series = StrengthSeries::from_paired(&scored(&before), &scored(&after))?;
        let pcc_value = pcc(&series)?;
        let re_value = relative_error(&series, bin_width, section.epsilon)?;
        let bins = strength_vs_length_report(&series, bin_width);

        let mut detection: Vec<DetectionRecord> = after
            .iter()
            .map(|d| DetectionRecord::new(d.score, Label::Watermarked))
            .collect();
        detection.extend(
            clean
                .iter()
                .map(|d| DetectionRecord::new(d.score, Label::Clean)),
        );
        let curve = roc(&detection)?;
        let tpr = tpr_at_fpr(&curve, section.fpr_target);

        let summary = Summary {
            pcc: pcc_value,
            re_pct: re_value,
            auc: curve.auc,
            tpr_at_fpr01: tpr,
            config: SummaryConfig {
                seed: ctx.seed,
                config_sha256: ctx.loaded.sha256.clone(),
                bin_width: bin_width.get(),
                epsilon: section.epsilon,
                fpr_target: section.fpr_target,
                before: section.before.clone(),
                after: section.after.clone(),
                clean: section.clean.clone(),
            },
        };
        let summary_path = ctx.out_dir.join("summary.json");
        fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")
            .with_context(|| format!("writing {}", summary_path.display()))?;

        let mut bins_csv = String::from("bin_start,bin_end,count,mean_before,mean_after\n");
        for row in &bins {
            writeln!(
                bins_csv,
                "{},{},{},{},{}",
                row.bin_start, row.bin_end, row.count, row.mean_before, row.mean_after
            )?;
        }
        let bins_path = ctx.out_dir.join("bins.csv");
        fs::write(&bins_path, bins_csv)
            .with_context(|| format!("writing {}", bins_path.display()))?;

        let mut roc_csv = String::from("threshold,fpr,tpr\n");
        for i in 0..curve.thresholds.len() {
            writeln!(
                roc_csv,
                "{},{},{}",
                curve.thresholds[i], curve.fpr[i], curve.tpr[i]
            )?;
        }
        let roc_path = ctx.out_dir.join("roc.csv");
        fs::write(&roc_path, roc_csv)
            .with_context(|| format!("writing {}", roc_path.display()))?;

        println!(
            "evaluate: pcc={:.4} re_pct={:.2} auc={:.4} tpr@fpr{}={:.4} -> {}",
            summary.pcc,
            summary.re_pct,
            summary.auc,
            section.fpr_target,
            summary.tpr_at_fpr01,
            summary_path.display()
        );
        Ok(())
    })()
    .map_err(CmdError::Runtime)
}
