//! Batch orchestration: configuration, backend construction, clarification
//! collection, instance-parallel scoring, atomic output writing, and run
//! manifests.
//!
//! A run directory holds `predictions.jsonl`, `clarifications.jsonl` (when
//! any knowledge source is enabled), and `manifest.json`. The manifest is
//! written last: its presence signals a complete run. Reruns with an
//! identical config and a warm cache perform zero backend computations and
//! reproduce byte-identical prediction files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::Utc;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{
    BackendError, CachedBackend, LmBackend, RemoteBackend, RemoteConfig, ToyBackend,
};
use crate::cache::ResponseCache;
use crate::dataset::{load_instances, DatasetError};
use crate::eval::{
    evaluate, find_flip_clarifications, sample_for_annotation, ClarificationJudgment, EvalError,
    EvalResult, FlipKind, RunLabel,
};
use crate::knowledge::{
    default_routes, generative_kb_clarifications, ConceptGraph, GenKbConfig, KnowledgeError,
    NgramTable, RouteTable,
};
use crate::model::{Clarification, ClarificationSource, Instance, Prediction, TaskId};
use crate::scorer::{score_baseline, score_with_clarifications, ScoreError, ScoringConfig};
use crate::selftalk::{selftalk_clarifications, SelfTalkConfig, SelfTalkError};
use crate::tasks::{apply_copa_swap, builtin_task, load_task_file, TaskError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    SelfTalk(#[from] SelfTalkError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("run directory {0} has no manifest; the run is incomplete")]
    MissingManifest(String),
    #[error("flip accounting violated: clarified {clarified_correct} != baseline {baseline_correct} + useful {useful} - harmful {harmful}")]
    IdentityViolation {
        clarified_correct: usize,
        baseline_correct: usize,
        useful: usize,
        harmful: usize,
    },
    #[error("io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl From<ScoreError> for RunError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Backend(b) => RunError::Backend(b),
            other => RunError::Config(other.to_string()),
        }
    }
}

impl RunError {
    /// Process exit code: 2 for config errors, 3 for dataset/run-record
    /// errors, 4 for backend errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Task(_) => 2,
            RunError::Dataset(_) | RunError::MissingManifest(_) => 3,
            RunError::Backend(_) => 4,
            RunError::SelfTalk(SelfTalkError::Backend(_)) => 4,
            RunError::Knowledge(KnowledgeError::Backend(_)) => 4,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Which clarification producers feed the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeSourceKind {
    Selftalk,
    Conceptnet,
    Ngrams,
    Generative,
    Static,
}

impl std::str::FromStr for KnowledgeSourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "selftalk" => Ok(Self::Selftalk),
            "conceptnet" => Ok(Self::Conceptnet),
            "ngrams" => Ok(Self::Ngrams),
            "generative" => Ok(Self::Generative),
            "static" => Ok(Self::Static),
            other => Err(format!("unknown knowledge source: {other}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: TaskId,
    /// Spec file for custom tasks; overrides the built-in spec.
    pub task_spec_file: Option<PathBuf>,
    pub dataset: PathBuf,
    pub split: String,
    /// `toy:<model file>` or `remote:<model>[@<base url>]`.
    pub scorer_backend: String,
    pub generator_backend: Option<String>,
    pub knowledge: Vec<KnowledgeSourceKind>,
    pub graph_index: Option<PathBuf>,
    pub ngram_index: Option<PathBuf>,
    /// JSONL of per-instance clarifications for the static source.
    pub clarifications_file: Option<PathBuf>,
    pub routes_file: Option<PathBuf>,
    pub selftalk: SelfTalkConfig,
    pub scoring: ScoringConfig,
    pub genkb: GenKbConfig,
    pub ngram_min_freq: u64,
    pub ngram_top_k: usize,
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub copa_swap_templates: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskId::Custom,
            task_spec_file: None,
            dataset: PathBuf::new(),
            split: "dev".to_string(),
            scorer_backend: String::new(),
            generator_backend: None,
            knowledge: Vec::new(),
            graph_index: None,
            ngram_index: None,
            clarifications_file: None,
            routes_file: None,
            selftalk: SelfTalkConfig::default(),
            scoring: ScoringConfig::default(),
            genkb: GenKbConfig::default(),
            ngram_min_freq: crate::knowledge::DEFAULT_MIN_FREQ,
            ngram_top_k: crate::knowledge::DEFAULT_TOP_K_PER_PAIR,
            seed: 0,
            cache_dir: None,
            out_dir: PathBuf::new(),
            copa_swap_templates: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.scorer_backend.is_empty() {
            return Err(RunError::Config("a scorer backend is required".into()));
        }
        if self.dataset.as_os_str().is_empty() {
            return Err(RunError::Config("a dataset path is required".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(RunError::Config("an output directory is required".into()));
        }
        let needs_generator = self
            .knowledge
            .iter()
            .any(|k| matches!(k, KnowledgeSourceKind::Selftalk | KnowledgeSourceKind::Generative));
        if needs_generator && self.generator_backend.is_none() {
            return Err(RunError::Config(
                "self-talk or generative knowledge requires a generator backend".into(),
            ));
        }
        if self.knowledge.contains(&KnowledgeSourceKind::Conceptnet) && self.graph_index.is_none() {
            return Err(RunError::Config("conceptnet source requires --graph-index".into()));
        }
        if self.knowledge.contains(&KnowledgeSourceKind::Ngrams) && self.ngram_index.is_none() {
            return Err(RunError::Config("ngrams source requires --ngram-index".into()));
        }
        if self.knowledge.contains(&KnowledgeSourceKind::Static)
            && self.clarifications_file.is_none()
        {
            return Err(RunError::Config("static source requires --clarifications".into()));
        }
        Ok(())
    }

    pub fn load_task_spec(&self) -> Result<crate::model::TaskSpec, RunError> {
        let mut spec = match &self.task_spec_file {
            Some(path) => load_task_file(path)?,
            None => builtin_task(self.task)?,
        };
        if self.copa_swap_templates {
            apply_copa_swap(&mut spec);
        }
        Ok(spec)
    }
}

/// Builds a backend from its spec string, wrapped with the shared response
/// cache.
pub fn build_backend(
    spec: &str,
    cache: Option<ResponseCache>,
) -> Result<CachedBackend<Box<dyn LmBackend>>, RunError> {
    let inner: Box<dyn LmBackend> = if let Some(path) = spec.strip_prefix("toy:") {
        Box::new(ToyBackend::from_file(Path::new(path))?)
    } else if let Some(rest) = spec.strip_prefix("remote:") {
        let (model, url) = match rest.split_once('@') {
            Some((m, u)) => (m.to_string(), u.to_string()),
            None => (rest.to_string(), String::new()),
        };
        let config = RemoteConfig::new(url, model).with_env_defaults();
        if config.base_url.is_empty() {
            return Err(RunError::Config(format!(
                "remote backend {rest:?} has no endpoint; pass remote:<model>@<url> or set {}",
                crate::backend::ENDPOINT_ENV
            )));
        }
        Box::new(RemoteBackend::new(config))
    } else {
        return Err(RunError::Config(format!(
            "backend spec {spec:?} must start with toy: or remote:"
        )));
    };
    Ok(CachedBackend::new(inner, cache))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunCounts {
    pub instances: usize,
    pub lm_calls: u64,
    pub cache_hits: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Written last; records the config snapshot, counts, and the digest of
/// every output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config: RunConfig,
    pub started_at: String,
    pub finished_at: String,
    pub counts: RunCounts,
    pub outputs: Vec<OutputFile>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const CLARIFICATIONS_FILE: &str = "clarifications.jsonl";
pub const EVAL_FILE: &str = "eval.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceClarifications {
    pub instance_id: String,
    pub clarifications: Vec<Clarification>,
}

fn sha256_file(path: &Path) -> Result<String, RunError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Atomic write: temp file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), RunError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    std::fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RunError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunError> {
    let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut items = Vec::new();
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(line)?);
    }
    Ok(items)
}

struct KnowledgeSources {
    graph: Option<ConceptGraph>,
    ngrams: Option<NgramTable>,
    routes: RouteTable,
    static_clarifications: BTreeMap<String, Vec<Clarification>>,
}

impl KnowledgeSources {
    fn load(config: &RunConfig) -> Result<Self, RunError> {
        let graph = match (&config.graph_index, config.knowledge.contains(&KnowledgeSourceKind::Conceptnet)) {
            (Some(path), true) => Some(ConceptGraph::load_index(path)?),
            _ => None,
        };
        let ngrams = match (&config.ngram_index, config.knowledge.contains(&KnowledgeSourceKind::Ngrams)) {
            (Some(path), true) => Some(NgramTable::load_index(path)?),
            _ => None,
        };
        let routes = match &config.routes_file {
            Some(path) => {
                let raw = std::fs::read(path).map_err(io_err(path))?;
                serde_json::from_slice(&raw)?
            }
            None => default_routes(),
        };
        let mut static_clarifications = BTreeMap::new();
        if config.knowledge.contains(&KnowledgeSourceKind::Static) {
            if let Some(path) = &config.clarifications_file {
                for row in read_jsonl::<InstanceClarifications>(path)? {
                    static_clarifications.insert(row.instance_id, row.clarifications);
                }
            }
        }
        Ok(KnowledgeSources {
            graph,
            ngrams,
            routes,
            static_clarifications,
        })
    }
}

/// Collects clarifications for one instance from every enabled source, in
/// canonical source order.
fn collect_clarifications<G: LmBackend + ?Sized>(
    config: &RunConfig,
    spec: &crate::model::TaskSpec,
    inst: &Instance,
    generator: Option<&G>,
    sources: &KnowledgeSources,
) -> Result<Vec<Clarification>, RunError> {
    let mut sorted: Vec<KnowledgeSourceKind> = config.knowledge.clone();
    sorted.sort();
    sorted.dedup();
    let mut out = Vec::new();
    for kind in sorted {
        match kind {
            KnowledgeSourceKind::Selftalk => {
                let backend = generator.expect("validated: generator present");
                out.extend(selftalk_clarifications(
                    backend,
                    spec,
                    inst,
                    &config.selftalk,
                    config.seed,
                )?);
            }
            KnowledgeSourceKind::Conceptnet => {
                if let Some(graph) = &sources.graph {
                    out.extend(graph.clarifications(inst, 2));
                }
            }
            KnowledgeSourceKind::Ngrams => {
                if let Some(table) = &sources.ngrams {
                    out.extend(table.clarifications(inst, config.ngram_min_freq, config.ngram_top_k));
                }
            }
            KnowledgeSourceKind::Generative => {
                let backend = generator.expect("validated: generator present");
                out.extend(generative_kb_clarifications(
                    backend,
                    &sources.routes,
                    inst,
                    &config.genkb,
                    config.seed,
                )?);
            }
            KnowledgeSourceKind::Static => {
                if let Some(list) = sources.static_clarifications.get(&inst.id) {
                    out.extend(list.iter().cloned().map(|mut cl| {
                        cl.source = ClarificationSource::Static;
                        cl
                    }));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub counts: RunCounts,
    pub predictions: Vec<Prediction>,
}

/// Runs the scoring pipeline end to end and writes the run directory.
/// Partial outputs are kept on failure; the manifest is only written once
/// every output landed.
pub fn run_score(config: &RunConfig) -> Result<RunSummary, RunError> {
    config.validate()?;
    let started_at = Utc::now().to_rfc3339();
    let spec = config.load_task_spec()?;
    let instances = load_instances(&config.dataset)?;

    let cache = match &config.cache_dir {
        Some(dir) => Some(ResponseCache::open(dir).map_err(|e| RunError::Config(e.to_string()))?),
        None => None,
    };
    let scorer = build_backend(&config.scorer_backend, cache.clone())?;
    let generator = match &config.generator_backend {
        Some(spec_str) => Some(build_backend(spec_str, cache)?),
        None => None,
    };
    let sources = KnowledgeSources::load(config)?;
    let clarified = !config.knowledge.is_empty();

    // Instance-level fan-out; collect() preserves input order, so the
    // reduction is deterministic at any parallelism level.
    let results: Result<Vec<(Prediction, Option<InstanceClarifications>)>, RunError> = instances
        .par_iter()
        .map(|inst| {
            if clarified {
                let clarifications = collect_clarifications(
                    config,
                    &spec,
                    inst,
                    generator.as_ref(),
                    &sources,
                )?;
                let prediction = score_with_clarifications(
                    &scorer,
                    &spec,
                    inst,
                    &clarifications,
                    &config.scoring,
                )?;
                Ok((
                    prediction,
                    Some(InstanceClarifications {
                        instance_id: inst.id.clone(),
                        clarifications,
                    }),
                ))
            } else {
                Ok((score_baseline(&scorer, &spec, inst)?, None))
            }
        })
        .collect();
    let results = results?;

    std::fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    let predictions: Vec<Prediction> = results.iter().map(|(p, _)| p.clone()).collect();
    let mut outputs = Vec::new();

    let predictions_path = config.out_dir.join(PREDICTIONS_FILE);
    write_jsonl(&predictions_path, &predictions)?;
    outputs.push(OutputFile {
        path: PREDICTIONS_FILE.to_string(),
        sha256: sha256_file(&predictions_path)?,
    });

    if clarified {
        let rows: Vec<&InstanceClarifications> =
            results.iter().filter_map(|(_, c)| c.as_ref()).collect();
        let clarifications_path = config.out_dir.join(CLARIFICATIONS_FILE);
        write_jsonl(&clarifications_path, &rows)?;
        outputs.push(OutputFile {
            path: CLARIFICATIONS_FILE.to_string(),
            sha256: sha256_file(&clarifications_path)?,
        });
    }

    let mut lm_calls = scorer.counters().computed();
    let mut cache_hits = scorer.counters().cache_hits();
    if let Some(g) = &generator {
        lm_calls += g.counters().computed();
        cache_hits += g.counters().cache_hits();
    }
    let counts = RunCounts {
        instances: instances.len(),
        lm_calls,
        cache_hits,
    };
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        started_at,
        finished_at: Utc::now().to_rfc3339(),
        counts: counts.clone(),
        outputs,
    };
    write_atomic(
        &config.out_dir.join(MANIFEST_FILE),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(RunSummary {
        out_dir: config.out_dir.clone(),
        counts,
        predictions,
    })
}

/// Generates and persists clarifications only (no scoring).
pub fn run_selftalk(config: &RunConfig) -> Result<PathBuf, RunError> {
    if config.generator_backend.is_none() {
        return Err(RunError::Config("self-talk requires a generator backend".into()));
    }
    let spec = config.load_task_spec()?;
    let instances = load_instances(&config.dataset)?;
    let cache = match &config.cache_dir {
        Some(dir) => Some(ResponseCache::open(dir).map_err(|e| RunError::Config(e.to_string()))?),
        None => None,
    };
    let generator = build_backend(config.generator_backend.as_ref().unwrap(), cache)?;
    let rows: Result<Vec<InstanceClarifications>, RunError> = instances
        .par_iter()
        .map(|inst| {
            let clarifications =
                selftalk_clarifications(&generator, &spec, inst, &config.selftalk, config.seed)?;
            Ok(InstanceClarifications {
                instance_id: inst.id.clone(),
                clarifications,
            })
        })
        .collect();
    std::fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    let path = config.out_dir.join(CLARIFICATIONS_FILE);
    write_jsonl(&path, &rows?)?;
    Ok(path)
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest, RunError> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(RunError::MissingManifest(run_dir.display().to_string()));
    }
    let raw = std::fs::read(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_slice(&raw)?)
}

/// Checks that every output listed in the manifest exists with the recorded
/// digest.
pub fn verify_manifest(run_dir: &Path, manifest: &RunManifest) -> Result<(), RunError> {
    for output in &manifest.outputs {
        let path = run_dir.join(&output.path);
        let digest = sha256_file(&path)?;
        if digest != output.sha256 {
            return Err(RunError::Config(format!(
                "output {} digest mismatch: manifest {} vs file {digest}",
                output.path, output.sha256
            )));
        }
    }
    Ok(())
}

fn run_label(manifest: &RunManifest) -> RunLabel {
    let knowledge_source = if manifest.config.knowledge.is_empty() {
        "none".to_string()
    } else {
        let mut kinds: Vec<String> = manifest
            .config
            .knowledge
            .iter()
            .map(|k| format!("{k:?}").to_lowercase())
            .collect();
        kinds.sort();
        kinds.dedup();
        kinds.join("+")
    };
    RunLabel {
        task_id: manifest.config.task.to_string(),
        scorer_backend: manifest.config.scorer_backend.clone(),
        generator_backend: manifest.config.generator_backend.clone(),
        knowledge_source,
        split: manifest.config.split.clone(),
    }
}

/// Evaluates a completed run directory and writes `eval.json` into it.
pub fn run_eval(run_dir: &Path) -> Result<EvalResult, RunError> {
    let manifest = load_manifest(run_dir)?;
    verify_manifest(run_dir, &manifest)?;
    let predictions: Vec<Prediction> = read_jsonl(&run_dir.join(PREDICTIONS_FILE))?;
    let result = evaluate(&predictions, &run_label(&manifest))?;
    write_atomic(&run_dir.join(EVAL_FILE), &serde_json::to_vec_pretty(&result)?)?;
    Ok(result)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub task_id: String,
    pub n_instances: usize,
    pub baseline_correct: usize,
    pub clarified_correct: usize,
    pub baseline_accuracy: f64,
    pub clarified_accuracy: f64,
    pub useful: usize,
    pub harmful: usize,
    /// clarified = baseline + (useful - harmful), checked on integer counts.
    pub flip_identity_holds: bool,
}

pub struct AnalyzeOptions {
    pub useful_cap: usize,
    pub harmful_cap: usize,
    pub seed: u64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            useful_cap: 50,
            harmful_cap: 25,
            seed: 0,
        }
    }
}

pub const ANALYSIS_FILE: &str = "analysis.json";
pub const USEFUL_FILE: &str = "useful.jsonl";
pub const HARMFUL_FILE: &str = "harmful.jsonl";
pub const ANNOTATION_USEFUL_FILE: &str = "annotation_useful.jsonl";
pub const ANNOTATION_HARMFUL_FILE: &str = "annotation_harmful.jsonl";
pub const TAXONOMY_FILE: &str = "taxonomy.csv";

/// Compares a baseline run to a clarified run: extracts useful/harmful
/// flips, verifies the flip-accounting identity, and writes analysis
/// artifacts into `out_dir`.
pub fn run_analyze(
    baseline_dir: &Path,
    clarified_dir: &Path,
    out_dir: &Path,
    options: &AnalyzeOptions,
) -> Result<AnalysisSummary, RunError> {
    let baseline_manifest = load_manifest(baseline_dir)?;
    let clarified_manifest = load_manifest(clarified_dir)?;
    let baseline: Vec<Prediction> = read_jsonl(&baseline_dir.join(PREDICTIONS_FILE))?;
    let clarified: Vec<Prediction> = read_jsonl(&clarified_dir.join(PREDICTIONS_FILE))?;
    let clarifications: BTreeMap<String, Vec<Clarification>> =
        read_jsonl::<InstanceClarifications>(&clarified_dir.join(CLARIFICATIONS_FILE))?
            .into_iter()
            .map(|row| (row.instance_id, row.clarifications))
            .collect();

    let useful = find_flip_clarifications(&baseline, &clarified, &clarifications, FlipKind::Useful)?;
    let harmful =
        find_flip_clarifications(&baseline, &clarified, &clarifications, FlipKind::Harmful)?;

    let baseline_eval = evaluate(&baseline, &run_label(&baseline_manifest))?;
    let clarified_eval = evaluate(&clarified, &run_label(&clarified_manifest))?;
    let identity = clarified_eval.correct as i64
        == baseline_eval.correct as i64 + useful.len() as i64 - harmful.len() as i64;
    if !identity {
        return Err(RunError::IdentityViolation {
            clarified_correct: clarified_eval.correct,
            baseline_correct: baseline_eval.correct,
            useful: useful.len(),
            harmful: harmful.len(),
        });
    }

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_jsonl(&out_dir.join(USEFUL_FILE), &useful)?;
    write_jsonl(&out_dir.join(HARMFUL_FILE), &harmful)?;

    let task = clarified_manifest.config.task.to_string();
    let tag = |list: &[ClarificationJudgment]| -> Vec<(String, ClarificationJudgment)> {
        list.iter().map(|j| (task.clone(), j.clone())).collect()
    };
    write_jsonl(
        &out_dir.join(ANNOTATION_USEFUL_FILE),
        &sample_for_annotation(&tag(&useful), options.useful_cap, options.seed),
    )?;
    write_jsonl(
        &out_dir.join(ANNOTATION_HARMFUL_FILE),
        &sample_for_annotation(&tag(&harmful), options.harmful_cap, options.seed),
    )?;
    write_atomic(
        &out_dir.join(TAXONOMY_FILE),
        crate::eval::export_error_taxonomy(&tag(&harmful)).as_bytes(),
    )?;

    let summary = AnalysisSummary {
        task_id: task,
        n_instances: baseline.len(),
        baseline_correct: baseline_eval.correct,
        clarified_correct: clarified_eval.correct,
        baseline_accuracy: baseline_eval.accuracy,
        clarified_accuracy: clarified_eval.accuracy,
        useful: useful.len(),
        harmful: harmful.len(),
        flip_identity_holds: identity,
    };
    write_atomic(&out_dir.join(ANALYSIS_FILE), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}
