//! End-to-end runs: corpus manifest, extraction, training, prediction,
//! evaluation and ablation sweeps, with every artifact written under a run
//! directory named after the resolved configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::{Compression, GzBuilder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::{xxh3_64, xxh3_64_with_seed};

use crate::abstraction::{abstract_path, AbstractionKind};
use crate::corpus::{self, CorpusError, CorpusManifest, DedupFilters, DigestAlgorithm, Split, SplitRatios};
use crate::crf::{self, CrfError, FactorScores, InferenceMode};
use crate::embed::{self, EmbedError, EmbeddingModel, SgnsConfig};
use crate::escape::{escape_value, unescape};
use crate::eval::{EvalReport, Evaluator, UNK};
use crate::paths::{downsample, extract_all, ExtractionConfig, PathContext, PathError};
use crate::tasks::{self, TaskError, TaskInstance, TaskKind};
use crate::tree::{parse_tree, SyntaxTree, TreeError};

pub const TREE_SUFFIX: &str = ".ast.json";
pub const SIDECAR_SUFFIX: &str = ".gold.tsv";
pub const SHARD_LINES: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Invariant(_) => 4,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<CrfError> for PipelineError {
    fn from(e: CrfError) -> Self {
        match e {
            CrfError::TooLarge(_) => PipelineError::Config(e.to_string()),
            CrfError::MissingLabel(_) | CrfError::UnknownElement(_) | CrfError::UnknownNode(_) => {
                PipelineError::Invariant(e.to_string())
            }
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<EmbedError> for PipelineError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Config(_) | EmbedError::Diverged(_) | EmbedError::ZeroK => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<TaskError> for PipelineError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::UnknownNode(_) => PipelineError::Invariant(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<PathError> for PipelineError {
    fn from(e: PathError) -> Self {
        match e {
            PathError::Config(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Ratios(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Learner {
    Crf,
    Sgns,
}

impl FromStr for Learner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "crf" => Ok(Learner::Crf),
            "sgns" => Ok(Learner::Sgns),
            other => Err(format!("unknown learner `{other}`")),
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Learner::Crf => "crf",
            Learner::Sgns => "sgns",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inference {
    Exact,
    Greedy,
}

impl FromStr for Inference {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(Inference::Exact),
            "greedy" => Ok(Inference::Greedy),
            other => Err(format!("unknown inference mode `{other}`")),
        }
    }
}

impl From<Inference> for InferenceMode {
    fn from(i: Inference) -> Self {
        match i {
            Inference::Exact => InferenceMode::Exact,
            Inference::Greedy => InferenceMode::Greedy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateGrid {
    pub abstractions: Vec<AbstractionKind>,
    pub keep_probs: Vec<f64>,
    /// (max_length, max_width) pairs.
    pub limits: Vec<(usize, usize)>,
}

impl Default for AblateGrid {
    fn default() -> Self {
        AblateGrid {
            abstractions: AbstractionKind::ALL.to_vec(),
            keep_probs: vec![1.0],
            limits: vec![(7, 3)],
        }
    }
}

/// Every parameter of a run. Resolved values are echoed to `config.toml` in
/// the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub corpus: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub task: TaskKind,
    pub abstraction: AbstractionKind,
    pub learner: Learner,
    /// Task default when unset.
    pub max_length: Option<usize>,
    pub max_width: Option<usize>,
    pub semi_paths: bool,
    pub keep_prob: f64,
    pub seed: u64,
    pub split_seed: u64,
    pub ratios: SplitRatios,
    pub digest: DigestAlgorithm,
    pub exclude_dirs: Vec<String>,
    pub kappa: f64,
    pub inference: Inference,
    pub top_k: usize,
    pub internal_only: bool,
    /// Split that predict and ablate evaluate on.
    pub eval_split: Split,
    pub threads: usize,
    pub synth_programs: usize,
    pub sgns: SgnsConfig,
    pub ablate: AblateGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("runs"),
            corpus: None,
            manifest: None,
            model: None,
            predictions: None,
            task: TaskKind::VariableNames,
            abstraction: AbstractionKind::Id,
            learner: Learner::Crf,
            max_length: None,
            max_width: None,
            semi_paths: false,
            keep_prob: 1.0,
            seed: 0,
            split_seed: 0,
            ratios: SplitRatios::default(),
            digest: DigestAlgorithm::default(),
            exclude_dirs: DedupFilters::default().dir_names,
            kappa: 1.0,
            inference: Inference::Greedy,
            top_k: 5,
            internal_only: false,
            eval_split: Split::Test,
            threads: 1,
            synth_programs: 2000,
            sgns: SgnsConfig::default(),
            ablate: AblateGrid::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    pub fn extraction(&self) -> ExtractionConfig {
        let (len, width) = self.task.default_limits();
        ExtractionConfig {
            max_length: self.max_length.unwrap_or(len),
            max_width: self.max_width.unwrap_or(width),
            include_semi_paths: self.semi_paths,
            keep_prob: self.keep_prob,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.extraction().validate()?;
        self.ratios.validate()?;
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(PipelineError::Config("kappa must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(PipelineError::Config("top_k must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(PipelineError::Config("threads must be at least 1".into()));
        }
        if self.learner == Learner::Sgns {
            self.sgns.validate()?;
        }
        Ok(())
    }

    /// `<out>/<command>-<hash of the config echo>`
    pub fn run_dir(&self, command: &str) -> PathBuf {
        let hash = xxh3_64(format!("{command}\n{}", self.to_toml()).as_bytes());
        self.out.join(format!("{command}-{hash:016x}"))
    }

    fn sgns_config(&self) -> SgnsConfig {
        SgnsConfig {
            seed: self.seed,
            threads: self.threads,
            ..self.sgns.clone()
        }
    }
}

/// A parsed corpus document, keyed by its manifest path.
#[derive(Clone, Debug)]
pub struct Document {
    pub key: String,
    pub tree: SyntaxTree,
}

impl Document {
    pub fn new(key: impl Into<String>, tree: SyntaxTree) -> Self {
        Document { key: key.into(), tree }
    }
}

/// Settings a trained model fixes for prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub learner: Learner,
    pub task: TaskKind,
    pub abstraction: AbstractionKind,
    pub max_length: usize,
    pub max_width: usize,
    pub semi_paths: bool,
    pub internal_only: bool,
}

impl ModelMeta {
    fn of(cfg: &RunConfig) -> Self {
        let e = cfg.extraction();
        ModelMeta {
            learner: cfg.learner,
            task: cfg.task,
            abstraction: cfg.abstraction,
            max_length: e.max_length,
            max_width: e.max_width,
            semi_paths: e.include_semi_paths,
            internal_only: cfg.internal_only,
        }
    }

    /// `cfg` with the extraction and task settings of the model.
    fn apply(&self, cfg: &RunConfig) -> RunConfig {
        RunConfig {
            learner: self.learner,
            task: self.task,
            abstraction: self.abstraction,
            max_length: Some(self.max_length),
            max_width: Some(self.max_width),
            semi_paths: self.semi_paths,
            internal_only: self.internal_only,
            ..cfg.clone()
        }
    }
}

#[allow(clippy::large_enum_variant)]
pub enum Model {
    Crf(FactorScores),
    Sgns(EmbeddingModel),
}

impl Model {
    pub fn knows_label(&self, label: &str) -> bool {
        match self {
            Model::Crf(s) => s.label_count(label) > 0,
            Model::Sgns(m) => m.has_word(label),
        }
    }
}

pub struct TrainedModel {
    pub model: Model,
    pub meta: ModelMeta,
    pub summary: TrainSummary,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSummary {
    pub documents: usize,
    pub extracted: usize,
    pub kept: usize,
    pub instances: usize,
    pub empty_instances: usize,
    pub epoch_losses: Vec<f64>,
}

/// Raw contexts of one document for the configured task. With `sample`, each
/// context is kept with probability `keep_prob`, seeded per document.
pub fn document_contexts(doc: &Document, cfg: &RunConfig, sample: bool) -> Result<(usize, Vec<PathContext>), PipelineError> {
    let ecfg = cfg.extraction();
    let contexts = match cfg.task {
        TaskKind::FullTypes => tasks::type_contexts(&doc.tree, &ecfg)?,
        _ => extract_all(&doc.tree, &ecfg),
    };
    let extracted = contexts.len();
    if !sample {
        return Ok((extracted, contexts));
    }
    let seed = xxh3_64_with_seed(doc.key.as_bytes(), cfg.seed);
    Ok((extracted, downsample(contexts, ecfg.keep_prob, seed)))
}

pub fn document_instances(
    doc: &Document,
    contexts: &[PathContext],
    cfg: &RunConfig,
) -> Result<Vec<TaskInstance>, PipelineError> {
    Ok(match cfg.task {
        TaskKind::VariableNames => tasks::make_variable_instances(&doc.tree, contexts, cfg.abstraction)?,
        TaskKind::MethodNames => {
            tasks::make_method_instances(&doc.tree, contexts, cfg.abstraction, cfg.internal_only)?
        }
        TaskKind::FullTypes => tasks::make_type_instances_from(&doc.tree, contexts, cfg.abstraction)?,
    })
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))
}

/// Trains the configured learner on `docs`, downsampling their contexts.
pub fn train(docs: &[Document], cfg: &RunConfig) -> Result<TrainedModel, PipelineError> {
    cfg.validate()?;
    let pool = pool(cfg.threads)?;
    let per_doc: Vec<(usize, Vec<PathContext>)> = pool.install(|| {
        docs.par_iter()
            .map(|d| document_contexts(d, cfg, true))
            .collect::<Result<_, _>>()
    })?;
    let mut summary = TrainSummary {
        documents: docs.len(),
        extracted: per_doc.iter().map(|p| p.0).sum(),
        kept: per_doc.iter().map(|p| p.1.len()).sum(),
        ..Default::default()
    };
    let model = match cfg.learner {
        Learner::Crf => {
            let graphs: Vec<crf::FactorGraph> = pool.install(|| {
                docs.par_iter()
                    .zip(&per_doc)
                    .map(|(d, (_, ctx))| crf::build_graph(&d.tree, ctx, cfg.task, cfg.abstraction))
                    .collect::<Result<_, _>>()
            })?;
            summary.instances = graphs.iter().map(|g| g.variables.len()).sum();
            Model::Crf(crf::train_scores(&graphs, cfg.kappa)?)
        }
        Learner::Sgns => {
            let instances: Vec<Vec<TaskInstance>> = pool.install(|| {
                docs.par_iter()
                    .zip(&per_doc)
                    .map(|(d, (_, ctx))| document_instances(d, ctx, cfg))
                    .collect::<Result<_, _>>()
            })?;
            let mut pairs = Vec::new();
            for inst in instances.iter().flatten() {
                summary.instances += 1;
                if inst.is_empty() {
                    summary.empty_instances += 1;
                }
                for c in &inst.contexts {
                    pairs.push((inst.gold_label.as_str(), c.as_str()));
                }
            }
            let (model, stats) = embed::train_sgns(&pairs, &cfg.sgns_config())?;
            summary.epoch_losses = stats.epoch_losses;
            Model::Sgns(model)
        }
    };
    Ok(TrainedModel {
        model,
        meta: ModelMeta::of(cfg),
        summary,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `document:element`
    pub key: String,
    /// Gold label, or `<UNK>` when the model never saw it in training.
    pub gold: String,
    /// Ranked candidates; empty when the element had no usable evidence.
    pub candidates: Vec<(String, f64)>,
}

impl Prediction {
    pub fn top(&self) -> Option<&str> {
        self.candidates.first().map(|c| c.0.as_str())
    }

    /// `key<TAB>gold<TAB>label:score label:score ...`
    pub fn to_line(&self) -> String {
        let cands: Vec<String> = self
            .candidates
            .iter()
            .map(|(l, s)| format!("{}:{s:.6}", escape_value(l)))
            .collect();
        format!("{}\t{}\t{}", self.key, escape_value(&self.gold), cands.join(" "))
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        let mut cols = line.splitn(3, '\t');
        let (Some(key), Some(gold), Some(rest)) = (cols.next(), cols.next(), cols.next()) else {
            return Err(format!("malformed prediction line `{line}`"));
        };
        let mut candidates = Vec::new();
        for tok in rest.split(' ').filter(|t| !t.is_empty()) {
            let (l, s) = tok.rsplit_once(':').ok_or_else(|| format!("malformed candidate `{tok}`"))?;
            let s: f64 = s.parse().map_err(|_| format!("malformed score in `{tok}`"))?;
            candidates.push((unescape(l), s));
        }
        Ok(Prediction {
            key: key.to_string(),
            gold: unescape(gold),
            candidates,
        })
    }
}

/// Predicts every target element of `docs`, with the model's own extraction
/// settings and no downsampling.
pub fn predict(trained: &TrainedModel, docs: &[Document], cfg: &RunConfig) -> Result<Vec<Prediction>, PipelineError> {
    let cfg = trained.meta.apply(cfg);
    cfg.validate()?;
    let pool = pool(cfg.threads)?;
    let per_doc: Vec<Vec<Prediction>> = pool.install(|| {
        docs.par_iter()
            .map(|d| predict_document(trained, d, &cfg))
            .collect::<Result<_, _>>()
    })?;
    Ok(per_doc.into_iter().flatten().collect())
}

fn predict_document(trained: &TrainedModel, doc: &Document, cfg: &RunConfig) -> Result<Vec<Prediction>, PipelineError> {
    let (_, contexts) = document_contexts(doc, cfg, false)?;
    let gold = |g: &str| {
        if trained.model.knows_label(g) {
            g.to_string()
        } else {
            UNK.to_string()
        }
    };
    let mut out = Vec::new();
    match &trained.model {
        Model::Crf(scores) => {
            let graph = crf::build_graph(&doc.tree, &contexts, cfg.task, cfg.abstraction)?;
            if graph.variables.is_empty() {
                return Ok(out);
            }
            let map = crf::infer_map(&graph, scores, cfg.inference.into())?;
            let touched: BTreeSet<_> = graph
                .pairwise
                .iter()
                .flat_map(|f| [f.a, f.b])
                .chain(graph.unary.iter().map(|f| f.element))
                .collect();
            for &v in &graph.variables {
                let candidates = if touched.contains(&v) {
                    crf::top_k_candidates(&graph, scores, &map.labeling, v, cfg.top_k)?
                } else {
                    Vec::new()
                };
                out.push(Prediction {
                    key: format!("{}:{v}", doc.key),
                    gold: gold(&graph.gold[&v]),
                    candidates,
                });
            }
        }
        Model::Sgns(model) => {
            for inst in document_instances(doc, &contexts, cfg)? {
                let candidates = match embed::predict_name(model, &inst.contexts, cfg.top_k) {
                    Ok(c) => c,
                    Err(EmbedError::NoEvidence) => Vec::new(),
                    Err(e) => return Err(e.into()),
                };
                out.push(Prediction {
                    key: format!("{}:{}", doc.key, inst.element),
                    gold: gold(&inst.gold_label),
                    candidates,
                });
            }
        }
    }
    Ok(out)
}

pub fn evaluate(predictions: &[Prediction]) -> EvalReport {
    let mut ev = Evaluator::new();
    for p in predictions {
        ev.add(p.top(), &p.gold);
    }
    ev.report()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|e| PipelineError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    String::from_utf8(read_file(path)?).map_err(|_| PipelineError::Data(format!("{}: not UTF-8", path.display())))
}

/// Gzip with a zeroed timestamp and no file name, so equal input gives equal
/// bytes.
pub fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut enc: GzEncoder<Vec<u8>> = GzBuilder::new().mtime(0).write(Vec::new(), Compression::default());
    enc.write_all(bytes).expect("writing to memory");
    enc.finish().expect("writing to memory")
}

pub fn gunzip(bytes: &[u8]) -> Result<String, PipelineError> {
    let mut out = String::new();
    MultiGzDecoder::new(bytes)
        .read_to_string(&mut out)
        .map_err(|e| PipelineError::Data(format!("bad gzip stream: {e}")))?;
    Ok(out)
}

fn read_gz(path: &Path) -> Result<String, PipelineError> {
    gunzip(&read_file(path)?).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

/// Creates the run directory and writes the config echo into it.
pub fn start_run(cfg: &RunConfig, command: &str) -> Result<PathBuf, PipelineError> {
    let dir = cfg.run_dir(command);
    fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(dir)
}

fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf, PipelineError> {
    value
        .as_ref()
        .ok_or_else(|| PipelineError::Config(format!("--{what} is required")))
}

/// Reads one tree file plus its gold sidecar, when present.
pub fn load_document(root: &Path, rel: &str) -> Result<Document, PipelineError> {
    let path = root.join(rel);
    let bytes = read_file(&path)?;
    let tree = parse_tree(&bytes).map_err(|e: TreeError| PipelineError::Data(format!("{rel}: {e}")))?;
    let sidecar = match rel.strip_suffix(TREE_SUFFIX) {
        Some(stem) => root.join(format!("{stem}{SIDECAR_SUFFIX}")),
        None => root.join(format!("{rel}{SIDECAR_SUFFIX}")),
    };
    let tree = if sidecar.is_file() {
        tasks::apply_gold_sidecar(&tree, &read_text(&sidecar)?)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", sidecar.display())))?
    } else {
        tree
    };
    Ok(Document::new(rel, tree))
}

pub fn load_manifest(cfg: &RunConfig) -> Result<CorpusManifest, PipelineError> {
    let path = require(&cfg.manifest, "manifest")?;
    CorpusManifest::from_tsv(&read_text(path)?).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

pub fn load_split(cfg: &RunConfig, manifest: &CorpusManifest, split: Split) -> Result<Vec<Document>, PipelineError> {
    let root = require(&cfg.corpus, "corpus")?;
    let entries: Vec<&str> = manifest.included(split).map(|e| e.path.as_str()).collect();
    pool(cfg.threads)?.install(|| entries.par_iter().map(|rel| load_document(root, rel)).collect())
}

/// `manifest`: scan, deduplicate and split the corpus.
pub fn cmd_manifest(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    let root = require(&cfg.corpus, "corpus")?;
    if !root.is_dir() {
        return Err(PipelineError::Data(format!("{}: not a directory", root.display())));
    }
    let files = corpus::scan_dir(root, &[TREE_SUFFIX]);
    let filters = DedupFilters {
        dir_names: cfg.exclude_dirs.clone(),
        ..Default::default()
    };
    let manifest = corpus::split(corpus::dedup(files, &filters, cfg.digest), cfg.ratios, cfg.split_seed)?;
    let dir = start_run(cfg, "manifest")?;
    write_file(&dir.join("manifest.tsv"), manifest.to_tsv().as_bytes())?;
    Ok(dir)
}

/// Writes `lines` as gzip shards `<prefix>-NNNNN.tsv.gz` of at most
/// [`SHARD_LINES`] lines each.
fn write_shards(dir: &Path, prefix: &str, lines: &[String]) -> Result<usize, PipelineError> {
    let mut n = 0;
    for (i, chunk) in lines.chunks(SHARD_LINES).enumerate() {
        let mut text = chunk.join("\n");
        text.push('\n');
        write_file(&dir.join(format!("{prefix}-{i:05}.tsv.gz")), &gzip(text.as_bytes()))?;
        n += 1;
    }
    Ok(n)
}

/// `extract`: context shards, instance files and statistics per split.
pub fn cmd_extract(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let dir = start_run(cfg, "extract")?;
    let mut stats = String::from("split\tdocuments\textracted\tkept\tinstances\tempty_instances\n");
    let mut distinct: Vec<BTreeSet<String>> = vec![BTreeSet::new(); AbstractionKind::ALL.len()];
    for split in [Split::Train, Split::Validation, Split::Test] {
        let docs = load_split(cfg, &manifest, split)?;
        let sample = split == Split::Train;
        let results: Vec<_> = pool(cfg.threads)?.install(|| {
            docs.par_iter()
                .map(|d| -> Result<_, PipelineError> {
                    let (extracted, contexts) = document_contexts(d, cfg, sample)?;
                    let lines: Vec<String> = contexts
                        .iter()
                        .map(|c| {
                            format!(
                                "{}\t{}\t{}",
                                escape_value(&c.start_value),
                                abstract_path(&d.tree, &c.path, cfg.abstraction),
                                escape_value(&c.end_value)
                            )
                        })
                        .collect();
                    let paths: Vec<BTreeSet<String>> = AbstractionKind::ALL
                        .iter()
                        .map(|&k| contexts.iter().map(|c| abstract_path(&d.tree, &c.path, k).into_string()).collect())
                        .collect();
                    let instances = document_instances(d, &contexts, cfg)?;
                    Ok((extracted, lines, paths, instances))
                })
                .collect::<Result<_, _>>()
        })?;
        let mut lines = Vec::new();
        let mut instance_lines = String::new();
        let (mut extracted, mut instances, mut empty) = (0, 0, 0);
        for (d, (n, l, paths, inst)) in docs.iter().zip(results) {
            extracted += n;
            lines.extend(l);
            for (set, p) in distinct.iter_mut().zip(paths) {
                set.extend(p);
            }
            for i in inst {
                instances += 1;
                empty += usize::from(i.is_empty());
                instance_lines.push_str(&i.to_line(&format!("{}:{}", d.key, i.element)));
                instance_lines.push('\n');
            }
        }
        stats.push_str(&format!(
            "{split}\t{}\t{extracted}\t{}\t{instances}\t{empty}\n",
            docs.len(),
            lines.len()
        ));
        write_shards(&dir, &format!("contexts-{split}"), &lines)?;
        write_file(&dir.join(format!("instances-{split}.tsv.gz")), &gzip(instance_lines.as_bytes()))?;
    }
    write_file(&dir.join("stats.tsv"), stats.as_bytes())?;
    let mut dp = String::from("abstraction\tdistinct_paths\n");
    for (k, set) in AbstractionKind::ALL.iter().zip(&distinct) {
        dp.push_str(&format!("{k}\t{}\n", set.len()));
    }
    write_file(&dir.join("distinct-paths.tsv"), dp.as_bytes())?;
    Ok(dir)
}

pub fn save_model(dir: &Path, trained: &TrainedModel) -> Result<(), PipelineError> {
    let meta = toml::to_string(&trained.meta).expect("model metadata serializes");
    write_file(&dir.join("model.toml"), meta.as_bytes())?;
    match &trained.model {
        Model::Crf(scores) => {
            write_file(&dir.join("scores.tsv.gz"), &gzip(scores.to_tsv().as_bytes()))?;
            write_file(&dir.join("labels.tsv.gz"), &gzip(scores.vocab_tsv().as_bytes()))?;
        }
        Model::Sgns(model) => {
            let mut buf = Vec::new();
            model.save(&mut buf)?;
            write_file(&dir.join("model.pwe"), &buf)?;
        }
    }
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<TrainedModel, PipelineError> {
    let meta: ModelMeta = toml::from_str(&read_text(&dir.join("model.toml"))?)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", dir.join("model.toml").display())))?;
    let model = match meta.learner {
        Learner::Crf => Model::Crf(FactorScores::from_tsv(
            &read_gz(&dir.join("scores.tsv.gz"))?,
            &read_gz(&dir.join("labels.tsv.gz"))?,
        )?),
        Learner::Sgns => Model::Sgns(EmbeddingModel::load(&read_file(&dir.join("model.pwe"))?[..])?),
    };
    Ok(TrainedModel {
        model,
        meta,
        summary: TrainSummary::default(),
    })
}

/// `train`: fits the configured learner on the train split.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let docs = load_split(cfg, &manifest, Split::Train)?;
    let trained = train(&docs, cfg)?;
    let dir = start_run(cfg, "train")?;
    save_model(&dir, &trained)?;
    let s = &trained.summary;
    let mut text = format!(
        "documents\textracted\tkept\tinstances\tempty_instances\n{}\t{}\t{}\t{}\t{}\n",
        s.documents, s.extracted, s.kept, s.instances, s.empty_instances
    );
    if !s.epoch_losses.is_empty() {
        text.push_str("epoch\tmean_loss\n");
        for (i, l) in s.epoch_losses.iter().enumerate() {
            text.push_str(&format!("{i}\t{l:.9}\n"));
        }
    }
    write_file(&dir.join("train-stats.tsv"), text.as_bytes())?;
    Ok(dir)
}

fn predictions_text(predictions: &[Prediction]) -> String {
    let mut text = String::new();
    for p in predictions {
        text.push_str(&p.to_line());
        text.push('\n');
    }
    text
}

/// `predict`: ranked candidates for every element of the evaluation split.
pub fn cmd_predict(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    let trained = load_model(require(&cfg.model, "model")?)?;
    let manifest = load_manifest(cfg)?;
    let docs = load_split(cfg, &manifest, cfg.eval_split)?;
    let predictions = predict(&trained, &docs, cfg)?;
    let dir = start_run(cfg, "predict")?;
    write_file(&dir.join("predictions.tsv"), predictions_text(&predictions).as_bytes())?;
    Ok(dir)
}

/// `evaluate`: metrics over a predictions file.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    let path = require(&cfg.predictions, "predictions")?;
    let predictions: Vec<Prediction> = read_text(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(Prediction::from_line)
        .collect::<Result<_, _>>()
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    let report = evaluate(&predictions);
    let dir = start_run(cfg, "evaluate")?;
    write_file(&dir.join("report.tsv"), report.to_tsv().as_bytes())?;
    write_file(&dir.join("report.txt"), format!("{report}\n").as_bytes())?;
    let mut outcomes = String::from("key\tgold\tprediction\texact\n");
    for p in &predictions {
        outcomes.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.key,
            escape_value(&p.gold),
            escape_value(p.top().unwrap_or("")),
            crate::eval::exact_match(p.top().unwrap_or(""), &p.gold) && p.top().is_some()
        ));
    }
    write_file(&dir.join("outcomes.tsv"), outcomes.as_bytes())?;
    Ok(dir)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub abstraction: AbstractionKind,
    pub keep_prob: f64,
    pub max_length: usize,
    pub max_width: usize,
    pub kept_contexts: usize,
    pub report: EvalReport,
    pub wall_seconds: f64,
}

pub const ABLATION_HEADER: &str = "abstraction\tkeep_prob\tmax_length\tmax_width\tkept_contexts\taccuracy\tf1\twall_seconds";

impl AblationRow {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.3}",
            self.abstraction,
            self.keep_prob,
            self.max_length,
            self.max_width,
            self.kept_contexts,
            self.report.accuracy,
            self.report.f1,
            self.wall_seconds
        )
    }
}

/// Trains and evaluates one cell per grid point, re-extracting each time.
pub fn ablate(train_docs: &[Document], eval_docs: &[Document], cfg: &RunConfig) -> Result<Vec<AblationRow>, PipelineError> {
    let mut rows = Vec::new();
    for &abstraction in &cfg.ablate.abstractions {
        for &keep_prob in &cfg.ablate.keep_probs {
            for &(max_length, max_width) in &cfg.ablate.limits {
                let cell = RunConfig {
                    abstraction,
                    keep_prob,
                    max_length: Some(max_length),
                    max_width: Some(max_width),
                    ..cfg.clone()
                };
                let start = Instant::now();
                let trained = train(train_docs, &cell)?;
                let report = evaluate(&predict(&trained, eval_docs, &cell)?);
                rows.push(AblationRow {
                    abstraction,
                    keep_prob,
                    max_length,
                    max_width,
                    kept_contexts: trained.summary.kept,
                    report,
                    wall_seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(rows)
}

/// `ablate`: one TSV row per grid cell.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let train_docs = load_split(cfg, &manifest, Split::Train)?;
    let eval_docs = load_split(cfg, &manifest, cfg.eval_split)?;
    let rows = ablate(&train_docs, &eval_docs, cfg)?;
    let dir = start_run(cfg, "ablate")?;
    let mut text = format!("{ABLATION_HEADER}\n");
    for r in &rows {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    write_file(&dir.join("ablation.tsv"), text.as_bytes())?;
    Ok(dir)
}

/// `synth`: writes the generated separability corpus as tree files.
pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    use rand::SeedableRng;
    cfg.validate()?;
    let dir = start_run(cfg, "synth")?;
    let corpus_dir = dir.join("corpus");
    fs::create_dir_all(&corpus_dir).map_err(|e| PipelineError::io(&corpus_dir, e))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    for (i, tree) in crate::synth::separable_corpus(&mut rng, cfg.synth_programs).iter().enumerate() {
        write_file(&corpus_dir.join(format!("prog{i:05}{TREE_SUFFIX}")), tree.to_json().as_bytes())?;
    }
    Ok(dir)
}
