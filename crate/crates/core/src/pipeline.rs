//! End-to-end run: verbalize, detect statements, build option sets, run tasks, score.
//!
//! Per-record work runs on a bounded rayon pool and results are kept in corpus order.
//! Backend responses go through the response cache, which is what makes a rerun
//! resume instead of repeating calls. Every artifact carries a header line naming the
//! seed and digests that produced it.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backends::{
    Backend, BackendKind, CachedBackend, ChatBackend, Embedder, MockEmbedder, RemoteEmbedder, ResponseCache,
};
use crate::config::RunConfig;
use crate::corpus::{gt_label_set, gt_statement, load_corpus, AdRecord, Corpus};
use crate::error::{Error, Result};
use crate::hardneg::{assemble_arr_options, ArrOptionSet, HardNegative, NegativeGenerator};
use crate::metrics::{
    arr_scores_with_unparsed, asr_scores, bucket_scores, mac_scores, pair_similarities, ReportSection,
    ScoreReport, TaskScores,
};
use crate::prompts::PromptCatalog;
use crate::seeding::{derive_seed, sha256_hex};
use crate::statements::{build_asr_options, AsrOptionSet};
use crate::tasks::{Payload, Prediction, TaskInput, TaskInstance, TaskKind, TaskRunner};
use crate::taxonomy::Taxonomy;
use crate::verbalizer::{DetectionBasis, Verbalization, Verbalizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub artifact: String,
    pub seed: u64,
    pub config_digest: String,
    pub catalog_digest: String,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// JSONL with the header as its first line.
pub fn write_artifact<T: Serialize>(path: &Path, header: &ArtifactHeader, items: &[T]) -> Result<()> {
    let mut out = serde_json::to_string(header)?;
    out.push('\n');
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a JSONL artifact; the header line is optional so hand-written files load too.
pub fn read_artifact<T: DeserializeOwned>(path: &Path) -> Result<(Option<ArtifactHeader>, Vec<T>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(h) = serde_json::from_str::<ArtifactHeader>(line) {
                header = Some(h);
                continue;
            }
        }
        items.push(serde_json::from_str(line).map_err(|e| Error::SchemaError {
            line: i + 1,
            field: format!("<{}>", path.display()),
            message: e.to_string(),
        })?);
    }
    Ok((header, items))
}

/// Named backends, each wrapped in the response cache when one is configured.
pub struct Backends {
    cache: Option<ResponseCache>,
    map: BTreeMap<String, Arc<dyn ChatBackend>>,
}

impl Backends {
    pub fn new(cache_dir: Option<PathBuf>) -> Self {
        Self {
            cache: cache_dir.map(ResponseCache::new),
            map: BTreeMap::new(),
        }
    }

    /// Instantiates every configured backend and checks credentials up front.
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let mut out = Self::new(config.cache_dir());
        for spec in config.resolved_backends() {
            let backend = Backend::from_spec(spec)?;
            backend.check_credentials()?;
            out.add(backend);
        }
        Ok(out)
    }

    pub fn add(&mut self, backend: Backend) {
        let id = backend.spec().backend_id.clone();
        let wrapped: Arc<dyn ChatBackend> = match &self.cache {
            Some(cache) => Arc::new(CachedBackend::new(backend, cache.clone())),
            None => Arc::new(backend),
        };
        self.map.insert(id, wrapped);
    }

    pub fn get(&self, id: &str) -> Result<&dyn ChatBackend> {
        self.map
            .get(id)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownBackend(id.to_string()))
    }

    /// Calls that reached a transport, i.e. were not served from cache.
    pub fn call_counts(&self) -> BTreeMap<String, usize> {
        self.map.iter().map(|(id, b)| (id.clone(), b.call_count())).collect()
    }

    pub fn total_calls(&self) -> usize {
        self.call_counts().values().sum()
    }
}

pub fn embedder_for(config: &RunConfig) -> Result<Box<dyn Embedder>> {
    if config.embedder == "mock" {
        return Ok(Box::new(MockEmbedder::default()));
    }
    let spec = config.backend(&config.embedder)?.clone();
    if spec.kind != BackendKind::RemoteChat {
        return Err(Error::Config("embedder must be \"mock\" or a remote backend".into()));
    }
    let dim = config
        .embedding_dim
        .ok_or_else(|| Error::Config("a remote embedder needs embedding_dim".into()))?;
    Ok(Box::new(RemoteEmbedder::new(spec, dim)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config_digest: String,
    pub catalog_digest: String,
    pub corpus_digest: String,
    pub records: usize,
    pub artifacts: Vec<String>,
    pub backend_calls: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

pub struct RunSummary {
    pub report: ScoreReport,
    pub manifest: RunManifest,
    pub output_dir: PathBuf,
}

pub struct Stages {
    pub verbalizations: Vec<Option<Verbalization>>,
    pub asr_sets: Vec<AsrOptionSet>,
    pub hard_negatives: Vec<HardNegative>,
    pub arr_sets: Vec<ArrOptionSet>,
    pub predictions: Vec<Prediction>,
    pub warnings: Vec<String>,
}

pub struct Pipeline {
    pub config: RunConfig,
    pub taxonomy: Taxonomy,
    pub catalog: PromptCatalog,
    pub corpus: Corpus,
    pub backends: Backends,
    pub embedder: Box<dyn Embedder>,
    corpus_digest: String,
    pool: rayon::ThreadPool,
}

pub const VERBALIZATIONS: &str = "verbalizations.jsonl";
pub const ASR_OPTIONS: &str = "asr_options.jsonl";
pub const HARD_NEGATIVES: &str = "hard_negatives.jsonl";
pub const ARR_OPTIONS: &str = "arr_options.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const MANIFEST: &str = "manifest.json";

/// Runs `f` on every item in parallel, keeping input order. Fatal errors abort.
fn per_item<T: Sync, R: Send>(
    pool: &rayon::ThreadPool,
    items: &[T],
    f: impl Fn(&T) -> Result<R> + Sync + Send,
) -> Result<Vec<Result<R>>> {
    let mut results: Vec<Result<R>> = pool.install(|| items.par_iter().map(&f).collect());
    if let Some(i) = results.iter().position(|r| matches!(r, Err(e) if e.is_fatal())) {
        results.swap_remove(i)?;
    }
    Ok(results)
}

impl Pipeline {
    pub fn from_config(config: RunConfig) -> Result<Self> {
        let backends = Backends::from_config(&config)?;
        let embedder = embedder_for(&config)?;
        Self::with_backends(config, backends, embedder)
    }

    /// Uses caller-supplied backends; ids must match those named by the config.
    pub fn with_backends(config: RunConfig, backends: Backends, embedder: Box<dyn Embedder>) -> Result<Self> {
        config.validate()?;
        for t in &config.tasks {
            backends.get(&t.backend)?;
        }
        for id in config.vlm.iter().chain(&config.llm) {
            backends.get(id)?;
        }
        let taxonomy = match &config.taxonomy {
            Some(p) => Taxonomy::load(&config.resolve(p))?,
            None => Taxonomy::default(),
        };
        let catalog = match &config.prompt_catalog {
            Some(p) => PromptCatalog::load(&config.resolve(p))?,
            None => PromptCatalog::default(),
        };
        let corpus_path = config.corpus_path();
        let corpus = load_corpus(&corpus_path)?;
        let corpus_digest = sha256_hex(corpus.to_jsonl().as_bytes());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.concurrency)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            config,
            taxonomy,
            catalog,
            corpus,
            backends,
            embedder,
            corpus_digest,
            pool,
        })
    }

    pub fn config_digest(&self) -> String {
        self.config.digest()
    }

    pub fn header(&self, artifact: &str) -> ArtifactHeader {
        ArtifactHeader {
            artifact: artifact.to_string(),
            seed: self.config.seed,
            config_digest: self.config_digest(),
            catalog_digest: self.catalog.digest().to_string(),
        }
    }

    fn llm(&self) -> Result<&dyn ChatBackend> {
        let id = self.config.llm.as_deref().ok_or_else(|| Error::Config("no `llm` configured".into()))?;
        self.backends.get(id)
    }

    fn verbalize_one(&self, record: &AdRecord) -> Result<Verbalization> {
        let vlm_id = self.config.vlm.as_deref().ok_or_else(|| Error::Config("no `vlm` configured".into()))?;
        let vlm = self.backends.get(vlm_id)?;
        let llm = self.llm()?;
        let verbalizer = Verbalizer::new(&self.taxonomy, &self.catalog);
        let v = verbalizer.extract_views(record, vlm, &self.config.image_root())?;
        let mut v = verbalizer.combine(v, llm)?;
        let objects = v.objects.clone().unwrap_or_default();
        // a missing statement only disables the variants that need it
        if let Err(e) = verbalizer.detect_statement(&mut v, DetectionBasis::Narration, &objects, llm) {
            log::warn!("{}: statement detection failed: {e}", record.image_id);
        }
        if self.config.detection_basis == DetectionBasis::Combined {
            if let Err(e) = verbalizer.detect_statement(&mut v, DetectionBasis::Combined, &objects, llm) {
                log::warn!("{}: statement detection failed: {e}", record.image_id);
            }
        }
        Ok(v)
    }

    pub fn verbalize(&self, warnings: &mut Vec<String>) -> Result<Vec<Option<Verbalization>>> {
        let records = self.corpus.records();
        let results = per_item(&self.pool, records, |r| self.verbalize_one(r))?;
        Ok(results
            .into_iter()
            .zip(records)
            .map(|(res, r)| match res {
                Ok(v) => Some(v),
                Err(e) => {
                    warnings.push(format!("{}: verbalize: {e}", r.image_id));
                    None
                }
            })
            .collect())
    }

    /// For every atypical record with annotated objects.
    pub fn asr_option_sets(&self, warnings: &mut Vec<String>) -> Vec<AsrOptionSet> {
        let mut out = Vec::new();
        for r in self.corpus.records().iter().filter(|r| r.is_atypical() && r.objects().is_some()) {
            let seed = derive_seed(self.config.seed, &format!("asr/{}", r.image_id));
            match build_asr_options(&self.taxonomy, r, &self.corpus, self.config.k, seed) {
                Ok(set) => out.push(set),
                Err(e) => warnings.push(format!("{}: asr options: {e}", r.image_id)),
            }
        }
        out
    }

    pub fn hard_negatives(&self, warnings: &mut Vec<String>) -> Result<(Vec<HardNegative>, Vec<ArrOptionSet>)> {
        let llm = self.llm()?;
        let generator = NegativeGenerator::new(llm, &self.catalog);
        let records: Vec<&AdRecord> = self
            .corpus
            .records()
            .iter()
            .filter(|r| !r.action_reasons.is_empty())
            .collect();
        let results = per_item(&self.pool, &records, |r| generator.for_record(r, &self.config.strategies))?;
        let mut all = Vec::new();
        let mut sets = Vec::new();
        for (res, r) in results.into_iter().zip(records) {
            let negs = match res {
                Ok(n) => n,
                Err(e) => {
                    warnings.push(format!("{}: hard negatives: {e}", r.image_id));
                    continue;
                }
            };
            let seed = derive_seed(self.config.seed, &format!("arr/{}", r.image_id));
            match assemble_arr_options(r, &negs, seed) {
                Ok((set, ws)) => {
                    warnings.extend(ws.into_iter().map(|w| format!("{}: {}: {}", w.image_id, w.reason, w.text)));
                    sets.push(set);
                }
                Err(e) => warnings.push(format!("{}: arr options: {e}", r.image_id)),
            }
            all.extend(negs);
        }
        Ok((all, sets))
    }

    fn task_input(&self, instance: &TaskInstance, record: &AdRecord, verbalization: Option<&Verbalization>) -> Result<TaskInput> {
        let image = match instance.input_variant {
            crate::tasks::InputVariant::DirectImage => Some(Verbalizer::load_image(record, &self.config.image_root())?),
            _ => None,
        };
        match (instance.input_variant, verbalization) {
            (crate::tasks::InputVariant::Verbal(_), None) => {
                Err(Error::MissingField {
                    variant: instance.input_variant.name(),
                    field: "verbalization",
                })
            }
            (variant, v) => TaskInput::for_variant(variant, v, image),
        }
    }

    pub fn run_tasks(
        &self,
        verbalizations: &[Option<Verbalization>],
        asr_sets: &[AsrOptionSet],
        arr_sets: &[ArrOptionSet],
    ) -> Result<Vec<Prediction>> {
        let verb_by_id: HashMap<&str, &Verbalization> = verbalizations
            .iter()
            .flatten()
            .map(|v| (v.image_id.as_str(), v))
            .collect();
        let asr_by_id: HashMap<&str, &AsrOptionSet> = asr_sets.iter().map(|s| (s.image_id.as_str(), s)).collect();
        let arr_by_id: HashMap<&str, &ArrOptionSet> = arr_sets.iter().map(|s| (s.image_id.as_str(), s)).collect();

        let mut jobs: Vec<(usize, &AdRecord)> = Vec::new();
        for (ti, t) in self.config.tasks.iter().enumerate() {
            for r in self.corpus.records() {
                let applies = match t.task {
                    TaskKind::Mac => true,
                    TaskKind::Asr => asr_by_id.contains_key(r.image_id.as_str()),
                    TaskKind::Aor => r.is_atypical() && r.objects().is_some(),
                    TaskKind::ArrSingle | TaskKind::ArrMulti => arr_by_id.contains_key(r.image_id.as_str()),
                };
                if applies {
                    jobs.push((ti, r));
                }
            }
        }

        let run_one = |&(ti, record): &(usize, &AdRecord)| -> Result<Prediction> {
            let t = &self.config.tasks[ti];
            let instance = TaskInstance::new(t.task, &record.image_id, t.input_variant);
            let backend = self.backends.get(&t.backend)?;
            let attempt = || -> Result<Prediction> {
                let input = self.task_input(&instance, record, verb_by_id.get(record.image_id.as_str()).copied())?;
                let runner = TaskRunner::new(&self.taxonomy, &self.catalog, backend);
                let id = record.image_id.as_str();
                match t.task {
                    TaskKind::Mac => runner.run_mac(&instance, &input),
                    TaskKind::Asr => runner.run_asr(&instance, &input, asr_by_id[id]),
                    TaskKind::Aor => runner.run_aor(&instance, &input, &gt_statement(&self.taxonomy, record)?),
                    TaskKind::ArrSingle => runner.run_arr_single(&instance, &input, arr_by_id[id]),
                    TaskKind::ArrMulti => runner.run_arr_multi(&instance, &input, arr_by_id[id], self.config.k_select),
                }
            };
            match attempt() {
                Ok(p) => Ok(p),
                Err(e) if e.is_fatal() => Err(e),
                Err(e) => {
                    log::warn!("{} {} {}: {e}", t.task, t.input_variant.name(), record.image_id);
                    Ok(Prediction::failed(&instance, &t.backend, &e))
                }
            }
        };
        per_item(&self.pool, &jobs, run_one)?.into_iter().collect()
    }

    pub fn score(&self, predictions: &[Prediction], asr_sets: &[AsrOptionSet], arr_sets: &[ArrOptionSet]) -> Result<ScoreReport> {
        let mut report = ScoreReport::new(self.config.seed, self.config_digest(), self.catalog.digest());
        let sections = score_sections(
            &self.taxonomy,
            &self.corpus,
            asr_sets,
            arr_sets,
            predictions,
            self.embedder.as_ref(),
            &mut report.warnings,
        )?;
        report.sections = sections;
        Ok(report)
    }

    /// Every stage, without writing anything.
    pub fn stages(&self) -> Result<Stages> {
        let mut warnings = Vec::new();
        let verbalizations = if self.config.needs_verbalization() {
            self.verbalize(&mut warnings)?
        } else {
            vec![None; self.corpus.len()]
        };
        let asr_sets = self.asr_option_sets(&mut warnings);
        let (hard_negatives, arr_sets) = if self.config.needs_arr() {
            self.hard_negatives(&mut warnings)?
        } else {
            (vec![], vec![])
        };
        let predictions = self.run_tasks(&verbalizations, &asr_sets, &arr_sets)?;
        Ok(Stages {
            verbalizations,
            asr_sets,
            hard_negatives,
            arr_sets,
            predictions,
            warnings,
        })
    }

    pub fn run(&self) -> Result<RunSummary> {
        let out = self.config.output_dir();
        let stages = self.stages()?;
        let mut artifacts = Vec::new();
        let mut put = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
            f(&out.join(name))?;
            artifacts.push(name.to_string());
            Ok(())
        };
        let verbs: Vec<&Verbalization> = stages.verbalizations.iter().flatten().collect();
        put(VERBALIZATIONS, &|p| write_artifact(p, &self.header("verbalizations"), &verbs))?;
        put(ASR_OPTIONS, &|p| write_artifact(p, &self.header("asr_options"), &stages.asr_sets))?;
        put(HARD_NEGATIVES, &|p| write_artifact(p, &self.header("hard_negatives"), &stages.hard_negatives))?;
        put(ARR_OPTIONS, &|p| write_artifact(p, &self.header("arr_options"), &stages.arr_sets))?;
        put(PREDICTIONS, &|p| write_artifact(p, &self.header("predictions"), &stages.predictions))?;
        let report = self.score(&stages.predictions, &stages.asr_sets, &stages.arr_sets)?;
        put(REPORT_JSON, &|p| write_atomic(p, report.to_json().as_bytes()))?;
        put(REPORT_CSV, &|p| write_atomic(p, report.to_csv().as_bytes()))?;
        for w in &stages.warnings {
            log::warn!("{w}");
        }
        let manifest = RunManifest {
            seed: self.config.seed,
            config_digest: self.config_digest(),
            catalog_digest: self.catalog.digest().to_string(),
            corpus_digest: self.corpus_digest.clone(),
            records: self.corpus.len(),
            artifacts: artifacts.clone(),
            backend_calls: self.backends.call_counts(),
            warnings: stages.warnings,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&out.join(MANIFEST), text.as_bytes())?;
        Ok(RunSummary {
            report,
            manifest,
            output_dir: out,
        })
    }
}

/// Groups predictions by (task, input variant, backend) in order of first appearance
/// and scores each group against the corpus ground truth.
pub fn score_sections(
    taxonomy: &Taxonomy,
    corpus: &Corpus,
    asr_sets: &[AsrOptionSet],
    arr_sets: &[ArrOptionSet],
    predictions: &[Prediction],
    embedder: &dyn Embedder,
    warnings: &mut Vec<String>,
) -> Result<Vec<ReportSection>> {
    if predictions.is_empty() {
        warnings.push("no predictions to score".into());
        return Ok(vec![]);
    }
    let asr_by_id: HashMap<&str, &AsrOptionSet> = asr_sets.iter().map(|s| (s.image_id.as_str(), s)).collect();
    let arr_by_id: HashMap<&str, &ArrOptionSet> = arr_sets.iter().map(|s| (s.image_id.as_str(), s)).collect();
    type GroupKey = (TaskKind, String, String);
    let mut groups: Vec<(GroupKey, Vec<&Prediction>)> = Vec::new();
    for p in predictions {
        let key = (p.task, p.input_variant.name().to_string(), p.backend_id.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(p),
            None => groups.push((key, vec![p])),
        }
    }
    let record = |id: &str| corpus.get(id).ok_or_else(|| Error::UnknownImageId(id.to_string()));
    let mut sections = Vec::new();
    for ((task, variant, backend_id), preds) in groups {
        let unparsed = preds.iter().filter(|p| matches!(p.payload, Payload::Unparsed { .. })).count();
        let scores = match task {
            TaskKind::Mac => {
                let mut pl = Vec::new();
                let mut gl = Vec::new();
                for p in &preds {
                    gl.push(gt_label_set(record(&p.image_id)?));
                    pl.push(match &p.payload {
                        Payload::Labels { labels } => labels.clone(),
                        _ => Default::default(),
                    });
                }
                TaskScores::Mac(mac_scores(&pl, &gl)?)
            }
            TaskKind::Asr => {
                let mut sets = Vec::new();
                let mut choices = Vec::new();
                for p in &preds {
                    sets.push(
                        *asr_by_id
                            .get(p.image_id.as_str())
                            .ok_or_else(|| Error::UnknownImageId(p.image_id.clone()))?,
                    );
                    choices.push(match p.payload {
                        Payload::Choice { position } => Some(position),
                        _ => None,
                    });
                }
                TaskScores::Asr(asr_scores(&sets, &choices)?)
            }
            TaskKind::Aor => {
                let mut pairs = Vec::new();
                let mut slots = Vec::new();
                for p in &preds {
                    match &p.payload {
                        Payload::Objects { statement, .. } => {
                            let gt = gt_statement(taxonomy, record(&p.image_id)?)?;
                            slots.push(Some(pairs.len()));
                            pairs.push((statement.clone(), gt.text));
                        }
                        _ => slots.push(None),
                    }
                }
                let sims = pair_similarities(&pairs, embedder)?;
                let all: Vec<f64> = slots.iter().map(|s| s.map_or(0.0, |i| sims[i])).collect();
                TaskScores::Aor(bucket_scores(&all))
            }
            TaskKind::ArrSingle | TaskKind::ArrMulti => {
                let mut sets = Vec::new();
                let mut ranked = Vec::new();
                for p in &preds {
                    sets.push(
                        *arr_by_id
                            .get(p.image_id.as_str())
                            .ok_or_else(|| Error::UnknownImageId(p.image_id.clone()))?,
                    );
                    ranked.push(match &p.payload {
                        Payload::Choice { position } => vec![*position],
                        Payload::Ranked { positions } => positions.clone(),
                        _ => vec![],
                    });
                }
                TaskScores::Arr(arr_scores_with_unparsed(&ranked, &sets, unparsed)?)
            }
        };
        if unparsed > 0 {
            warnings.push(format!("{task} {variant} {backend_id}: {unparsed} unparsed predictions"));
        }
        sections.push(ReportSection {
            task: task.to_string(),
            input_variant: variant,
            backend_id,
            unparsed,
            scores,
        });
    }
    Ok(sections)
}
