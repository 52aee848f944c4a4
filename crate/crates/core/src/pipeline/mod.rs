//! Resumable end-to-end run over a work directory.
//!
//! Every stage writes its output atomically and then advances
//! `checkpoint.json`. Generation processes records in fixed-size batches:
//! the records of a batch run concurrently against the exemplar DB as it
//! was at batch start, every backend result is journaled, and results are
//! committed in assignment order. After a crash the append-only files are
//! cut back to the lengths recorded in the checkpoint and the batch is
//! replayed from the journal, so no record is generated twice.

mod config;
mod state;

pub use config::{ChatBackendConfig, ChatBackendKind, Concurrency, CoresetConfig, EmbedText, PipelineConfig};
pub use state::{
    AcceptedRecord, Checkpoint, FailedStage, JournalEntry, JournalEvent, QuarantineRecord, RunCounts, RunHooks, Stage,
    UsageTotals, WorkPaths,
};

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{apply_filters, ingest_records, CorpusError, FilterReport, RawCodeRecord};
use crate::coreset::{kcenter_greedy, kcenter_greedy_stratified, CoresetError, SelectionFile};
use crate::discriminator::{
    discriminate, DiscriminationReport, DiscriminatorError, Label, RuleSet, RuleVerdict, Verdict,
};
use crate::embedding::{Embedder, EmbeddingCache, EmbeddingClient, EmbeddingError, EmbeddingVector};
use crate::emitter::{to_training_example, write_dataset, EmitError};
use crate::exemplar_db::{ExemplarDb, ExemplarEntry, ExemplarError};
use crate::generator::{generate_instance, GenerationMeta, GeneratorError, InstructionInstance};
use crate::jsonl::{self, Appender, JsonlError};
use crate::llm_backend::{BackendError, ChatBackend, ChatClient, InFlightLimiter, Usage};
use crate::seed::derive_seed;
use crate::taskspec::{assign_tasks, resolve_targets, Assignment, TaskDefinition, TaskKind, TaskSpecError};

use state::HookedBackend;

const BUILTIN_SEED_EXEMPLARS: &str = include_str!("../../data/seed_exemplars.jsonl");
const EMBED_CHUNK: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Coreset(#[from] CoresetError),
    #[error(transparent)]
    TaskSpec(#[from] TaskSpecError),
    #[error(transparent)]
    Exemplar(#[from] ExemplarError),
    #[error(transparent)]
    Emit(#[from] EmitError),
    #[error("record {record_id}: {stage} backend failed: {source}")]
    Backend {
        record_id: String,
        stage: &'static str,
        #[source]
        source: BackendError,
    },
    #[error("run aborted")]
    Aborted,
    #[error("work directory state: {0}")]
    State(String),
}

impl PipelineError {
    /// True for problems the user fixes by changing the config or arguments.
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_) | PipelineError::TaskSpec(TaskSpecError::Config(_)))
    }
}

/// The model backends a run talks to.
#[derive(Clone)]
pub struct Backends {
    pub generation: Arc<dyn ChatBackend>,
    pub discrimination: Arc<dyn ChatBackend>,
    pub embedder: Arc<dyn Embedder>,
}

impl Backends {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let conv = |e: BackendError| PipelineError::Config(e.to_string());
        Ok(Backends {
            generation: cfg.generation_backend.build().map_err(conv)?,
            discrimination: cfg.discrimination_backend.build().map_err(conv)?,
            embedder: cfg.embedding_backend.build_embedder().map_err(conv)?,
        })
    }
}

/// Hand-written exemplar line of a seed file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedExemplar {
    pub task_kind: TaskKind,
    pub task_name: String,
    pub instruction: String,
    #[serde(default)]
    pub information: String,
    pub solution: String,
}

/// End-of-run report written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_fingerprint: String,
    pub stage: Stage,
    pub target_accepted: usize,
    pub counts: RunCounts,
    pub accepted: usize,
    pub unprocessed: usize,
    pub intended_mix: BTreeMap<TaskKind, f64>,
    pub realized_mix: BTreeMap<TaskKind, f64>,
    pub usage: UsageTotals,
    pub output_path: PathBuf,
    /// Wall time of the stages executed by this invocation.
    pub stage_seconds: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl RunSummary {
    /// The summary without timings, for comparing runs.
    pub fn deterministic(&self) -> RunSummary {
        RunSummary {
            stage_seconds: BTreeMap::new(),
            ..self.clone()
        }
    }
}

/// How an existing work directory is treated when a pipeline is opened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpenMode {
    /// Remove previous run files and start from scratch.
    Fresh,
    /// Continue from the checkpoint; the config must match the one it was written with.
    Resume,
    /// Continue from the checkpoint under the current config (single-stage commands).
    Continue,
}

/// Per-record result of the generate/judge rounds.
#[derive(Debug, Clone)]
struct RoundResult {
    round: u32,
    generation: JournalEvent,
    judgment: Option<JournalEvent>,
}

struct Journal {
    inner: Mutex<(HashMap<(String, u32, bool), JournalEvent>, Appender)>,
    hooks: Arc<RunHooks>,
}

impl Journal {
    fn open(path: &Path, hooks: Arc<RunHooks>) -> Result<Self, PipelineError> {
        jsonl::repair_tail(path)?;
        let mut map = HashMap::new();
        for e in jsonl::read_all_or_empty::<JournalEntry>(path)? {
            let judge = matches!(
                e.event,
                JournalEvent::Judged { .. }
                    | JournalEvent::Failed {
                        stage: FailedStage::Discriminate,
                        ..
                    }
            );
            map.insert((e.record_id, e.round, judge), e.event);
        }
        Ok(Journal {
            inner: Mutex::new((map, Appender::open(path)?)),
            hooks,
        })
    }

    fn get(&self, record_id: &str, round: u32, judge: bool) -> Option<JournalEvent> {
        let g = self.inner.lock().expect("journal lock");
        g.0.get(&(record_id.to_string(), round, judge)).cloned()
    }

    fn record(&self, record_id: &str, round: u32, judge: bool, event: &JournalEvent) -> Result<(), PipelineError> {
        self.hooks.tick()?;
        let mut g = self.inner.lock().expect("journal lock");
        g.1.append(&JournalEntry {
            record_id: record_id.to_string(),
            round,
            event: event.clone(),
        })?;
        g.0.insert((record_id.to_string(), round, judge), event.clone());
        Ok(())
    }
}

/// One configured run bound to its work directory.
pub struct Pipeline {
    cfg: PipelineConfig,
    paths: WorkPaths,
    backends: Backends,
    hooks: Arc<RunHooks>,
    ckpt: Checkpoint,
    stage_seconds: BTreeMap<String, f64>,
}

impl Pipeline {
    pub fn open(
        cfg: PipelineConfig,
        backends: Backends,
        hooks: Arc<RunHooks>,
        mode: OpenMode,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let paths = WorkPaths::new(&cfg.work_dir);
        std::fs::create_dir_all(&paths.root)
            .map_err(|e| JsonlError::io(&paths.root, e))?;
        let fingerprint = cfg.fingerprint();
        let existing = paths.checkpoint().exists();
        let ckpt = match (mode, existing) {
            (OpenMode::Fresh, _) | (_, false) => {
                if mode != OpenMode::Fresh {
                    log::info!("no checkpoint in {}; starting fresh", paths.root.display());
                }
                clear_run_files(&cfg, &paths)?;
                Checkpoint::new(cfg.seed, fingerprint)
            }
            (OpenMode::Resume, true) => {
                let c: Checkpoint = jsonl::read_json(&paths.checkpoint())?;
                if c.config_fingerprint != fingerprint {
                    return Err(PipelineError::Config(format!(
                        "work directory {} was created with a different config or seed; \
                         run without --resume to start over",
                        paths.root.display()
                    )));
                }
                log::info!("resuming at stage {:?}, cursor {}", c.stage, c.cursor);
                c
            }
            (OpenMode::Continue, true) => {
                let mut c: Checkpoint = jsonl::read_json(&paths.checkpoint())?;
                c.config_fingerprint = fingerprint;
                c.seed = cfg.seed;
                c
            }
        };
        Ok(Pipeline {
            cfg,
            paths,
            backends,
            hooks,
            ckpt,
            stage_seconds: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn paths(&self) -> &WorkPaths {
        &self.paths
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    fn save(&mut self, next: Checkpoint) -> Result<(), PipelineError> {
        let mut c = self.ckpt.clone();
        c.advance(next)?;
        self.hooks.tick()?;
        jsonl::write_json_atomic(&self.paths.checkpoint(), &c)?;
        self.ckpt = c;
        Ok(())
    }

    fn timed<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T, PipelineError>) -> Result<T, PipelineError> {
        let t = Instant::now();
        let out = f(self)?;
        *self.stage_seconds.entry(name.to_string()).or_default() += t.elapsed().as_secs_f64();
        Ok(out)
    }

    fn require(&self, stage: Stage, cmd: &str) -> Result<(), PipelineError> {
        if self.ckpt.stage < stage {
            return Err(PipelineError::State(format!(
                "stage {stage:?} has not completed (checkpoint is at {:?}); run `{cmd}` first",
                self.ckpt.stage
            )));
        }
        Ok(())
    }

    /// Drops everything produced at or after `stage` so it can run again.
    fn rewind_before(&mut self, stage: Stage) -> Result<(), PipelineError> {
        if self.ckpt.stage < stage {
            return Ok(());
        }
        log::info!("re-running from {stage:?}; later outputs are discarded");
        let p = &self.paths;
        let mut drop: Vec<PathBuf> = Vec::new();
        let c = &mut self.ckpt;
        if stage <= Stage::Ingested {
            drop.extend([p.records(), p.ingest_report()]);
            c.counts.ingested = 0;
            c.counts.ingest_skipped = 0;
        }
        if stage <= Stage::Filtered {
            drop.extend([p.filtered(), p.filter_report()]);
            c.counts.filtered_kept = 0;
            c.counts.filtered_rejected = 0;
        }
        if stage <= Stage::Embedded {
            c.counts.embedded = 0;
        }
        if stage <= Stage::Selected {
            drop.push(p.selection());
            c.counts.selected = 0;
        }
        if stage <= Stage::Assigned {
            drop.push(p.assignments());
            c.counts.intended_per_task.clear();
        }
        if stage <= Stage::Generating {
            drop.extend([p.journal(), p.accepted(), p.quarantine()]);
            let db_path = self.cfg.exemplar_db_path();
            if c.stage >= Stage::Generating && db_path.exists() {
                jsonl::truncate_lines(&db_path, c.db_base_len)?;
            }
            let keep = (
                c.counts.ingested,
                c.counts.ingest_skipped,
                c.counts.filtered_kept,
                c.counts.filtered_rejected,
                c.counts.embedded,
                c.counts.selected,
                std::mem::take(&mut c.counts.intended_per_task),
            );
            c.counts = RunCounts {
                ingested: keep.0,
                ingest_skipped: keep.1,
                filtered_kept: keep.2,
                filtered_rejected: keep.3,
                embedded: keep.4,
                selected: keep.5,
                intended_per_task: keep.6,
                ..Default::default()
            };
            c.cursor = 0;
            c.db_len = 0;
            c.db_base_len = 0;
            c.accepted_len = 0;
            c.quarantine_len = 0;
            c.usage = UsageTotals::default();
        }
        drop.extend([self.cfg.output_path(), p.summary()]);
        for f in drop {
            remove_if_exists(&f)?;
        }
        c.stage = prev_stage(stage);
        jsonl::write_json_atomic(&self.paths.checkpoint(), &self.ckpt)?;
        Ok(())
    }

    /// Reads the corpus into `records.jsonl`.
    pub fn stage_ingest(&mut self) -> Result<(), PipelineError> {
        self.rewind_before(Stage::Ingested)?;
        self.timed("ingest", |p| {
            let outcome = ingest_records(&p.cfg.corpus_path)?;
            for s in &outcome.skipped {
                log::warn!("corpus line {} skipped: {}", s.line, s.reason);
            }
            jsonl::write_all_atomic(&p.paths.records(), &outcome.records)?;
            let report = serde_json::json!({
                "ingested": outcome.records.len(),
                "skipped": outcome.skipped.iter().map(|s| serde_json::json!({"line": s.line, "reason": s.reason})).collect::<Vec<_>>(),
            });
            jsonl::write_json_atomic(&p.paths.ingest_report(), &report)?;
            log::info!("ingested {} records, skipped {}", outcome.records.len(), outcome.skipped.len());
            let mut next = p.ckpt.clone();
            next.stage = Stage::Ingested;
            next.counts.ingested = outcome.records.len();
            next.counts.ingest_skipped = outcome.skipped.len();
            p.save(next)
        })
    }

    pub fn stage_filter(&mut self) -> Result<FilterReport, PipelineError> {
        self.require(Stage::Ingested, "ingest")?;
        self.rewind_before(Stage::Filtered)?;
        self.timed("filter", |p| {
            let records: Vec<RawCodeRecord> = jsonl::read_all(&p.paths.records())?;
            let (kept, report) = apply_filters(&records, &p.cfg.effective_filter()?)?;
            jsonl::write_all_atomic(&p.paths.filtered(), &kept)?;
            jsonl::write_json_atomic(&p.paths.filter_report(), &report)?;
            log::info!("filter kept {} of {}", report.kept_count, report.input_count);
            let mut next = p.ckpt.clone();
            next.stage = Stage::Filtered;
            next.counts.filtered_kept = report.kept_count;
            next.counts.filtered_rejected = report.rejected_total();
            p.save(next)?;
            Ok(report)
        })
    }

    fn embed_model_key(&self) -> String {
        let tag = self.backends.embedder.model_tag();
        match self.cfg.embed_text {
            EmbedText::Code => tag.to_string(),
            EmbedText::CodeAndComment => format!("{tag}+comment"),
        }
    }

    fn embed_input(&self, r: &RawCodeRecord) -> String {
        match self.cfg.embed_text {
            EmbedText::Code => r.code.clone(),
            EmbedText::CodeAndComment if r.comment.trim().is_empty() => r.code.clone(),
            EmbedText::CodeAndComment => format!("{}\n{}", r.comment, r.code),
        }
    }

    /// Embeds filtered records not already in the cache.
    pub fn stage_embed(&mut self) -> Result<(), PipelineError> {
        self.require(Stage::Filtered, "filter")?;
        self.rewind_before(Stage::Embedded)?;
        self.timed("embed", |p| {
            let records: Vec<RawCodeRecord> = jsonl::read_all(&p.paths.filtered())?;
            jsonl::repair_tail(&p.paths.embeddings())?;
            let mut cache = EmbeddingCache::open(&p.paths.embeddings())?;
            let model = p.embed_model_key();
            let todo: Vec<&RawCodeRecord> = records.iter().filter(|r| cache.get(&r.id, &model).is_none()).collect();
            let eb = &p.cfg.embedding_backend;
            let client = EmbeddingClient::new(p.backends.embedder.clone(), eb.batch_size, eb.retry.clone())
                .with_concurrency(eb.max_concurrent);
            log::info!("embedding {} records ({} cached)", todo.len(), records.len() - todo.len());
            for chunk in todo.chunks(EMBED_CHUNK) {
                p.hooks.tick()?;
                let texts: Vec<String> = chunk.iter().map(|r| p.embed_input(r)).collect();
                let vectors = client.embed_batch(&texts)?;
                for (r, v) in chunk.iter().zip(vectors) {
                    cache.insert(&r.id, &model, v.into_values())?;
                }
            }
            let mut next = p.ckpt.clone();
            next.stage = Stage::Embedded;
            next.counts.embedded = records.len();
            p.save(next)
        })
    }

    /// Runs k-center greedy over the cached embeddings of the filtered records.
    pub fn stage_select(&mut self) -> Result<SelectionFile, PipelineError> {
        self.require(Stage::Embedded, "embed")?;
        self.rewind_before(Stage::Selected)?;
        self.timed("select", |p| {
            let records: Vec<RawCodeRecord> = jsonl::read_all(&p.paths.filtered())?;
            let cache = EmbeddingCache::open(&p.paths.embeddings())?;
            let model = p.embed_model_key();
            let mut vectors: Vec<EmbeddingVector<f32>> = Vec::with_capacity(records.len());
            for r in &records {
                let v = cache
                    .get(&r.id, &model)
                    .ok_or_else(|| PipelineError::State(format!("no cached embedding for {}", r.id)))?;
                vectors.push(EmbeddingVector::new(v.clone(), model.clone())?);
            }
            let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
            let file = if records.is_empty() {
                log::warn!("no records survived filtering; selection is empty");
                SelectionFile {
                    k: p.cfg.coreset.k,
                    seed: p.cfg.coreset_seed(),
                    metric: p.cfg.coreset.metric.as_str().to_string(),
                    selected_ids: Vec::new(),
                    radius_trace: Vec::new(),
                }
            } else {
                let k = p.cfg.coreset.k.min(records.len());
                let seed = p.cfg.coreset_seed();
                let metric = p.cfg.coreset.metric;
                let sel = if p.cfg.coreset.stratify_by_language {
                    let strata: Vec<String> = records.iter().map(|r| r.language.clone()).collect();
                    kcenter_greedy_stratified(&vectors, &strata, k, seed, metric)?
                } else {
                    kcenter_greedy(&vectors, k, seed, metric, &[])?
                };
                SelectionFile::from_selection(&sel, &ids)
            };
            jsonl::write_json_atomic(&p.paths.selection(), &file)?;
            log::info!("selected {} of {} records", file.selected_ids.len(), records.len());
            let mut next = p.ckpt.clone();
            next.stage = Stage::Selected;
            next.counts.selected = file.selected_ids.len();
            p.save(next)?;
            Ok(file)
        })
    }

    /// Assigns a task (and translation target) to every selected record, in pick order.
    pub fn stage_assign(&mut self) -> Result<Vec<Assignment>, PipelineError> {
        self.require(Stage::Selected, "select")?;
        self.rewind_before(Stage::Assigned)?;
        self.timed("assign", |p| {
            let selection: SelectionFile = jsonl::read_json(&p.paths.selection())?;
            let records: Vec<RawCodeRecord> = jsonl::read_all(&p.paths.filtered())?;
            let languages: BTreeMap<String, String> =
                records.iter().map(|r| (r.id.clone(), r.language.clone())).collect();
            let defs = p.cfg.task_definitions()?;
            let targets = defs
                .get(&TaskKind::CodeTranslation)
                .map(TaskDefinition::target_languages)
                .unwrap_or_default();
            let picked = assign_tasks(&selection.selected_ids, &p.cfg.mix, p.cfg.seed)?;
            let assignments = resolve_targets(&picked, &languages, &targets);
            jsonl::write_all_atomic(&p.paths.assignments(), &assignments)?;
            let mut intended: BTreeMap<TaskKind, usize> = TaskKind::ALL.iter().map(|k| (*k, 0)).collect();
            for a in &assignments {
                *intended.entry(a.task).or_default() += 1;
            }
            let mut next = p.ckpt.clone();
            next.stage = Stage::Assigned;
            next.counts.intended_per_task = intended;
            p.save(next)?;
            Ok(assignments)
        })
    }

    fn open_db(&self) -> Result<ExemplarDb, PipelineError> {
        let path = self.cfg.exemplar_db_path();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| JsonlError::io(dir, e))?;
        }
        Ok(if self.ckpt.stage >= Stage::Generating {
            ExemplarDb::open_truncated(&path, self.ckpt.db_len)?
        } else {
            ExemplarDb::open(&path)?
        })
    }

    fn seed_exemplars(&self) -> Result<Vec<SeedExemplar>, PipelineError> {
        match &self.cfg.seed_exemplars {
            Some(path) => Ok(jsonl::read_all(path)?),
            None => BUILTIN_SEED_EXEMPLARS
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    serde_json::from_str(l).map_err(|e| PipelineError::State(format!("built-in seed exemplar: {e}")))
                })
                .collect(),
        }
    }

    fn insert_seeds(&self, db: &mut ExemplarDb, rulesets: &BTreeMap<TaskKind, RuleSet>) -> Result<(), PipelineError> {
        for (i, s) in self.seed_exemplars()?.into_iter().enumerate() {
            let entry_id = format!("seed-{i}");
            if db.get(&entry_id).is_some() {
                continue;
            }
            let verdicts = rulesets[&s.task_kind]
                .rules()
                .map(|r| RuleVerdict {
                    rule_id: r.id.clone(),
                    answer: Verdict::Yes,
                    reason: "meets the rule".into(),
                })
                .collect();
            let report = DiscriminationReport::new(&entry_id, verdicts, Verdict::Yes, "hand-written exemplar");
            let instance = InstructionInstance {
                task_name: s.task_name,
                instruction: s.instruction,
                information: s.information,
                solution: s.solution,
                source_record_id: entry_id.clone(),
                task_kind: s.task_kind,
                generation_meta: GenerationMeta::default(),
            };
            db.insert(ExemplarEntry {
                entry_id,
                instance,
                label: report.label,
                report,
                task_kind: s.task_kind,
                created_seq: 0,
            })?;
        }
        Ok(())
    }

    /// Runs the generator/discriminator loop until the accepted target is
    /// reached or the selection is exhausted. Continues a partial run.
    pub fn stage_generate(&mut self) -> Result<(), PipelineError> {
        self.require(Stage::Assigned, "assign")?;
        if self.ckpt.stage > Stage::Generating {
            self.rewind_before(Stage::Generating)?;
        }
        self.timed("generate", |p| p.generate_inner())
    }

    fn generate_inner(&mut self) -> Result<(), PipelineError> {
        let assignments: Vec<Assignment> = jsonl::read_all(&self.paths.assignments())?;
        let records: HashMap<String, RawCodeRecord> = jsonl::read_all::<RawCodeRecord>(&self.paths.filtered())?
            .into_iter()
            .map(|r| (r.id.clone(), r))
            .collect();
        let defs = self.cfg.task_definitions()?;
        let rulesets = self.cfg.rulesets()?;

        let mut db = self.open_db()?;
        if self.ckpt.stage < Stage::Generating {
            for f in [self.paths.journal(), self.paths.accepted(), self.paths.quarantine()] {
                remove_if_exists(&f)?;
            }
            self.insert_seeds(&mut db, &rulesets)?;
            let mut next = self.ckpt.clone();
            next.stage = Stage::Generating;
            next.cursor = 0;
            next.db_len = db.len();
            next.db_base_len = db.len();
            self.save(next)?;
        }
        jsonl::truncate_lines(&self.paths.accepted(), self.ckpt.accepted_len)?;
        jsonl::truncate_lines(&self.paths.quarantine(), self.ckpt.quarantine_len)?;
        let mut accepted = Appender::open(&self.paths.accepted())?;
        let mut quarantine = Appender::open(&self.paths.quarantine())?;
        let journal = Journal::open(&self.paths.journal(), self.hooks.clone())?;

        let n = self.cfg.concurrency.max_in_flight;
        let limiter = InFlightLimiter::new(n);
        let gen_client = ChatClient::new(
            Arc::new(HookedBackend {
                inner: self.backends.generation.clone(),
                hooks: self.hooks.clone(),
            }),
            self.cfg.generation_backend.retry.clone(),
            limiter.clone(),
        );
        let disc_client = ChatClient::new(
            Arc::new(HookedBackend {
                inner: self.backends.discrimination.clone(),
                hooks: self.hooks.clone(),
            }),
            self.cfg.discrimination_backend.retry.clone(),
            limiter,
        );

        let mut items: Vec<(Assignment, TaskDefinition)> = Vec::with_capacity(assignments.len());
        for a in assignments {
            let mut def = defs
                .get(&a.task)
                .cloned()
                .ok_or_else(|| PipelineError::Config(format!("no task definition for {}", a.task)))?;
            if let Some(t) = &a.target_language {
                def.extra_params.insert("target_language".into(), t.clone().into());
            }
            if !records.contains_key(&a.record_id) {
                return Err(PipelineError::State(format!("assigned record {} is not in the filtered set", a.record_id)));
            }
            items.push((a, def));
        }

        let target = self.cfg.target_accepted;
        let mut cursor = self.ckpt.cursor;
        while cursor < items.len() && self.ckpt.counts.accepted() < target {
            let batch = &items[cursor..(cursor + n).min(items.len())];
            let results: Vec<Result<Vec<RoundResult>, PipelineError>> = {
                let ctx = RecordCtx {
                    cfg: &self.cfg,
                    db: &db,
                    journal: &journal,
                    gen_client: &gen_client,
                    disc_client: &disc_client,
                    rulesets: &rulesets,
                    hooks: &self.hooks,
                };
                if batch.len() == 1 {
                    vec![ctx.process(&records[&batch[0].0.record_id], &batch[0].0, &batch[0].1)]
                } else {
                    std::thread::scope(|s| {
                        let handles: Vec<_> = batch
                            .iter()
                            .map(|(a, def)| {
                                let ctx = &ctx;
                                let rec = &records[&a.record_id];
                                s.spawn(move || ctx.process(rec, a, def))
                            })
                            .collect();
                        handles
                            .into_iter()
                            .map(|h| h.join().expect("record worker panicked"))
                            .collect()
                    })
                }
            };
            let mut rounds_per_record = Vec::with_capacity(results.len());
            for r in results {
                rounds_per_record.push(r?);
            }

            let mut next = self.ckpt.clone();
            for ((a, _), rounds) in batch.iter().zip(rounds_per_record) {
                if next.counts.accepted() >= target {
                    break;
                }
                self.commit_record(a, rounds, &mut db, &mut accepted, &mut quarantine, &mut next)?;
                next.cursor += 1;
            }
            cursor = next.cursor;
            next.db_len = db.len();
            self.save(next)?;
        }

        let mut next = self.ckpt.clone();
        next.stage = Stage::Generated;
        let c = &next.counts;
        log::info!(
            "generation finished: {} accepted of target {target}, {} records processed, {} rounds ({} good, {} bad, {} quarantined)",
            c.accepted(),
            c.records_processed,
            c.generated,
            c.good,
            c.bad,
            c.quarantined
        );
        if c.accepted() < target {
            log::warn!("selection exhausted before reaching the target of {target} accepted instances");
        }
        self.save(next)
    }

    fn commit_record(
        &self,
        a: &Assignment,
        rounds: Vec<RoundResult>,
        db: &mut ExemplarDb,
        accepted: &mut Appender,
        quarantine: &mut Appender,
        next: &mut Checkpoint,
    ) -> Result<(), PipelineError> {
        let mut last = None;
        for r in rounds {
            next.counts.generated += 1;
            let entry_id = format!("{}#{}@{}", a.record_id, r.round, next.db_base_len);
            let failed = |ev: &JournalEvent| match ev {
                JournalEvent::Failed {
                    stage,
                    attempts,
                    error,
                    last_reply,
                    ..
                } => Some(QuarantineRecord {
                    record_id: a.record_id.clone(),
                    round: r.round,
                    task_kind: a.task,
                    stage: *stage,
                    attempts: *attempts,
                    error: error.clone(),
                    last_reply: last_reply.clone(),
                }),
                _ => None,
            };
            next.usage.generation += event_usage(&r.generation);
            if let Some(j) = &r.judgment {
                next.usage.discrimination += event_usage(j);
            }
            let instance = match &r.generation {
                JournalEvent::Generated { instance, .. } => instance.clone(),
                other => {
                    let q = failed(other).expect("generation event is generated or failed");
                    self.hooks.tick()?;
                    quarantine.append(&q)?;
                    next.quarantine_len += 1;
                    next.counts.quarantined += 1;
                    log::info!("record {} round {}: generate -> quarantined ({})", a.record_id, r.round, q.error);
                    last = Some(None);
                    continue;
                }
            };
            let report = match r.judgment {
                Some(JournalEvent::Judged { report, .. }) => report,
                Some(other) => {
                    let q = failed(&other).expect("judgment event is judged or failed");
                    self.hooks.tick()?;
                    quarantine.append(&q)?;
                    next.quarantine_len += 1;
                    next.counts.quarantined += 1;
                    log::info!("record {} round {}: discriminate -> quarantined ({})", a.record_id, r.round, q.error);
                    last = Some(None);
                    continue;
                }
                None => return Err(PipelineError::State(format!("{entry_id} has no judgment"))),
            };
            let label = report.label;
            self.hooks.tick()?;
            db.insert(ExemplarEntry {
                entry_id: entry_id.clone(),
                instance: instance.clone(),
                label,
                report,
                task_kind: a.task,
                created_seq: 0,
            })?;
            log::info!("record {} round {}: discriminate -> {label}", a.record_id, r.round);
            match label {
                Label::Good => {
                    next.counts.good += 1;
                    self.hooks.tick()?;
                    accepted.append(&AcceptedRecord {
                        record_id: a.record_id.clone(),
                        entry_id,
                        task_kind: a.task,
                        target_language: a.target_language.clone(),
                        instance,
                    })?;
                    next.accepted_len += 1;
                    *next.counts.accepted_per_task.entry(a.task).or_default() += 1;
                }
                Label::Bad => next.counts.bad += 1,
            }
            last = Some(Some(label));
        }
        next.counts.records_processed += 1;
        match last {
            Some(Some(Label::Good)) => next.counts.records_good += 1,
            Some(Some(Label::Bad)) => next.counts.records_bad += 1,
            _ => next.counts.records_quarantined += 1,
        }
        Ok(())
    }

    /// Converts accepted instances into the training dataset.
    pub fn stage_emit(&mut self) -> Result<usize, PipelineError> {
        self.require(Stage::Generated, "generate")?;
        self.timed("emit", |p| {
            let accepted: Vec<AcceptedRecord> = jsonl::read_all_or_empty(&p.paths.accepted())?;
            let examples = accepted
                .iter()
                .map(|a| to_training_example(&a.instance))
                .collect::<Result<Vec<_>, _>>()?;
            let out = p.cfg.output_path();
            if let Some(dir) = out.parent() {
                std::fs::create_dir_all(dir).map_err(|e| JsonlError::io(dir, e))?;
            }
            p.hooks.tick()?;
            let summary = write_dataset(&examples, &out)?;
            log::info!("wrote {} examples to {}", summary.count, out.display());
            let mut next = p.ckpt.clone();
            next.stage = Stage::Done;
            next.counts.emitted = summary.count;
            p.save(next)?;
            Ok(summary.count)
        })
    }

    pub fn summary(&self) -> RunSummary {
        let c = &self.ckpt.counts;
        let accepted = c.accepted();
        let realized_mix = TaskKind::ALL
            .iter()
            .map(|k| {
                let n = c.accepted_per_task.get(k).copied().unwrap_or(0);
                (*k, if accepted == 0 { 0.0 } else { n as f64 / accepted as f64 })
            })
            .collect();
        let intended_mix = TaskKind::ALL.iter().map(|k| (*k, self.cfg.mix.weight(*k))).collect();
        let mut notes = vec![format!(
            "rounds: generated {} = good {} + bad {} + quarantined {}",
            c.generated, c.good, c.bad, c.quarantined
        )];
        if self.ckpt.stage >= Stage::Generated && accepted < self.cfg.target_accepted {
            notes.push(format!(
                "target of {} accepted instances not reached; the selection ran out",
                self.cfg.target_accepted
            ));
        }
        RunSummary {
            seed: self.cfg.seed,
            config_fingerprint: self.ckpt.config_fingerprint.clone(),
            stage: self.ckpt.stage,
            target_accepted: self.cfg.target_accepted,
            counts: c.clone(),
            accepted,
            unprocessed: c.selected.saturating_sub(c.records_processed),
            intended_mix,
            realized_mix,
            usage: self.ckpt.usage,
            output_path: self.cfg.output_path(),
            stage_seconds: self.stage_seconds.clone(),
            notes,
        }
    }

    /// Runs every stage that has not completed yet and writes `summary.json`.
    pub fn run_to_end(&mut self) -> Result<RunSummary, PipelineError> {
        if self.ckpt.stage < Stage::Ingested {
            self.stage_ingest()?;
        }
        if self.ckpt.stage < Stage::Filtered {
            self.stage_filter()?;
        }
        if self.ckpt.stage < Stage::Embedded {
            self.stage_embed()?;
        }
        if self.ckpt.stage < Stage::Selected {
            self.stage_select()?;
        }
        if self.ckpt.stage < Stage::Assigned {
            self.stage_assign()?;
        }
        if self.ckpt.stage < Stage::Generated {
            self.stage_generate()?;
        }
        if self.ckpt.stage < Stage::Done {
            self.stage_emit()?;
        }
        let summary = self.summary();
        jsonl::write_json_atomic(&self.paths.summary(), &summary)?;
        Ok(summary)
    }
}

/// Opens the work directory and runs the pipeline to completion.
pub fn run(
    cfg: PipelineConfig,
    backends: Backends,
    hooks: Arc<RunHooks>,
    resume: bool,
) -> Result<RunSummary, PipelineError> {
    let mode = if resume { OpenMode::Resume } else { OpenMode::Fresh };
    Pipeline::open(cfg, backends, hooks, mode)?.run_to_end()
}

struct RecordCtx<'a> {
    cfg: &'a PipelineConfig,
    db: &'a ExemplarDb,
    journal: &'a Journal,
    gen_client: &'a ChatClient,
    disc_client: &'a ChatClient,
    rulesets: &'a BTreeMap<TaskKind, RuleSet>,
    hooks: &'a RunHooks,
}

impl RecordCtx<'_> {
    fn backend_error(&self, record_id: &str, stage: &'static str, source: BackendError) -> PipelineError {
        if self.hooks.aborted() {
            PipelineError::Aborted
        } else {
            PipelineError::Backend {
                record_id: record_id.to_string(),
                stage,
                source,
            }
        }
    }

    fn process(&self, record: &RawCodeRecord, a: &Assignment, def: &TaskDefinition) -> Result<Vec<RoundResult>, PipelineError> {
        let mut out = Vec::new();
        for round in 0..=self.cfg.retry_after_bad {
            let generation = match self.journal.get(&record.id, round, false) {
                Some(ev) => ev,
                None => {
                    let seed = derive_seed(self.cfg.seed, &["round", &round.to_string()]);
                    let ev = match generate_instance(record, def, self.db, self.gen_client, &self.cfg.generation, seed) {
                        Ok(o) => JournalEvent::Generated {
                            instance: o.instance,
                            attempts: o.attempts,
                            usage: o.usage,
                            exemplar_ids: o.prompt.exemplar_ids,
                        },
                        Err(GeneratorError::Failed {
                            attempts,
                            last_reply,
                            last_error,
                        }) => JournalEvent::Failed {
                            stage: FailedStage::Generate,
                            attempts,
                            error: last_error.to_string(),
                            last_reply,
                            usage: Usage::default(),
                        },
                        Err(GeneratorError::Backend(e)) => return Err(self.backend_error(&record.id, "generate", e)),
                    };
                    self.journal.record(&record.id, round, false, &ev)?;
                    ev
                }
            };
            let instance = match &generation {
                JournalEvent::Generated { instance, .. } => instance.clone(),
                _ => {
                    out.push(RoundResult {
                        round,
                        generation,
                        judgment: None,
                    });
                    break;
                }
            };
            let judgment = match self.journal.get(&record.id, round, true) {
                Some(ev) => ev,
                None => {
                    let instance_ref = format!("{}#{round}", record.id);
                    let ruleset = &self.rulesets[&a.task];
                    let ev = match discriminate(&instance, ruleset, self.disc_client, &self.cfg.discrimination, &instance_ref) {
                        Ok(o) => JournalEvent::Judged {
                            report: o.report,
                            attempts: o.attempts,
                            usage: o.usage,
                        },
                        Err(DiscriminatorError::Failed {
                            attempts,
                            last_reply,
                            last_error,
                        }) => JournalEvent::Failed {
                            stage: FailedStage::Discriminate,
                            attempts,
                            error: last_error.to_string(),
                            last_reply,
                            usage: Usage::default(),
                        },
                        Err(DiscriminatorError::Backend(e)) => {
                            return Err(self.backend_error(&record.id, "discriminate", e))
                        }
                    };
                    self.journal.record(&record.id, round, true, &ev)?;
                    ev
                }
            };
            let done = !matches!(&judgment, JournalEvent::Judged { report, .. } if report.label == Label::Bad);
            out.push(RoundResult {
                round,
                generation,
                judgment: Some(judgment),
            });
            if done {
                break;
            }
        }
        Ok(out)
    }
}

fn event_usage(ev: &JournalEvent) -> Usage {
    match ev {
        JournalEvent::Generated { usage, .. } | JournalEvent::Judged { usage, .. } | JournalEvent::Failed { usage, .. } => {
            *usage
        }
    }
}

fn prev_stage(stage: Stage) -> Stage {
    match stage {
        Stage::Init | Stage::Ingested => Stage::Init,
        Stage::Filtered => Stage::Ingested,
        Stage::Embedded => Stage::Filtered,
        Stage::Selected => Stage::Embedded,
        Stage::Assigned => Stage::Selected,
        Stage::Generating | Stage::Generated => Stage::Assigned,
        Stage::Done => Stage::Generated,
    }
}

fn remove_if_exists(path: &Path) -> Result<(), PipelineError> {
    match std::fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(JsonlError::io(path, e).into()),
    }
}

/// Removes outputs of an earlier run. An exemplar DB outside the work
/// directory is shared state the user manages and is left alone.
fn clear_run_files(cfg: &PipelineConfig, paths: &WorkPaths) -> Result<(), PipelineError> {
    for f in paths.run_files() {
        remove_if_exists(&f)?;
    }
    let db = cfg.exemplar_db_path();
    if db.starts_with(&paths.root) {
        remove_if_exists(&db)?;
    } else if db.exists() {
        log::info!("keeping existing exemplar DB {}", db.display());
    }
    remove_if_exists(&cfg.output_path())?;
    Ok(())
}
