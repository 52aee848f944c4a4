use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminationReport;
use crate::generator::InstructionInstance;
use crate::llm_backend::{BackendError, ChatBackend, ChatRequest, ChatResponse, ErrorClass, Usage};
use crate::taskspec::TaskKind;

use super::PipelineError;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Ingested,
    Filtered,
    Embedded,
    Selected,
    Assigned,
    Generating,
    Generated,
    Done,
}

/// Fixed file layout inside the work directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkPaths {
    pub root: PathBuf,
}

impl WorkPaths {
    pub fn new(root: &Path) -> Self {
        WorkPaths { root: root.to_path_buf() }
    }
    pub fn records(&self) -> PathBuf {
        self.root.join("records.jsonl")
    }
    pub fn ingest_report(&self) -> PathBuf {
        self.root.join("ingest_report.json")
    }
    pub fn filtered(&self) -> PathBuf {
        self.root.join("filtered.jsonl")
    }
    pub fn filter_report(&self) -> PathBuf {
        self.root.join("filter_report.json")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings.jsonl")
    }
    pub fn selection(&self) -> PathBuf {
        self.root.join("selection.json")
    }
    pub fn assignments(&self) -> PathBuf {
        self.root.join("assignments.jsonl")
    }
    pub fn journal(&self) -> PathBuf {
        self.root.join("journal.jsonl")
    }
    pub fn accepted(&self) -> PathBuf {
        self.root.join("accepted.jsonl")
    }
    pub fn quarantine(&self) -> PathBuf {
        self.root.join("quarantine.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    /// Files a fresh run starts without.
    pub fn run_files(&self) -> Vec<PathBuf> {
        vec![
            self.records(),
            self.ingest_report(),
            self.filtered(),
            self.filter_report(),
            self.embeddings(),
            self.selection(),
            self.assignments(),
            self.journal(),
            self.accepted(),
            self.quarantine(),
            self.checkpoint(),
            self.summary(),
        ]
    }
}

/// Funnel counters. `generated` counts generation rounds; each round ends
/// in exactly one of good, bad or quarantined. The `records_*` counters
/// classify each processed record by the outcome of its last round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub ingested: usize,
    pub ingest_skipped: usize,
    pub filtered_kept: usize,
    pub filtered_rejected: usize,
    pub embedded: usize,
    pub selected: usize,
    pub generated: usize,
    pub good: usize,
    pub bad: usize,
    pub quarantined: usize,
    pub records_processed: usize,
    pub records_good: usize,
    pub records_bad: usize,
    pub records_quarantined: usize,
    pub emitted: usize,
    pub accepted_per_task: BTreeMap<TaskKind, usize>,
    pub intended_per_task: BTreeMap<TaskKind, usize>,
}

impl RunCounts {
    pub fn accepted(&self) -> usize {
        self.accepted_per_task.values().sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub generation: Usage,
    pub discrimination: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: Stage,
    /// Position in the assignment list of the next record to process.
    pub cursor: usize,
    pub db_len: usize,
    /// Exemplar DB length when generation started, after seeding.
    pub db_base_len: usize,
    pub accepted_len: usize,
    pub quarantine_len: usize,
    pub counts: RunCounts,
    pub usage: UsageTotals,
    pub seed: u64,
    pub config_fingerprint: String,
}

impl Checkpoint {
    pub fn new(seed: u64, config_fingerprint: String) -> Self {
        Checkpoint {
            stage: Stage::Init,
            cursor: 0,
            db_len: 0,
            db_base_len: 0,
            accepted_len: 0,
            quarantine_len: 0,
            counts: RunCounts::default(),
            usage: UsageTotals::default(),
            seed,
            config_fingerprint,
        }
    }

    /// Moves forward; refuses to go back or to reduce accepted counts.
    pub fn advance(&mut self, next: Checkpoint) -> Result<(), PipelineError> {
        if next.stage < self.stage {
            return Err(PipelineError::State(format!(
                "checkpoint stage would regress from {:?} to {:?}",
                self.stage, next.stage
            )));
        }
        for (task, n) in &self.counts.accepted_per_task {
            if next.counts.accepted_per_task.get(task).copied().unwrap_or(0) < *n {
                return Err(PipelineError::State(format!("accepted count for {task} would decrease")));
            }
        }
        *self = next;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailedStage {
    Generate,
    Discriminate,
}

/// One journal line: the result of one backend-driven step for a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub record_id: String,
    pub round: u32,
    pub event: JournalEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEvent {
    Generated {
        instance: InstructionInstance,
        attempts: u32,
        usage: Usage,
        exemplar_ids: Vec<String>,
    },
    Judged {
        report: DiscriminationReport,
        attempts: u32,
        usage: Usage,
    },
    Failed {
        stage: FailedStage,
        attempts: u32,
        error: String,
        last_reply: String,
        usage: Usage,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedRecord {
    pub record_id: String,
    pub entry_id: String,
    pub task_kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_language: Option<String>,
    pub instance: InstructionInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub record_id: String,
    pub round: u32,
    pub task_kind: TaskKind,
    pub stage: FailedStage,
    pub attempts: u32,
    pub error: String,
    pub last_reply: String,
}

/// Fault injection for crash tests. Every side-effecting step (backend
/// call, journal write, commit append, checkpoint write) ticks a shared
/// counter; once it reaches `abort_after` every later step fails, which
/// is what a killed process looks like from the files' point of view.
#[derive(Debug, Default)]
pub struct RunHooks {
    abort_after: Option<u64>,
    ticks: AtomicU64,
    aborted: AtomicBool,
}

impl RunHooks {
    pub fn none() -> Arc<Self> {
        Arc::new(RunHooks::default())
    }

    pub fn abort_after(n: u64) -> Arc<Self> {
        Arc::new(RunHooks {
            abort_after: Some(n),
            ..Default::default()
        })
    }

    pub fn tick(&self) -> Result<(), PipelineError> {
        if self.aborted.load(Ordering::SeqCst) {
            return Err(PipelineError::Aborted);
        }
        let n = self.ticks.fetch_add(1, Ordering::SeqCst) + 1;
        match self.abort_after {
            Some(limit) if n >= limit => {
                self.aborted.store(true, Ordering::SeqCst);
                Err(PipelineError::Aborted)
            }
            _ => Ok(()),
        }
    }

    pub fn ticks(&self) -> u64 {
        self.ticks.load(Ordering::SeqCst)
    }

    pub fn aborted(&self) -> bool {
        self.aborted.load(Ordering::SeqCst)
    }
}

/// Chat backend wrapper that ticks the hooks before each call.
pub(crate) struct HookedBackend {
    pub inner: Arc<dyn ChatBackend>,
    pub hooks: Arc<RunHooks>,
}

impl ChatBackend for HookedBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.hooks
            .tick()
            .map_err(|_| BackendError::new(ErrorClass::Client, "run aborted"))?;
        self.inner.send(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hooks_fail_from_limit_on() {
        let h = RunHooks::abort_after(3);
        assert!(h.tick().is_ok());
        assert!(h.tick().is_ok());
        assert!(h.tick().is_err());
        assert!(h.tick().is_err());
        assert!(h.aborted());
        let none = RunHooks::none();
        for _ in 0..100 {
            none.tick().unwrap();
        }
    }

    #[test]
    fn checkpoint_is_monotone() {
        let mut c = Checkpoint::new(1, "f".into());
        let mut next = c.clone();
        next.stage = Stage::Filtered;
        next.counts.accepted_per_task.insert(TaskKind::CodeRepair, 2);
        c.advance(next.clone()).unwrap();
        let mut back = next.clone();
        back.stage = Stage::Ingested;
        assert!(c.advance(back).is_err());
        let mut fewer = next;
        fewer.counts.accepted_per_task.insert(TaskKind::CodeRepair, 1);
        assert!(c.advance(fewer).is_err());
    }

    #[test]
    fn journal_entry_round_trip() {
        let e = JournalEntry {
            record_id: "r".into(),
            round: 1,
            event: JournalEvent::Failed {
                stage: FailedStage::Discriminate,
                attempts: 3,
                error: "bad".into(),
                last_reply: "x".into(),
                usage: Usage::default(),
            },
        };
        let s = serde_json::to_string(&e).unwrap();
        assert!(s.contains("\"kind\":\"failed\""));
        assert_eq!(serde_json::from_str::<JournalEntry>(&s).unwrap(), e);
    }
}
