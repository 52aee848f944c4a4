//! Labeled exemplar store backed by an append-only JSONL file.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::discriminator::{DiscriminationReport, Label};
use crate::generator::InstructionInstance;
use crate::jsonl::{self, Appender, JsonlError};
use crate::seed::derive_rng;
use crate::taskspec::TaskKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarEntry {
    pub entry_id: String,
    pub instance: InstructionInstance,
    pub report: DiscriminationReport,
    pub label: Label,
    pub task_kind: TaskKind,
    pub created_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPolicy {
    pub n_good: usize,
    pub n_bad: usize,
    pub same_task_only: bool,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy {
            n_good: 1,
            n_bad: 1,
            same_task_only: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExemplarError {
    #[error("duplicate exemplar id {0}")]
    Duplicate(String),
    #[error("exemplar {id}: {message}")]
    Invalid { id: String, message: String },
    #[error(transparent)]
    Storage(#[from] JsonlError),
}

/// Counts per (task, label); every combination is present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbStats {
    pub counts: BTreeMap<TaskKind, BTreeMap<Label, usize>>,
}

impl DbStats {
    pub fn count(&self, task: TaskKind, label: Label) -> usize {
        self.counts[&task][&label]
    }

    pub fn total(&self) -> usize {
        self.counts.values().flat_map(|m| m.values()).sum()
    }

    pub fn label_total(&self, label: Label) -> usize {
        self.counts.values().map(|m| m[&label]).sum()
    }
}

#[derive(Debug, Default)]
pub struct ExemplarDb {
    entries: Vec<ExemplarEntry>,
    by_id: HashMap<String, usize>,
    by_task: HashMap<(TaskKind, Label), Vec<usize>>,
    by_label: HashMap<Label, Vec<usize>>,
    next_seq: u64,
    path: Option<PathBuf>,
    appender: Option<Appender>,
}

impl Clone for ExemplarDb {
    /// Clones the contents only; the clone is detached from any backing file.
    fn clone(&self) -> Self {
        ExemplarDb {
            entries: self.entries.clone(),
            by_id: self.by_id.clone(),
            by_task: self.by_task.clone(),
            by_label: self.by_label.clone(),
            next_seq: self.next_seq,
            path: None,
            appender: None,
        }
    }
}

impl ExemplarDb {
    pub fn in_memory() -> Self {
        ExemplarDb::default()
    }

    /// Loads (or creates) the file at `path`; later inserts are appended to it.
    pub fn open(path: &Path) -> Result<Self, ExemplarError> {
        Self::open_inner(path, None)
    }

    /// Like [`ExemplarDb::open`] but first drops every entry past the first `keep`.
    pub fn open_truncated(path: &Path, keep: usize) -> Result<Self, ExemplarError> {
        Self::open_inner(path, Some(keep))
    }

    fn open_inner(path: &Path, keep: Option<usize>) -> Result<Self, ExemplarError> {
        let mut appender = Appender::open(path)?;
        if let Some(n) = keep {
            drop(appender);
            jsonl::truncate_lines(path, n)?;
            appender = Appender::open(path)?;
        }
        let entries: Vec<ExemplarEntry> = jsonl::read_all_or_empty(path)?;
        let mut db = ExemplarDb::default();
        for e in entries {
            if e.created_seq < db.next_seq && !db.entries.is_empty() {
                return Err(ExemplarError::Invalid {
                    id: e.entry_id,
                    message: "created_seq is not increasing".into(),
                });
            }
            let seq = e.created_seq;
            db.index(e)?;
            db.next_seq = seq + 1;
        }
        db.path = Some(path.to_path_buf());
        db.appender = Some(appender);
        Ok(db)
    }

    fn index(&mut self, entry: ExemplarEntry) -> Result<(), ExemplarError> {
        if self.by_id.contains_key(&entry.entry_id) {
            return Err(ExemplarError::Duplicate(entry.entry_id));
        }
        if entry.label != entry.report.label || !entry.report.label_is_consistent() {
            return Err(ExemplarError::Invalid {
                id: entry.entry_id,
                message: "label disagrees with its report".into(),
            });
        }
        let i = self.entries.len();
        self.by_id.insert(entry.entry_id.clone(), i);
        self.by_task.entry((entry.task_kind, entry.label)).or_default().push(i);
        self.by_label.entry(entry.label).or_default().push(i);
        self.entries.push(entry);
        Ok(())
    }

    /// Inserts an entry, assigning its `created_seq`, and appends it to the
    /// backing file if there is one. Returns the assigned sequence number.
    pub fn insert(&mut self, mut entry: ExemplarEntry) -> Result<u64, ExemplarError> {
        if self.by_id.contains_key(&entry.entry_id) {
            return Err(ExemplarError::Duplicate(entry.entry_id));
        }
        entry.created_seq = self.next_seq;
        if let Some(app) = self.appender.as_mut() {
            // validate before touching the file
            if entry.label != entry.report.label || !entry.report.label_is_consistent() {
                return Err(ExemplarError::Invalid {
                    id: entry.entry_id,
                    message: "label disagrees with its report".into(),
                });
            }
            app.append(&entry)?;
        }
        self.index(entry)?;
        self.next_seq += 1;
        Ok(self.next_seq - 1)
    }

    pub fn get(&self, entry_id: &str) -> Option<&ExemplarEntry> {
        self.by_id.get(entry_id).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[ExemplarEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Up to `n_good` Good then up to `n_bad` Bad entries, drawn without
    /// replacement; fully determined by the db contents, arguments and seed.
    pub fn sample(&self, task: TaskKind, policy: &SamplingPolicy, seed: u64) -> Vec<ExemplarEntry> {
        let mut rng = derive_rng(seed, &["exemplar-sample", task.as_str()]);
        let mut out = Vec::with_capacity(policy.n_good + policy.n_bad);
        for (label, n) in [(Label::Good, policy.n_good), (Label::Bad, policy.n_bad)] {
            if n == 0 {
                continue;
            }
            let pool = if policy.same_task_only {
                self.by_task.get(&(task, label))
            } else {
                self.by_label.get(&label)
            };
            let Some(pool) = pool else { continue };
            let take = n.min(pool.len());
            for i in index::sample(&mut rng, pool.len(), take) {
                out.push(self.entries[pool[i]].clone());
            }
        }
        out
    }

    pub fn stats(&self) -> DbStats {
        let mut counts = BTreeMap::new();
        for t in TaskKind::ALL {
            let m: BTreeMap<Label, usize> = [Label::Good, Label::Bad]
                .into_iter()
                .map(|l| (l, self.by_task.get(&(t, l)).map_or(0, Vec::len)))
                .collect();
            counts.insert(t, m);
        }
        DbStats { counts }
    }

    /// Writes every entry to `path` atomically.
    pub fn save(&self, path: &Path) -> Result<(), ExemplarError> {
        jsonl::write_all_atomic(path, &self.entries)?;
        Ok(())
    }
}
