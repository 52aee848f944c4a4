//! The four code tasks, their generation definitions, and the task-mix policy.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::seed::unit_hash;

const DEFAULT_TASK_FILE: &str = include_str!("../data/tasks.json");

#[derive(Debug, thiserror::Error)]
pub enum TaskSpecError {
    #[error("task file: {0}")]
    Config(String),
    #[error("task file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("task file json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid mix policy: {0}")]
    InvalidMix(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    CodeGeneration,
    CodeSummarization,
    CodeTranslation,
    CodeRepair,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::CodeGeneration,
        TaskKind::CodeSummarization,
        TaskKind::CodeTranslation,
        TaskKind::CodeRepair,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::CodeGeneration => "CodeGeneration",
            TaskKind::CodeSummarization => "CodeSummarization",
            TaskKind::CodeTranslation => "CodeTranslation",
            TaskKind::CodeRepair => "CodeRepair",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            TaskKind::CodeGeneration => "Code Generation",
            TaskKind::CodeSummarization => "Code Summarization",
            TaskKind::CodeTranslation => "Code Translation",
            TaskKind::CodeRepair => "Code Repair",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = TaskSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TaskSpecError::Config(format!("unknown task kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDefinition {
    pub kind: TaskKind,
    #[serde(rename = "definition")]
    pub definition_text: String,
    #[serde(rename = "prompt")]
    pub generation_prompt: String,
    pub requirements: Vec<String>,
    #[serde(rename = "rule_set")]
    pub rule_set_id: String,
    #[serde(rename = "extra", default)]
    pub extra_params: Map<String, Value>,
}

impl TaskDefinition {
    /// Target languages for translation, from `extra.target_languages`.
    pub fn target_languages(&self) -> Vec<String> {
        self.extra_params
            .get("target_languages")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    #[serde(default = "default_version")]
    pub version: u32,
    pub tasks: Vec<TaskDefinition>,
}

fn default_version() -> u32 {
    1
}

pub type TaskDefinitions = BTreeMap<TaskKind, TaskDefinition>;

pub fn load_task_definitions(path: &Path) -> Result<TaskDefinitions, TaskSpecError> {
    parse_task_file(&std::fs::read_to_string(path)?)
}

/// The shipped task file.
pub fn default_task_definitions() -> TaskDefinitions {
    parse_task_file(DEFAULT_TASK_FILE).expect("shipped task file is valid")
}

pub fn parse_task_file(raw: &str) -> Result<TaskDefinitions, TaskSpecError> {
    let file: TaskFile = serde_json::from_str(raw)?;
    let mut out = BTreeMap::new();
    for def in file.tasks {
        let kind = def.kind;
        if def.generation_prompt.trim().is_empty() {
            return Err(TaskSpecError::Config(format!("{kind}: empty prompt")));
        }
        if def.requirements.is_empty() {
            return Err(TaskSpecError::Config(format!("{kind}: no requirements")));
        }
        if out.insert(kind, def).is_some() {
            return Err(TaskSpecError::Config(format!("{kind}: defined more than once")));
        }
    }
    if let Some(missing) = TaskKind::ALL.iter().find(|k| !out.contains_key(k)) {
        return Err(TaskSpecError::Config(format!("{missing}: missing definition")));
    }
    Ok(out)
}

pub fn serialize_task_file(defs: &TaskDefinitions) -> Result<String, TaskSpecError> {
    let file = TaskFile {
        version: 1,
        tasks: defs.values().cloned().collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Target share of each task in the generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixPolicy {
    pub weights: BTreeMap<TaskKind, f64>,
}

impl MixPolicy {
    /// Rescales non-negative weights to sum to one.
    pub fn normalized(raw: impl IntoIterator<Item = (TaskKind, f64)>) -> Result<Self, TaskSpecError> {
        let weights: BTreeMap<TaskKind, f64> = raw.into_iter().collect();
        if weights.values().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(TaskSpecError::InvalidMix("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.values().sum();
        if total <= 0.0 {
            return Err(TaskSpecError::InvalidMix("weights sum to zero".into()));
        }
        Ok(MixPolicy {
            weights: weights.into_iter().map(|(k, w)| (k, w / total)).collect(),
        })
    }

    pub fn validate(&self) -> Result<(), TaskSpecError> {
        if self.weights.values().any(|w| !(*w >= 0.0)) {
            return Err(TaskSpecError::InvalidMix("negative weight".into()));
        }
        let sum: f64 = self.weights.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TaskSpecError::InvalidMix(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn weight(&self, kind: TaskKind) -> f64 {
        self.weights.get(&kind).copied().unwrap_or(0.0)
    }

    /// Kind whose cumulative band contains `u` in [0, 1).
    fn pick(&self, u: f64) -> TaskKind {
        let mut acc = 0.0;
        let mut last = None;
        for kind in TaskKind::ALL {
            let w = self.weight(kind);
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = Some(kind);
            if u < acc {
                return kind;
            }
        }
        last.expect("validated policy has a positive weight")
    }
}

/// Published task proportions (57.1 / 15.8 / 15.8 / 11.2, which total 99.9),
/// renormalized to sum to one.
pub fn default_mix() -> MixPolicy {
    MixPolicy::normalized([
        (TaskKind::CodeGeneration, 57.1),
        (TaskKind::CodeSummarization, 15.8),
        (TaskKind::CodeRepair, 15.8),
        (TaskKind::CodeTranslation, 11.2),
    ])
    .expect("positive weights")
}

/// Seeded weighted assignment. Each id's draw depends only on `(seed, id)`,
/// so the result does not depend on the position of the id in the input.
pub fn assign_tasks(
    record_ids: &[String],
    policy: &MixPolicy,
    seed: u64,
) -> Result<Vec<(String, TaskKind)>, TaskSpecError> {
    policy.validate()?;
    Ok(record_ids
        .iter()
        .map(|id| (id.clone(), policy.pick(unit_hash(seed, &["assign", id]))))
        .collect())
}

/// One record's task, plus the translation target when the task is translation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub record_id: String,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_language: Option<String>,
}

/// Resolves translation targets round-robin over `targets`, skipping a
/// target equal to the record's own language.
pub fn resolve_targets(
    assigned: &[(String, TaskKind)],
    source_languages: &BTreeMap<String, String>,
    targets: &[String],
) -> Vec<Assignment> {
    let mut cursor = 0usize;
    assigned
        .iter()
        .map(|(id, task)| {
            let target_language = (*task == TaskKind::CodeTranslation && !targets.is_empty()).then(|| {
                let src = source_languages.get(id).map(String::as_str).unwrap_or("");
                let mut pick = &targets[cursor % targets.len()];
                cursor += 1;
                if pick.eq_ignore_ascii_case(src) && targets.len() > 1 {
                    pick = &targets[cursor % targets.len()];
                    cursor += 1;
                }
                pick.clone()
            });
            Assignment {
                record_id: id.clone(),
                task: *task,
                target_language,
            }
        })
        .collect()
}
