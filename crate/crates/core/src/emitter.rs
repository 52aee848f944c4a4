//! Alpaca-style training examples, fine-tuning prompt rendering and dataset output.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::generator::InstructionInstance;
use crate::jsonl::{self, JsonlError};
use crate::taskspec::TaskKind;

pub const PROMPT_WITH_INPUT: &str = include_str!("../data/templates/prompt_with_input.txt");
pub const PROMPT_NO_INPUT: &str = include_str!("../data/templates/prompt_no_input.txt");
/// The conventional no-input wording, which does not mention an input.
pub const PROMPT_NO_INPUT_CLASSIC: &str = include_str!("../data/templates/prompt_no_input_classic.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub instruction: String,
    pub input: String,
    pub output: String,
    #[serde(rename = "_task")]
    pub task_kind: TaskKind,
    #[serde(rename = "_source_id")]
    pub source_record_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error("instance from {0} has an empty instruction or solution")]
    InvalidInstance(String),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

/// information becomes the input and solution the output; task_name is dropped.
pub fn to_training_example(instance: &InstructionInstance) -> Result<TrainingExample, EmitError> {
    if instance.instruction.trim().is_empty() || instance.solution.trim().is_empty() {
        return Err(EmitError::InvalidInstance(instance.source_record_id.clone()));
    }
    Ok(TrainingExample {
        instruction: instance.instruction.clone(),
        input: instance.information.clone(),
        output: instance.solution.clone(),
        task_kind: instance.task_kind,
        source_record_id: instance.source_record_id.clone(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    pub alpaca_classic_no_input_preamble: bool,
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{(instruction|input)\}").expect("static regex"))
}

/// Substitutes `{instruction}` and `{input}` in one pass, so placeholder-like
/// text inside the values is left alone.
pub fn fill_template(template: &str, instruction: &str, input: &str) -> String {
    placeholder()
        .replace_all(template, |c: &Captures| match &c[1] {
            "instruction" => instruction.to_string(),
            _ => input.to_string(),
        })
        .into_owned()
}

pub fn render_prompt(example: &TrainingExample, options: PromptOptions) -> String {
    let template = if !example.input.is_empty() {
        PROMPT_WITH_INPUT
    } else if options.alpaca_classic_no_input_preamble {
        PROMPT_NO_INPUT_CLASSIC
    } else {
        PROMPT_NO_INPUT
    };
    fill_template(template, &example.instruction, &example.input)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub per_task_counts: BTreeMap<TaskKind, usize>,
}

impl DatasetSummary {
    pub fn of(examples: &[TrainingExample]) -> Self {
        let mut per_task_counts: BTreeMap<TaskKind, usize> = TaskKind::ALL.iter().map(|k| (*k, 0)).collect();
        for e in examples {
            *per_task_counts.entry(e.task_kind).or_default() += 1;
        }
        DatasetSummary {
            count: examples.len(),
            per_task_counts,
        }
    }
}

/// Writes the dataset atomically: either the whole file appears or nothing does.
pub fn write_dataset(examples: &[TrainingExample], path: &Path) -> Result<DatasetSummary, EmitError> {
    jsonl::write_all_atomic(path, examples)?;
    Ok(DatasetSummary::of(examples))
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrainingExample>, EmitError> {
    Ok(jsonl::read_all(path)?)
}
