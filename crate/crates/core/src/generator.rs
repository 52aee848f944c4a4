//! Generation prompts, the generator reply grammar, and the generate-with-retry loop.
//!
//! Replies use four labeled fields, each starting a line:
//!
//! ```text
//! task_name: Calculate Circle Area
//! instruction: Write a Python function ...
//! information: The formula ...
//! solution:
//! import math
//! ...
//! ```
//!
//! A field runs until the next label line. Label lines inside a fenced code
//! block are treated as content.

use std::sync::OnceLock;
use std::time::{SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::RawCodeRecord;
use crate::discriminator::Verdict;
use crate::exemplar_db::{ExemplarDb, ExemplarEntry, SamplingPolicy};
use crate::llm_backend::{BackendError, ChatClient, ChatMessage, ChatRequest, Usage};
use crate::seed::derive_seed;
use crate::taskspec::{TaskDefinition, TaskKind};

pub const GENERATOR_SYSTEM_TEXT: &str = "You are an expert software engineer who writes high-quality instruction data for training code models. Follow the task definition and every requirement exactly.";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub model: String,
    pub attempts: u32,
    pub timestamp_ms: u64,
}

/// The generator's structured output for one raw code record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionInstance {
    pub task_name: String,
    pub instruction: String,
    pub information: String,
    pub solution: String,
    pub source_record_id: String,
    pub task_kind: TaskKind,
    #[serde(default)]
    pub generation_meta: GenerationMeta,
}

impl InstructionInstance {
    /// Field-wise equality on the four content keys.
    pub fn same_content(&self, other: &InstructionInstance) -> bool {
        self.task_name == other.task_name
            && self.instruction == other.instruction
            && self.information == other.information
            && self.solution == other.solution
    }
}

/// The four keys parsed out of a reply, before record and task are attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFields {
    pub task_name: String,
    pub instruction: String,
    pub information: String,
    pub solution: String,
}

impl ParsedFields {
    pub fn into_instance(self, source_record_id: &str, task_kind: TaskKind) -> InstructionInstance {
        InstructionInstance {
            task_name: self.task_name,
            instruction: self.instruction,
            information: self.information,
            solution: self.solution,
            source_record_id: source_record_id.to_string(),
            task_kind,
            generation_meta: GenerationMeta::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("generator reply is missing key(s): {}", .missing.join(", "))]
    Missing { missing: Vec<&'static str> },
    #[error("generator reply repeats key {key}")]
    Duplicate { key: &'static str },
    #[error("instance violates task requirements: {0}")]
    Requirement(String),
}

#[derive(Debug, thiserror::Error)]
pub enum GeneratorError {
    #[error("generation failed after {attempts} attempt(s): {last_error}")]
    Failed {
        attempts: u32,
        last_reply: String,
        last_error: ParseError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationPrompt {
    pub system_text: String,
    pub user_text: String,
    pub exemplar_ids: Vec<String>,
}

const KEYS: [&str; 4] = ["task_name", "instruction", "information", "solution"];

fn key_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^[ \t]*(?:[-*][ \t]*)?(?:\*\*)?(task[ _-]?name|instruction|information|solution)(?:\*\*)?[ \t]*:(?:\*\*)?[ \t]?(.*)$",
        )
        .expect("static regex")
    })
}

fn canonical_key(raw: &str) -> &'static str {
    let lower = raw.to_ascii_lowercase();
    if lower.starts_with("task") {
        "task_name"
    } else {
        KEYS.into_iter().find(|k| *k == lower).expect("regex only admits known keys")
    }
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Parses a generator reply into its four fields.
pub fn parse_generator_output(text: &str) -> Result<ParsedFields, ParseError> {
    let re = key_regex();
    let mut fields: [Option<Vec<&str>>; 4] = Default::default();
    let mut current: Option<usize> = None;
    let mut in_fence = false;
    for line in text.lines() {
        if !in_fence {
            if let Some(c) = re.captures(line) {
                let key = canonical_key(&c[1]);
                let idx = KEYS.iter().position(|k| *k == key).expect("known key");
                if fields[idx].is_some() {
                    return Err(ParseError::Duplicate { key });
                }
                let rest = c.get(2).map_or("", |m| m.as_str());
                if is_fence(rest) {
                    in_fence = true;
                }
                fields[idx] = Some(vec![rest]);
                current = Some(idx);
                continue;
            }
        }
        if is_fence(line) {
            in_fence = !in_fence;
        }
        if let Some(idx) = current {
            fields[idx].as_mut().expect("current field exists").push(line);
        }
    }
    let missing: Vec<&'static str> = [0usize, 1, 3]
        .into_iter()
        .filter(|&i| fields[i].as_ref().map_or(true, |v| v.join("\n").trim().is_empty()))
        .map(|i| KEYS[i])
        .collect();
    if !missing.is_empty() {
        return Err(ParseError::Missing { missing });
    }
    let joined = |i: usize| fields[i].as_ref().map_or(String::new(), |v| v.join("\n"));
    Ok(ParsedFields {
        task_name: joined(0).trim().to_string(),
        instruction: joined(1).trim().to_string(),
        information: joined(2).trim().to_string(),
        solution: strip_fence(joined(3).trim()).to_string(),
    })
}

/// Removes one enclosing code fence (with optional language tag); the body
/// between the fence lines is returned byte-for-byte.
pub fn strip_fence(s: &str) -> &str {
    if !s.starts_with("```") || !s.ends_with("```") {
        return s;
    }
    let Some(first_nl) = s.find('\n') else {
        return s;
    };
    let ticks = s.bytes().take_while(|&b| b == b'`').count();
    let body_and_close = &s[first_nl + 1..];
    let Some(last_nl) = body_and_close.rfind('\n') else {
        // opener line followed directly by the closing fence: empty body
        return if body_and_close.trim() == "`".repeat(ticks) { "" } else { s };
    };
    let closing = &body_and_close[last_nl + 1..];
    if closing.trim() != "`".repeat(ticks) {
        return s;
    }
    &body_and_close[..last_nl]
}

/// A fence longer than any backtick run in `body`.
pub(crate) fn fence_for(body: &str) -> String {
    let mut longest = 0;
    let mut run = 0;
    for b in body.bytes() {
        if b == b'`' {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    "`".repeat((longest + 1).max(3))
}

/// Renders an instance in the reply grammar; [`parse_generator_output`] inverts it.
pub fn render_instance(fields: &InstructionInstance) -> String {
    let fence = fence_for(&fields.solution);
    format!(
        "task_name: {}\ninstruction: {}\ninformation: {}\nsolution:\n{fence}\n{}\n{fence}\n",
        fields.task_name, fields.instruction, fields.information, fields.solution
    )
}

fn target_language(taskdef: &TaskDefinition) -> Option<&str> {
    taskdef
        .extra_params
        .get("target_language")
        .and_then(|v| v.as_str())
}

fn render_exemplar(out: &mut String, entry: &ExemplarEntry) {
    use crate::discriminator::Label;
    match entry.label {
        Label::Good => out.push_str("#### GOOD EXAMPLE\n"),
        Label::Bad => out.push_str("#### BAD EXAMPLE\n"),
    }
    out.push_str(&render_instance(&entry.instance));
    if entry.label == Label::Bad {
        out.push_str("Why this example is bad:\n");
        for v in entry.report.verdicts.iter().filter(|v| v.answer == Verdict::No) {
            out.push_str(&format!("- [{}] {}\n", v.rule_id, v.reason));
        }
        if !entry.report.overall_reasons.is_empty() {
            out.push_str(&format!("- Overall: {}\n", entry.report.overall_reasons));
        }
    }
    out.push('\n');
}

/// Assembles the generation prompt: task definition, numbered requirements,
/// labeled exemplars, the raw code verbatim, and the output format.
/// `{target_language}` in requirements is filled from `extra.target_language`.
pub fn build_generation_prompt(
    record: &RawCodeRecord,
    taskdef: &TaskDefinition,
    exemplars: &[ExemplarEntry],
) -> GenerationPrompt {
    let target = target_language(taskdef);
    let mut u = String::new();
    u.push_str(taskdef.definition_text.trim());
    u.push_str("\n\n### Task\n");
    u.push_str(&format!("Task kind: {}\n", taskdef.kind));
    u.push_str(taskdef.generation_prompt.trim());
    u.push('\n');
    if let Some(t) = target {
        u.push_str(&format!("Target language: {t}\n"));
    }
    u.push_str("\n### Requirements\n");
    for (i, req) in taskdef.requirements.iter().enumerate() {
        let req = match target {
            Some(t) => req.replace("{target_language}", t),
            None => req.replace("{target_language}", "the target language"),
        };
        u.push_str(&format!("{}. {}\n", i + 1, req));
    }
    if !exemplars.is_empty() {
        u.push_str("\n### Examples\n");
        for e in exemplars {
            render_exemplar(&mut u, e);
        }
    } else {
        u.push('\n');
    }
    let lang = if record.language.is_empty() {
        "unknown language"
    } else {
        record.language.as_str()
    };
    let fence = fence_for(&record.code);
    u.push_str(&format!("### Raw code ({lang})\n{fence}\n{}\n{fence}\n\n", record.code));
    u.push_str(
        "### Output format\n\
         Reply with exactly these four labeled fields, each label at the start of its own line:\n\
         task_name: <a short title for the task>\n\
         instruction: <the instruction>\n\
         information: <the input the instruction refers to, or nothing if none is needed>\n\
         solution: <the solution; put code inside a fenced code block>\n",
    );
    GenerationPrompt {
        system_text: GENERATOR_SYSTEM_TEXT.to_string(),
        user_text: u,
        exemplar_ids: exemplars.iter().map(|e| e.entry_id.clone()).collect(),
    }
}

/// Structural checks implied by each task's input: summarization and
/// repair instances must carry code in `information`, translation must
/// name its target.
pub fn check_task_structure(fields: &ParsedFields, taskdef: &TaskDefinition) -> Result<(), ParseError> {
    match taskdef.kind {
        TaskKind::CodeSummarization | TaskKind::CodeRepair if fields.information.is_empty() => {
            Err(ParseError::Requirement(format!(
                "{} needs the code in the information field",
                taskdef.kind
            )))
        }
        TaskKind::CodeTranslation if target_language(taskdef).is_none() => Err(
            ParseError::Requirement("translation task has no target language".into()),
        ),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSettings {
    pub model_name: String,
    pub temperature: f64,
    pub max_output: u32,
    /// Extra attempts after a parse failure.
    pub retries: u32,
    pub sampling: SamplingPolicy,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        GeneratorSettings {
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.7,
            max_output: 2048,
            retries: 2,
            sampling: SamplingPolicy::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub instance: InstructionInstance,
    pub prompt: GenerationPrompt,
    pub attempts: u32,
    pub usage: Usage,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Samples exemplars, prompts the backend and parses the reply; a parse
/// failure triggers a fresh exemplar sample, up to `settings.retries` times.
pub fn generate_instance(
    record: &RawCodeRecord,
    taskdef: &TaskDefinition,
    db: &ExemplarDb,
    client: &ChatClient,
    settings: &GeneratorSettings,
    seed: u64,
) -> Result<GenerationOutcome, GeneratorError> {
    let mut usage = Usage::default();
    let mut last: Option<(String, ParseError)> = None;
    for attempt in 1..=settings.retries + 1 {
        let sample_seed = derive_seed(seed, &[&record.id, "generate", &attempt.to_string()]);
        let exemplars = db.sample(taskdef.kind, &settings.sampling, sample_seed);
        let prompt = build_generation_prompt(record, taskdef, &exemplars);
        let request = ChatRequest {
            messages: vec![
                ChatMessage::system(prompt.system_text.clone()),
                ChatMessage::user(prompt.user_text.clone()),
            ],
            temperature: settings.temperature,
            max_output: settings.max_output,
            model_name: settings.model_name.clone(),
        };
        let completion = client.complete(&request)?;
        usage += completion.usage;
        let parsed = parse_generator_output(&completion.content)
            .and_then(|f| check_task_structure(&f, taskdef).map(|_| f));
        match parsed {
            Ok(fields) => {
                let mut instance = fields.into_instance(&record.id, taskdef.kind);
                instance.generation_meta = GenerationMeta {
                    model: settings.model_name.clone(),
                    attempts: attempt,
                    timestamp_ms: now_ms(),
                };
                return Ok(GenerationOutcome {
                    instance,
                    prompt,
                    attempts: attempt,
                    usage,
                });
            }
            Err(e) => {
                log::debug!("record {} generation attempt {attempt} unparseable: {e}", record.id);
                last = Some((completion.content, e));
            }
        }
    }
    let (last_reply, last_error) = last.expect("at least one attempt ran");
    Err(GeneratorError::Failed {
        attempts: settings.retries + 1,
        last_reply,
        last_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discriminator::{DiscriminationReport, Label, RuleVerdict};
    use crate::llm_backend::{Matcher, MockChatBackend, RetryPolicy};
    use crate::taskspec::default_task_definitions;
    use proptest::prelude::*;
    use std::sync::Arc;

    const GOLDEN_REPLY: &str = include_str!("../tests/golden/sample_generator_output.txt");

    fn record() -> RawCodeRecord {
        RawCodeRecord {
            id: "rec-1".into(),
            code: "def f(x):\n    return x * 2  # ``` tricky\n".into(),
            comment: "Doubles x.".into(),
            language: "Python".into(),
            repo: None,
            path: None,
            license: None,
        }
    }

    fn entry(id: &str, label: Label) -> ExemplarEntry {
        let instance = parse_generator_output(GOLDEN_REPLY)
            .unwrap()
            .into_instance("src", TaskKind::CodeGeneration);
        let answer = if label == Label::Good { Verdict::Yes } else { Verdict::No };
        let report = DiscriminationReport::new(
            id,
            vec![RuleVerdict {
                rule_id: "solution-2".into(),
                answer,
                reason: "Explanations appear outside the code.".into(),
            }],
            answer,
            "Overall reasoning.",
        );
        ExemplarEntry {
            entry_id: id.into(),
            instance,
            label: report.label,
            report,
            task_kind: TaskKind::CodeGeneration,
            created_seq: 0,
        }
    }

    #[test]
    fn parses_golden_reply() {
        let f = parse_generator_output(GOLDEN_REPLY).unwrap();
        assert_eq!(f.task_name, "Calculate Circle Area");
        assert_eq!(
            f.instruction,
            "Write a Python function that calculates the area of a circle given its radius."
        );
        assert_eq!(
            f.information,
            "The formula to calculate the area of a circle is A = pi * r^2, where A is the area and r is the radius."
        );
        assert_eq!(
            f.solution,
            "import math\n\ndef area_of_circle(radius):\n    return math.pi * radius ** 2"
        );
    }

    #[test]
    fn missing_solution_is_reported() {
        let err = parse_generator_output("task_name: t\ninstruction: i\ninformation: x\n").unwrap_err();
        assert_eq!(err, ParseError::Missing { missing: vec!["solution"] });
        let err = parse_generator_output("nothing useful").unwrap_err();
        assert_eq!(
            err,
            ParseError::Missing {
                missing: vec!["task_name", "instruction", "solution"]
            }
        );
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = parse_generator_output("task_name: a\ntask_name: b\ninstruction: i\nsolution: s\n").unwrap_err();
        assert_eq!(err, ParseError::Duplicate { key: "task_name" });
    }

    #[test]
    fn keys_case_insensitive_and_empty_information() {
        let f = parse_generator_output("Task_Name: A\nINSTRUCTION: B\nInformation:\nSolution: C\n").unwrap();
        assert_eq!((f.task_name.as_str(), f.information.as_str(), f.solution.as_str()), ("A", "", "C"));
        let f = parse_generator_output("**Task name:** A\n- instruction: B\nsolution: C").unwrap();
        assert_eq!(f.task_name, "A");
        assert_eq!(f.information, "");
    }

    #[test]
    fn fenced_solution_body_is_exact() {
        let body = "  fn main() {\n\n    println!(\"hi\");\n}  ";
        let reply = format!("task_name: t\ninstruction: i\ninformation:\nsolution:\n```rust\n{body}\n```\n");
        assert_eq!(parse_generator_output(&reply).unwrap().solution, body);
    }

    #[test]
    fn label_lines_inside_fences_are_content() {
        let reply = "task_name: t\ninstruction: i\nsolution:\n```\ninformation: not a key\n```\n";
        let f = parse_generator_output(reply).unwrap();
        assert_eq!(f.information, "");
        assert_eq!(f.solution, "information: not a key");
    }

    #[test]
    fn prompt_cold_start_and_verbatim_code() {
        let defs = default_task_definitions();
        let p = build_generation_prompt(&record(), &defs[&TaskKind::CodeGeneration], &[]);
        assert!(!p.user_text.contains("### Examples"));
        assert!(p.user_text.contains(&record().code));
        assert!(p.user_text.contains("Implementing functions that perform specific operations given input."));
        assert!(p.user_text.contains("1. The instruction must state"));
        assert!(p.exemplar_ids.is_empty());
        // the raw code contains ``` so the fence must be longer
        assert!(p.user_text.contains("````\ndef f(x)"));
    }

    #[test]
    fn prompt_sections_in_order_with_banners() {
        let defs = default_task_definitions();
        let ex = vec![entry("g1", Label::Good), entry("b1", Label::Bad)];
        let p = build_generation_prompt(&record(), &defs[&TaskKind::CodeGeneration], &ex);
        let u = &p.user_text;
        let pos = |s: &str| u.find(s).unwrap_or_else(|| panic!("missing {s}"));
        assert!(pos("Code generation (text-to-code") < pos("### Requirements"));
        assert!(pos("### Requirements") < pos("#### GOOD EXAMPLE"));
        assert!(pos("#### GOOD EXAMPLE") < pos("#### BAD EXAMPLE"));
        assert!(pos("#### BAD EXAMPLE") < pos("[solution-2] Explanations appear outside the code."));
        assert!(pos("#### BAD EXAMPLE") < pos("### Raw code (Python)"));
        assert!(pos("### Raw code (Python)") < pos("### Output format"));
        for k in KEYS {
            assert!(u[pos("### Output format")..].contains(&format!("{k}:")));
        }
        assert_eq!(p.exemplar_ids, vec!["g1", "b1"]);
    }

    #[test]
    fn translation_prompt_names_target() {
        let mut def = default_task_definitions()[&TaskKind::CodeTranslation].clone();
        def.extra_params.insert("target_language".into(), "Go".into());
        let p = build_generation_prompt(&record(), &def, &[]);
        assert!(p.user_text.contains("Target language: Go"));
        assert!(p.user_text.contains("target language Go."));
        assert!(!p.user_text.contains("{target_language}"));
    }

    #[test]
    fn prompt_is_pure() {
        let defs = default_task_definitions();
        let ex = vec![entry("g1", Label::Good)];
        let a = build_generation_prompt(&record(), &defs[&TaskKind::CodeRepair], &ex);
        let b = build_generation_prompt(&record(), &defs[&TaskKind::CodeRepair], &ex);
        assert_eq!(a, b);
    }

    fn client(mock: Arc<MockChatBackend>) -> ChatClient {
        ChatClient::unbounded(
            mock,
            RetryPolicy {
                max_attempts: 1,
                base_delay_ms: 0,
                ..Default::default()
            },
        )
    }

    #[test]
    fn generate_golden_first_attempt() {
        let mock = Arc::new(MockChatBackend::new().reply(Matcher::Any, GOLDEN_REPLY));
        let defs = default_task_definitions();
        let out = generate_instance(
            &record(),
            &defs[&TaskKind::CodeGeneration],
            &ExemplarDb::in_memory(),
            &client(mock.clone()),
            &GeneratorSettings::default(),
            1,
        )
        .unwrap();
        assert_eq!(out.attempts, 1);
        assert_eq!(out.instance.task_name, "Calculate Circle Area");
        assert_eq!(out.instance.source_record_id, "rec-1");
        assert_eq!(out.instance.generation_meta.attempts, 1);
        assert_eq!(mock.transcript()[0].user_text(), out.prompt.user_text);
    }

    #[test]
    fn generate_retries_after_malformed() {
        let mock = Arc::new(
            MockChatBackend::new()
                .reply(Matcher::Any, "I cannot comply.")
                .reply(Matcher::Any, GOLDEN_REPLY),
        );
        let defs = default_task_definitions();
        let settings = GeneratorSettings {
            retries: 1,
            ..Default::default()
        };
        let out = generate_instance(
            &record(),
            &defs[&TaskKind::CodeGeneration],
            &ExemplarDb::in_memory(),
            &client(mock),
            &settings,
            1,
        )
        .unwrap();
        assert_eq!(out.attempts, 2);
        assert_eq!(out.instance.generation_meta.attempts, 2);
    }

    #[test]
    fn generate_exhaustion_carries_last_reply() {
        let mock = Arc::new(MockChatBackend::new().reply(Matcher::Any, "garbage"));
        let defs = default_task_definitions();
        let settings = GeneratorSettings {
            retries: 0,
            ..Default::default()
        };
        match generate_instance(
            &record(),
            &defs[&TaskKind::CodeGeneration],
            &ExemplarDb::in_memory(),
            &client(mock),
            &settings,
            1,
        ) {
            Err(GeneratorError::Failed { attempts, last_reply, .. }) => {
                assert_eq!(attempts, 1);
                assert_eq!(last_reply, "garbage");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backend_errors_propagate() {
        let mock = Arc::new(MockChatBackend::new());
        let defs = default_task_definitions();
        let r = generate_instance(
            &record(),
            &defs[&TaskKind::CodeGeneration],
            &ExemplarDb::in_memory(),
            &client(mock),
            &GeneratorSettings::default(),
            1,
        );
        assert!(matches!(r, Err(GeneratorError::Backend(_))));
    }

    #[test]
    fn summarization_requires_information() {
        let defs = default_task_definitions();
        let f = parse_generator_output("task_name: t\ninstruction: i\nsolution: s").unwrap();
        assert!(check_task_structure(&f, &defs[&TaskKind::CodeSummarization]).is_err());
        assert!(check_task_structure(&f, &defs[&TaskKind::CodeGeneration]).is_ok());
        assert!(check_task_structure(&f, &defs[&TaskKind::CodeTranslation]).is_err());
    }

    fn field(multiline: bool) -> impl Strategy<Value = String> {
        let re = if multiline {
            "[A-Za-z0-9(),.=+*/ ]{1,30}(\n[A-Za-z0-9(),.=+*/ ]{1,30}){0,3}"
        } else {
            "[A-Za-z0-9(),.=+*/ ]{1,30}"
        };
        re.prop_map(|s| s.trim().to_string()).prop_filter("non-empty", |s| !s.is_empty() && !s.lines().any(|l| l.trim().is_empty()))
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(
            name in field(false),
            instr in field(true),
            info in prop::option::of(field(true)),
            sol in "[ -~]{0,20}(\n[ -~]{0,30}){0,5}",
        ) {
            prop_assume!(!sol.trim().is_empty());
            let inst = InstructionInstance {
                task_name: name,
                instruction: instr,
                information: info.unwrap_or_default(),
                solution: sol,
                source_record_id: "r".into(),
                task_kind: TaskKind::CodeRepair,
                generation_meta: GenerationMeta::default(),
            };
            let text = render_instance(&inst);
            let back = parse_generator_output(&text).unwrap().into_instance("r", TaskKind::CodeRepair);
            prop_assert!(inst.same_content(&back), "{:?} vs {:?}", inst, back);
        }

        #[test]
        fn parse_never_fabricates(text in "(task_name|instruction|information|solution|note|```)?:?[ -~]{0,20}(\n(task_name|instruction|information|solution|```)?:?[ -~]{0,20}){0,8}") {
            if let Ok(f) = parse_generator_output(&text) {
                for v in [&f.task_name, &f.instruction, &f.information, &f.solution] {
                    prop_assert!(text.contains(v.as_str()), "{:?} not in {:?}", v, text);
                }
            }
        }
    }
}
