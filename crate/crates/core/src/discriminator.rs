use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::generator::{fence_for, InstructionInstance};
use crate::jsonl::{self, JsonlError};
use crate::llm_backend::{BackendError, ChatClient, ChatMessage, ChatRequest, Usage};
use crate::taskspec::TaskKind;

pub const DISCRIMINATOR_SYSTEM_TEXT: &str =
    "You are a meticulous reviewer of instruction data for code models. Judge the data strictly against each rule.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleStep {
    pub name: String,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub id: String,
    pub steps: Vec<RuleStep>,
}

#[derive(Debug, thiserror::Error)]
pub enum RuleSetError {
    #[error("ruleset {id}: {message}")]
    Invalid { id: String, message: String },
    #[error(transparent)]
    Io(#[from] JsonlError),
}

impl RuleSet {
    pub fn validate(&self) -> Result<(), RuleSetError> {
        let invalid = |message: String| RuleSetError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.rule_count() == 0 {
            return Err(invalid("needs at least one step with one rule".into()));
        }
        let mut seen = HashSet::new();
        for rule in self.rules() {
            if rule.id.trim().is_empty() || rule.text.trim().is_empty() {
                return Err(invalid("rule ids and texts must be non-empty".into()));
            }
            if !seen.insert(rule.id.as_str()) {
                return Err(invalid(format!("duplicate rule id {}", rule.id)));
            }
        }
        Ok(())
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.steps.iter().flat_map(|s| s.rules.iter())
    }

    pub fn rule_count(&self) -> usize {
        self.steps.iter().map(|s| s.rules.len()).sum()
    }

    /// A copy without the given rule; steps left empty are dropped.
    pub fn without_rule(&self, rule_id: &str) -> RuleSet {
        let steps = self
            .steps
            .iter()
            .map(|s| RuleStep {
                name: s.name.clone(),
                rules: s.rules.iter().filter(|r| r.id != rule_id).cloned().collect(),
            })
            .filter(|s| !s.rules.is_empty())
            .collect();
        RuleSet {
            id: self.id.clone(),
            steps,
        }
    }
}

pub fn load_ruleset(path: &Path) -> Result<RuleSet, RuleSetError> {
    let rs: RuleSet = jsonl::read_json(path)?;
    rs.validate()?;
    Ok(rs)
}

pub fn parse_ruleset(raw: &str) -> Result<RuleSet, RuleSetError> {
    let rs: RuleSet = serde_json::from_str(raw).map_err(|e| RuleSetError::Invalid {
        id: "<inline>".into(),
        message: e.to_string(),
    })?;
    rs.validate()?;
    Ok(rs)
}

/// The shipped ruleset for each task.
pub fn default_ruleset(kind: TaskKind) -> RuleSet {
    let raw = match kind {
        TaskKind::CodeGeneration => include_str!("../data/rulesets/code_generation.json"),
        TaskKind::CodeSummarization => include_str!("../data/rulesets/code_summarization.json"),
        TaskKind::CodeTranslation => include_str!("../data/rulesets/code_translation.json"),
        TaskKind::CodeRepair => include_str!("../data/rulesets/code_repair.json"),
    };
    parse_ruleset(raw).expect("shipped rulesets are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Yes => "yes",
            Verdict::No => "no",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Good,
    Bad,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Good => "Good",
            Label::Bad => "Bad",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleVerdict {
    pub rule_id: String,
    pub answer: Verdict,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminationReport {
    pub instance_ref: String,
    pub verdicts: Vec<RuleVerdict>,
    pub overall: Verdict,
    pub overall_reasons: String,
    pub label: Label,
}

impl DiscriminationReport {
    /// Builds a report; the label is Good only when the overall answer and
    /// every per-rule answer are yes.
    pub fn new(
        instance_ref: impl Into<String>,
        verdicts: Vec<RuleVerdict>,
        overall: Verdict,
        overall_reasons: impl Into<String>,
    ) -> Self {
        let label = conjunction(&verdicts, overall);
        DiscriminationReport {
            instance_ref: instance_ref.into(),
            verdicts,
            overall,
            overall_reasons: overall_reasons.into(),
            label,
        }
    }

    pub fn label_is_consistent(&self) -> bool {
        self.label == conjunction(&self.verdicts, self.overall)
    }
}

fn conjunction(verdicts: &[RuleVerdict], overall: Verdict) -> Label {
    if overall == Verdict::Yes && verdicts.iter().all(|v| v.answer == Verdict::Yes) {
        Label::Good
    } else {
        Label::Bad
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisParseError {
    #[error("analysis is missing answers for rule(s) [{}]{}", .rule_ids.join(", "), if *.overall { " and the overall answer" } else { "" })]
    Missing { rule_ids: Vec<String>, overall: bool },
    #[error("unrecognized answer token {token:?}")]
    UnrecognizedAnswer { token: String },
}

/// Renders the instance followed by every rule, grouped by step, and the
/// required answer format.
pub fn build_discrimination_prompt(instance: &InstructionInstance, ruleset: &RuleSet) -> String {
    let mut p = String::from(
        "Analyze the instruction data below step by step and decide whether it satisfies each rule.\n\n### Instruction data\n",
    );
    let fence = fence_for(&instance.solution);
    p.push_str(&format!(
        "task_name: {}\ninstruction: {}\ninformation: {}\nsolution:\n{fence}\n{}\n{fence}\n\n### Rules\n",
        instance.task_name, instance.instruction, instance.information, instance.solution
    ));
    for (i, step) in ruleset.steps.iter().enumerate() {
        p.push_str(&format!("- Step {}: {}:\n", i + 1, step.name));
        for rule in &step.rules {
            p.push_str(&format!("  [{}] {}\n", rule.id, rule.text));
        }
    }
    p.push_str(
        "\n### Answer format\n\
         Repeat each rule with its bracketed id and end it with <answer: yes, your reason> or <answer: no, your reason>.\n\
         After the last rule write a line \"Overall answer: yes\" or \"Overall answer: no\", \
         then a line beginning with \"Reasons:\" that explains the overall answer.\n",
    );
    p
}

fn answer_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)<\s*answer\s*:\s*([A-Za-z]+)\s*[,.;:]?[ \t]*").expect("static regex"))
}

fn overall_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)overall\s+answer\s*:?\s*(?:\*\*)?\s*([A-Za-z]+)").expect("static regex")
    })
}

fn reasons_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)\breasons?\s*:\s*(?:\*\*)?(.*)").expect("static regex"))
}

fn parse_token(token: &str) -> Result<Verdict, AnalysisParseError> {
    match token.to_ascii_lowercase().as_str() {
        "yes" => Ok(Verdict::Yes),
        "no" => Ok(Verdict::No),
        _ => Err(AnalysisParseError::UnrecognizedAnswer {
            token: token.to_string(),
        }),
    }
}

/// End of the reason starting at `from`: the first `>` that closes its
/// line, unless another answer tag starts first, in which case the first `>`.
fn reason_end(text: &str, from: usize) -> usize {
    let rest = &text[from..];
    let next_tag = answer_regex().find(rest).map(|m| m.start()).unwrap_or(rest.len());
    let mut first_gt = None;
    for (i, c) in rest.char_indices() {
        if i >= next_tag {
            break;
        }
        if c == '>' {
            first_gt.get_or_insert(i);
            let tail = &rest[i + 1..];
            let line_rest = tail.split('\n').next().unwrap_or("");
            if line_rest.trim().is_empty() || line_rest.trim() == "\\\\" {
                return from + i;
            }
        }
    }
    match first_gt {
        Some(i) => from + i,
        None => from + rest.find('\n').unwrap_or(rest.len()).min(next_tag),
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

struct Segment {
    context: String,
    answer: Verdict,
    reason: String,
}

/// Parses a step-by-step analysis into one verdict per rule of `ruleset`.
///
/// Each `<answer: ...>` tag is attributed to the rule named in the text
/// preceding it: first by `[rule_id]`, then by the rule text itself, and
/// finally by position when the leftover tags and rules line up one to one.
/// Tags that match no rule of the set are ignored.
pub fn parse_discrimination_output(
    text: &str,
    ruleset: &RuleSet,
    instance_ref: &str,
) -> Result<DiscriminationReport, AnalysisParseError> {
    let mut segments = Vec::new();
    let mut cursor = 0;
    let mut search_from = 0;
    while let Some(c) = answer_regex().captures(&text[search_from..]) {
        let m = c.get(0).expect("whole match");
        let start = search_from + m.start();
        let body = search_from + m.end();
        let answer = parse_token(&c[1])?;
        let end = reason_end(text, body);
        segments.push(Segment {
            context: text[cursor..start].to_string(),
            answer,
            reason: text[body..end].trim().to_string(),
        });
        cursor = (end + 1).min(text.len());
        search_from = cursor;
    }
    let tail = &text[cursor..];

    let rules: Vec<&Rule> = ruleset.rules().collect();
    let mut assigned: Vec<Option<usize>> = vec![None; rules.len()];
    let mut used = vec![false; segments.len()];

    for (si, seg) in segments.iter().enumerate() {
        if let Some(ri) = rules
            .iter()
            .enumerate()
            .find(|(ri, r)| assigned[*ri].is_none() && seg.context.contains(&format!("[{}]", r.id)))
            .map(|(ri, _)| ri)
        {
            assigned[ri] = Some(si);
            used[si] = true;
        }
    }
    for (si, seg) in segments.iter().enumerate() {
        if used[si] {
            continue;
        }
        let ctx = normalize(&seg.context);
        let best = rules
            .iter()
            .enumerate()
            .filter(|(ri, r)| assigned[*ri].is_none() && ctx.contains(&normalize(&r.text)))
            .max_by_key(|(ri, r)| (r.text.len(), std::cmp::Reverse(*ri)))
            .map(|(ri, _)| ri);
        if let Some(ri) = best {
            assigned[ri] = Some(si);
            used[si] = true;
        }
    }
    let free_rules: Vec<usize> = (0..rules.len()).filter(|&r| assigned[r].is_none()).collect();
    let free_segs: Vec<usize> = (0..segments.len()).filter(|&s| !used[s]).collect();
    if !free_rules.is_empty() && free_rules.len() == free_segs.len() {
        for (r, s) in free_rules.iter().zip(free_segs) {
            assigned[*r] = Some(s);
        }
    }

    let overall = overall_regex().captures(tail);
    let missing: Vec<String> = rules
        .iter()
        .zip(&assigned)
        .filter(|(_, a)| a.is_none())
        .map(|(r, _)| r.id.clone())
        .collect();
    if !missing.is_empty() || overall.is_none() {
        return Err(AnalysisParseError::Missing {
            rule_ids: missing,
            overall: overall.is_none(),
        });
    }
    let overall = overall.expect("checked above");
    let overall_answer = parse_token(&overall[1])?;
    let after = &tail[overall.get(0).expect("whole match").end()..];
    let reasons = reasons_regex()
        .captures(after)
        .map(|c| c[1].trim().to_string())
        .unwrap_or_default();

    let verdicts = rules
        .iter()
        .zip(&assigned)
        .map(|(r, a)| {
            let seg = &segments[a.expect("all assigned")];
            RuleVerdict {
                rule_id: r.id.clone(),
                answer: seg.answer,
                reason: seg.reason.clone(),
            }
        })
        .collect();
    Ok(DiscriminationReport::new(instance_ref, verdicts, overall_answer, reasons))
}

/// Renders a report as an analysis that [`parse_discrimination_output`] reads back.
pub fn render_analysis(report: &DiscriminationReport, ruleset: &RuleSet) -> String {
    let mut out = String::new();
    let mut vi = report.verdicts.iter();
    for (i, step) in ruleset.steps.iter().enumerate() {
        out.push_str(&format!("- Step {}: {}:\n", i + 1, step.name));
        for (j, rule) in step.rules.iter().enumerate() {
            let v = vi.next();
            let (ans, reason) = v.map_or((Verdict::No, "no verdict"), |v| (v.answer, v.reason.as_str()));
            out.push_str(&format!(
                "  {}. [{}] {} <answer: {}, {}>\n",
                j + 1,
                rule.id,
                rule.text,
                ans,
                reason
            ));
        }
    }
    out.push_str(&format!("- Overall answer: {}\n", report.overall));
    out.push_str(&format!("- Reasons: {}\n", report.overall_reasons));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorSettings {
    pub model_name: String,
    pub temperature: f64,
    pub max_output: u32,
    pub retries: u32,
}

impl Default for DiscriminatorSettings {
    fn default() -> Self {
        DiscriminatorSettings {
            model_name: "gpt-4".into(),
            temperature: 0.0,
            max_output: 1024,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminationOutcome {
    pub report: DiscriminationReport,
    pub attempts: u32,
    pub usage: Usage,
}

#[derive(Debug, thiserror::Error)]
pub enum DiscriminatorError {
    #[error("discrimination failed after {attempts} attempt(s): {last_error}")]
    Failed {
        attempts: u32,
        last_reply: String,
        last_error: AnalysisParseError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub fn discriminate(
    instance: &InstructionInstance,
    ruleset: &RuleSet,
    client: &ChatClient,
    settings: &DiscriminatorSettings,
    instance_ref: &str,
) -> Result<DiscriminationOutcome, DiscriminatorError> {
    let request = ChatRequest {
        messages: vec![
            ChatMessage::system(DISCRIMINATOR_SYSTEM_TEXT),
            ChatMessage::user(build_discrimination_prompt(instance, ruleset)),
        ],
        temperature: settings.temperature,
        max_output: settings.max_output,
        model_name: settings.model_name.clone(),
    };
    let mut usage = Usage::default();
    let mut last = None;
    for attempt in 1..=settings.retries + 1 {
        let completion = client.complete(&request)?;
        usage += completion.usage;
        match parse_discrimination_output(&completion.content, ruleset, instance_ref) {
            Ok(report) => {
                return Ok(DiscriminationOutcome {
                    report,
                    attempts: attempt,
                    usage,
                })
            }
            Err(e) => {
                log::debug!("{instance_ref}: analysis attempt {attempt} unparseable: {e}");
                last = Some((completion.content, e));
            }
        }
    }
    let (last_reply, last_error) = last.expect("at least one attempt");
    Err(DiscriminatorError::Failed {
        attempts: settings.retries + 1,
        last_reply,
        last_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::parse_generator_output;
    use crate::llm_backend::{Matcher, MockChatBackend, RetryPolicy};
    use proptest::prelude::*;
    use std::sync::Arc;

    const GOLDEN: &str = include_str!("../tests/golden/sample_analysis.txt");
    const GOLDEN_OUTPUT: &str = include_str!("../tests/golden/sample_generator_output.txt");

    fn instance() -> InstructionInstance {
        parse_generator_output(GOLDEN_OUTPUT)
            .unwrap()
            .into_instance("r1", TaskKind::CodeGeneration)
    }

    #[test]
    fn golden_analysis_is_good() {
        let rs = default_ruleset(TaskKind::CodeGeneration);
        let r = parse_discrimination_output(GOLDEN, &rs, "r1").unwrap();
        assert_eq!(r.verdicts.len(), 5);
        assert!(r.verdicts.iter().all(|v| v.answer == Verdict::Yes));
        assert_eq!(r.overall, Verdict::Yes);
        assert_eq!(r.label, Label::Good);
        assert!(r.overall_reasons.starts_with("All the requirements are met"));
        assert!(r.verdicts[0].reason.starts_with("The instruction mentions \"Write a Python function,\""));
        assert!(r.verdicts[3].reason.starts_with("The code that contains algorithmic logic in the solution"));
        let ids: Vec<_> = r.verdicts.iter().map(|v| v.rule_id.as_str()).collect();
        assert_eq!(ids, ["instruction-1", "solution-1", "solution-2", "solution-3", "solution-4"]);
    }

    #[test]
    fn prompt_lists_rules_once() {
        let rs = default_ruleset(TaskKind::CodeGeneration);
        let p = build_discrimination_prompt(&instance(), &rs);
        assert!(p.contains("- Step 1: Check the Instruction:\n  [instruction-1] The programming language should be specified in the instruction."));
        for rule in rs.rules() {
            assert_eq!(p.matches(&format!("[{}]", rule.id)).count(), 1, "{}", rule.id);
        }
        assert!(p.contains(&instance().solution));
        for k in ["task_name:", "instruction:", "information:", "solution:"] {
            assert!(p.contains(k));
        }
        assert!(p.contains("Overall answer:") && p.contains("Reasons:"));
    }

    #[test]
    fn one_no_makes_bad() {
        let rs = default_ruleset(TaskKind::CodeGeneration);
        let text = GOLDEN.replacen(
            "<answer: yes, The code that contains",
            "<answer: NO, The code that contains",
            1,
        );
        let r = parse_discrimination_output(&text, &rs, "r1").unwrap();
        assert_eq!(r.overall, Verdict::Yes);
        assert_eq!(r.verdicts[3].answer, Verdict::No);
        assert_eq!(r.label, Label::Bad);
    }

    #[test]
    fn missing_overall_and_rules_reported() {
        let rs = default_ruleset(TaskKind::CodeGeneration);
        let cut = &GOLDEN[..GOLDEN.find("- Overall answer").unwrap()];
        assert_eq!(
            parse_discrimination_output(cut, &rs, "r").unwrap_err(),
            AnalysisParseError::Missing {
                rule_ids: vec![],
                overall: true
            }
        );
        let first_two = GOLDEN.lines().take(4).collect::<Vec<_>>().join("\n") + "\nOverall answer: no\n";
        match parse_discrimination_output(&first_two, &rs, "r").unwrap_err() {
            AnalysisParseError::Missing { rule_ids, overall } => {
                assert!(!overall);
                assert_eq!(rule_ids, ["solution-2", "solution-3", "solution-4"]);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unknown_token_rejected() {
        let rs = default_ruleset(TaskKind::CodeGeneration);
        let text = GOLDEN.replacen("<answer: yes", "<answer: maybe", 1);
        assert!(matches!(
            parse_discrimination_output(&text, &rs, "r"),
            Err(AnalysisParseError::UnrecognizedAnswer { .. })
        ));
    }

    #[test]
    fn reduced_ruleset_keeps_retained_verdicts() {
        let rs = default_ruleset(TaskKind::CodeGeneration);
        let full = parse_discrimination_output(GOLDEN, &rs, "r").unwrap();
        for removed in rs.rules().map(|r| r.id.clone()).collect::<Vec<_>>() {
            let reduced = rs.without_rule(&removed);
            let r = parse_discrimination_output(GOLDEN, &reduced, "r").unwrap();
            let expected: Vec<_> = full.verdicts.iter().filter(|v| v.rule_id != removed).cloned().collect();
            assert_eq!(r.verdicts, expected, "removed {removed}");
        }
    }

    #[test]
    fn render_round_trip_golden() {
        let rs = default_ruleset(TaskKind::CodeGeneration);
        let r = parse_discrimination_output(GOLDEN, &rs, "r").unwrap();
        let back = parse_discrimination_output(&render_analysis(&r, &rs), &rs, "r").unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn rulesets_validate() {
        for k in TaskKind::ALL {
            let rs = default_ruleset(k);
            assert!(rs.rule_count() >= 3);
        }
        let bad = r#"{"id":"x","steps":[{"name":"a","rules":[{"id":"r","text":"t"},{"id":"r","text":"u"}]}]}"#;
        assert!(parse_ruleset(bad).is_err());
        assert!(parse_ruleset(r#"{"id":"x","steps":[]}"#).is_err());
    }

    fn client(mock: MockChatBackend) -> ChatClient {
        ChatClient::unbounded(
            Arc::new(mock),
            RetryPolicy {
                max_attempts: 1,
                ..Default::default()
            },
        )
    }

    #[test]
    fn discriminate_with_mock() {
        let rs = default_ruleset(TaskKind::CodeGeneration);
        let c = client(MockChatBackend::new().reply(Matcher::Any, GOLDEN));
        let out = discriminate(&instance(), &rs, &c, &DiscriminatorSettings::default(), "r1").unwrap();
        assert_eq!(out.report.label, Label::Good);
        assert_eq!(out.attempts, 1);

        let c = client(
            MockChatBackend::new()
                .reply(Matcher::Any, "no idea")
                .reply(Matcher::Any, GOLDEN),
        );
        let s = DiscriminatorSettings {
            retries: 1,
            ..Default::default()
        };
        assert_eq!(discriminate(&instance(), &rs, &c, &s, "r1").unwrap().attempts, 2);

        let c = client(MockChatBackend::new().reply(Matcher::Any, "no idea"));
        let s = DiscriminatorSettings {
            retries: 0,
            ..Default::default()
        };
        match discriminate(&instance(), &rs, &c, &s, "r1") {
            Err(DiscriminatorError::Failed { last_reply, .. }) => assert_eq!(last_reply, "no idea"),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn label_conjunction(answers in prop::collection::vec(any::<bool>(), 1..8), overall in any::<bool>()) {
            let verdicts: Vec<_> = answers.iter().enumerate().map(|(i, a)| RuleVerdict {
                rule_id: format!("r{i}"),
                answer: if *a { Verdict::Yes } else { Verdict::No },
                reason: "x".into(),
            }).collect();
            let o = if overall { Verdict::Yes } else { Verdict::No };
            let r = DiscriminationReport::new("i", verdicts, o, "");
            prop_assert_eq!(r.label == Label::Good, overall && answers.iter().all(|a| *a));
            prop_assert!(r.label_is_consistent());
        }

        #[test]
        fn render_parse_round_trip(
            answers in prop::collection::vec(any::<bool>(), 6),
            reasons in prop::collection::vec("[A-Za-z][A-Za-z0-9 ,.()\"]{0,40}", 6),
            overall in any::<bool>(),
            overall_reasons in "[A-Za-z][A-Za-z0-9 ,.]{0,60}",
        ) {
            for kind in TaskKind::ALL {
                let rs = default_ruleset(kind);
                let verdicts: Vec<_> = rs.rules().enumerate().map(|(i, r)| RuleVerdict {
                    rule_id: r.id.clone(),
                    answer: if answers[i % 6] { Verdict::Yes } else { Verdict::No },
                    reason: reasons[i % 6].trim().to_string(),
                }).collect();
                let o = if overall { Verdict::Yes } else { Verdict::No };
                let report = DiscriminationReport::new("i", verdicts, o, overall_reasons.trim());
                let back = parse_discrimination_output(&render_analysis(&report, &rs), &rs, "i").unwrap();
                prop_assert_eq!(back, report);
            }
        }
    }
}
