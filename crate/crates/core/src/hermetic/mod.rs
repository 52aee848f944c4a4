//! Offline fixtures: a synthetic code corpus and a deterministic stand-in for
//! the generator and discriminator models. Replies are computed from the
//! prompt text alone, so runs are reproducible regardless of call order.

mod stub_server;

pub use stub_server::{openai_compatible_handler, RecordedRequest, StubHttpServer, StubResponse};

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RawCodeRecord;
use crate::generator::fence_for;
use crate::llm_backend::{BackendError, ChatRequest, ErrorClass, MockChatBackend};
use crate::seed::{derive_rng, unit_hash};
use crate::taskspec::TaskKind;

/// Record counts per language used for the shipped language-mix fixture.
pub const REFERENCE_LANGUAGE_COUNTS: [(&str, usize); 8] = [
    ("Python", 2944),
    ("PHP", 2134),
    ("Go", 1968),
    ("Java", 1853),
    ("JavaScript", 556),
    ("Ruby", 182),
    ("C++", 182),
    ("C#", 181),
];

/// Languages reported individually; the rest are grouped as "Others".
pub const REFERENCE_LANGUAGE_GROUPING: [&str; 5] = ["Python", "PHP", "Go", "Java", "JavaScript"];

const NOUNS: [&str; 16] = [
    "total", "count", "value", "price", "score", "index", "limit", "offset", "weight", "rate", "level",
    "amount", "width", "height", "speed", "budget",
];

fn snippet(language: &str, n: usize, rng: &mut impl Rng) -> String {
    let a = NOUNS.choose(rng).expect("non-empty");
    let mut b = NOUNS.choose(rng).expect("non-empty");
    while b == a {
        b = NOUNS.choose(rng).expect("non-empty");
    }
    let k: u32 = rng.gen_range(2..97);
    let m: u32 = rng.gen_range(1..500);
    let f = format!("combine_{a}_{b}_{n}");
    let cap = format!("Combine{n}");
    match language {
        "Python" => format!(
            "def {f}({a}, {b}):\n    \"\"\"Weighted sum of {a} and {b}.\"\"\"\n    result = {a} * {k} + {b}\n    return result - {m}\n"
        ),
        "PHP" => format!(
            "<?php\n// Weighted sum of {a} and {b}.\nfunction {f}(${a}, ${b}) {{\n    $result = ${a} * {k} + ${b};\n    return $result - {m};\n}}\n"
        ),
        "Go" => format!(
            "// {cap} returns a weighted sum of {a} and {b}.\nfunc {cap}({a} int, {b} int) int {{\n\tresult := {a}*{k} + {b}\n\treturn result - {m}\n}}\n"
        ),
        "Java" => format!(
            "public class {cap} {{\n    /** Weighted sum of {a} and {b}. */\n    public static int apply(int {a}, int {b}) {{\n        return {a} * {k} + {b} - {m};\n    }}\n}}\n"
        ),
        "JavaScript" => format!(
            "// Weighted sum of {a} and {b}.\nfunction {f}({a}, {b}) {{\n  const result = {a} * {k} + {b};\n  return result - {m};\n}}\n"
        ),
        "Ruby" => format!(
            "# Weighted sum of {a} and {b}.\ndef {f}({a}, {b})\n  result = {a} * {k} + {b}\n  result - {m}\nend\n"
        ),
        "C++" => format!(
            "// Weighted sum of {a} and {b}.\nint {f}(int {a}, int {b}) {{\n    int result = {a} * {k} + {b};\n    return result - {m};\n}}\n"
        ),
        _ => format!(
            "// Weighted sum of {a} and {b} ({language}).\nstatic int {cap}(int {a}, int {b})\n{{\n    var result = {a} * {k} + {b};\n    return result - {m};\n}}\n"
        ),
    }
}

/// Builder for a synthetic corpus with optional records the default
/// filters reject (too short, or containing a blacklisted word).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub languages: Vec<(String, usize)>,
    pub too_short: usize,
    pub blacklisted: usize,
    pub seed: u64,
}

impl SyntheticCorpus {
    pub fn new(languages: &[(&str, usize)], seed: u64) -> Self {
        SyntheticCorpus {
            languages: languages.iter().map(|(l, n)| (l.to_string(), *n)).collect(),
            too_short: 0,
            blacklisted: 0,
            seed,
        }
    }

    pub fn reference_mix(seed: u64) -> Self {
        Self::new(&REFERENCE_LANGUAGE_COUNTS, seed)
    }

    pub fn with_rejects(mut self, too_short: usize, blacklisted: usize) -> Self {
        self.too_short = too_short;
        self.blacklisted = blacklisted;
        self
    }

    /// Records are interleaved deterministically so languages are mixed
    /// throughout the file.
    pub fn build(&self) -> Vec<RawCodeRecord> {
        let mut rng = derive_rng(self.seed, &["synthetic-corpus"]);
        let mut slots: Vec<(usize, usize)> = Vec::new();
        for (li, (_, n)) in self.languages.iter().enumerate() {
            slots.extend((0..*n).map(|i| (li, i)));
        }
        slots.shuffle(&mut rng);
        let mut out = Vec::with_capacity(slots.len() + self.too_short + self.blacklisted);
        for (n, (li, _)) in slots.into_iter().enumerate() {
            let language = &self.languages[li].0;
            out.push(RawCodeRecord {
                id: format!("rec-{n:06}"),
                code: snippet(language, n, &mut rng),
                comment: format!("Synthetic {language} sample {n}."),
                language: language.clone(),
                repo: Some(format!("synthetic/repo-{}", n % 97)),
                path: None,
                license: Some("MIT".into()),
            });
        }
        let base = out.len();
        for i in 0..self.too_short {
            out.push(RawCodeRecord {
                id: format!("short-{i:05}"),
                code: format!("x = {i}"),
                comment: String::new(),
                language: "Python".into(),
                repo: None,
                path: None,
                license: None,
            });
        }
        for i in 0..self.blacklisted {
            let mut code = snippet("Python", base + i, &mut rng);
            code.push_str("# render the image before returning\n");
            out.push(RawCodeRecord {
                id: format!("blocked-{i:05}"),
                code,
                comment: String::new(),
                language: "Python".into(),
                repo: None,
                path: None,
                license: None,
            });
        }
        out
    }
}

/// Deterministic model stand-in. Generation prompts get a well-formed
/// four-key reply derived from the raw code; discrimination prompts get a
/// per-rule analysis. A `bad_rate` share of instances is judged bad and a
/// `malformed_rate` share of prompts receives an unparseable reply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticResponder {
    pub bad_rate: f64,
    pub malformed_rate: f64,
    pub salt: u64,
}

impl Default for SyntheticResponder {
    fn default() -> Self {
        SyntheticResponder {
            bad_rate: 0.1,
            malformed_rate: 0.0,
            salt: 0,
        }
    }
}

fn section<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let e = text[s..].find(end).map_or(text.len(), |e| s + e);
    Some(&text[s..e])
}

fn short_hash(salt: u64, text: &str) -> String {
    format!("{:08x}", (unit_hash(salt, &["tag", text]) * u32::MAX as f64) as u64)
}

impl SyntheticResponder {
    pub fn into_backend(self) -> MockChatBackend {
        MockChatBackend::new()
            .without_transcript()
            .with_responder(move |r| self.respond(r))
    }

    pub fn respond(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let text = request.user_text();
        if text.contains("\n### Rules\n") {
            Ok(self.judge(text))
        } else if text.contains("### Raw code (") {
            self.generate(text)
        } else {
            Err(BackendError::new(ErrorClass::Protocol, "unrecognized prompt"))
        }
    }

    fn malformed(&self, text: &str) -> bool {
        self.malformed_rate > 0.0 && unit_hash(self.salt, &["malformed", text]) < self.malformed_rate
    }

    fn generate(&self, prompt: &str) -> Result<String, BackendError> {
        let protocol = |m: &str| BackendError::new(ErrorClass::Protocol, m.to_string());
        if self.malformed(prompt) {
            return Ok("I am unable to produce the requested fields for this code.".into());
        }
        let kind = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Task kind: "))
            .and_then(|k| TaskKind::from_str(k.trim()).ok())
            .ok_or_else(|| protocol("no task kind in prompt"))?;
        let target = prompt.lines().find_map(|l| l.strip_prefix("Target language: "));
        let raw_at = prompt.rfind("### Raw code (").ok_or_else(|| protocol("no raw code"))?;
        let rest = &prompt[raw_at + "### Raw code (".len()..];
        let (lang, rest) = rest.split_once(")\n").ok_or_else(|| protocol("bad raw code header"))?;
        let (fence, rest) = rest.split_once('\n').ok_or_else(|| protocol("no fence"))?;
        let closing = format!("\n{fence}\n");
        let code = &rest[..rest.rfind(&closing).ok_or_else(|| protocol("unclosed fence"))?];
        let h = short_hash(self.salt, code);
        let first_line = code.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
        let (instruction, information, solution) = match kind {
            TaskKind::CodeGeneration => (
                format!("Write a {lang} function that computes the weighted combination implemented by reference {h}."),
                String::new(),
                code.to_string(),
            ),
            TaskKind::CodeSummarization => (
                format!("Write clear and concise documentation for the following {lang} code."),
                code.to_string(),
                format!("The {lang} code starting with `{first_line}` returns a weighted combination of its two arguments (reference {h})."),
            ),
            TaskKind::CodeTranslation => {
                let target = target.unwrap_or("Python");
                (
                    format!("Rewrite the following {lang} code in {target}."),
                    code.to_string(),
                    format!("// {target} version of reference {h}\n{code}"),
                )
            }
            TaskKind::CodeRepair => (
                format!("Identify and fix the errors in the following {lang} code."),
                code.replacen('+', "-", 1),
                format!("{code}\nFix: the first subtraction should be an addition (reference {h})."),
            ),
        };
        let fence = fence_for(&solution);
        Ok(format!(
            "task_name: {} {h}\ninstruction: {instruction}\ninformation: {information}\nsolution:\n{fence}\n{solution}\n{fence}\n",
            kind.display_name()
        ))
    }

    fn judge(&self, prompt: &str) -> String {
        if self.malformed(prompt) {
            return "The data looks reasonable overall.".into();
        }
        let instance = section(prompt, "### Instruction data\n", "\n### Rules\n").unwrap_or(prompt);
        let bad = unit_hash(self.salt, &["bad", instance]) < self.bad_rate;
        let rules = section(prompt, "\n### Rules\n", "\n### Answer format").unwrap_or("");
        let mut out = String::new();
        let ids: Vec<&str> = rules.lines().filter(|l| l.trim_start().starts_with('[')).collect();
        for (i, line) in ids.iter().enumerate() {
            let last = i + 1 == ids.len();
            if bad && last {
                out.push_str(&format!("{} <answer: no, The requirement is not met.>\n", line.trim()));
            } else {
                out.push_str(&format!("{} <answer: yes, The requirement is met.>\n", line.trim()));
            }
        }
        if bad {
            out.push_str("Overall answer: no\nReasons: At least one rule is violated.\n");
        } else {
            out.push_str("Overall answer: yes\nReasons: All rules are satisfied.\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{apply_filters, language_distribution, FilterConfig};
    use crate::discriminator::{build_discrimination_prompt, default_ruleset, parse_discrimination_output, Label};
    use crate::exemplar_db::ExemplarDb;
    use crate::generator::{build_generation_prompt, check_task_structure, parse_generator_output};
    use crate::llm_backend::ChatMessage;
    use crate::taskspec::default_task_definitions;

    fn req(text: String) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::user(text)],
            temperature: 0.0,
            max_output: 100,
            model_name: "m".into(),
        }
    }

    #[test]
    fn corpus_passes_default_filters_except_rejects() {
        let recs = SyntheticCorpus::new(&[("Python", 30), ("Go", 30), ("C#", 10), ("Ruby", 5)], 3)
            .with_rejects(4, 6)
            .build();
        let (kept, report) = apply_filters(&recs, &FilterConfig::default()).unwrap();
        assert_eq!(kept.len(), 75);
        assert_eq!(report.rejected_total(), 10);
    }

    #[test]
    fn reference_mix_builder_counts() {
        let recs = SyntheticCorpus::reference_mix(1).build();
        assert_eq!(recs.len(), 10_000);
        let d = language_distribution(&recs, Some(&REFERENCE_LANGUAGE_GROUPING[..])).unwrap();
        assert_eq!(d[0].language, "Python");
        assert_eq!(d[0].percent, 29.44);
        assert_eq!(d.last().unwrap().percent, 5.45);
    }

    #[test]
    fn round_trip_through_real_parsers() {
        let defs = default_task_definitions();
        let recs = SyntheticCorpus::new(&[("Java", 3), ("PHP", 3)], 9).build();
        let responder = SyntheticResponder {
            bad_rate: 0.5,
            ..Default::default()
        };
        let mut labels = Vec::new();
        for kind in TaskKind::ALL {
            for r in &recs {
                let mut def = defs[&kind].clone();
                if kind == TaskKind::CodeTranslation {
                    def.extra_params.insert("target_language".into(), "Go".into());
                }
                let p = build_generation_prompt(r, &def, &ExemplarDb::in_memory().sample(kind, &Default::default(), 0));
                let reply = responder.respond(&req(p.user_text)).unwrap();
                let fields = parse_generator_output(&reply).unwrap();
                check_task_structure(&fields, &def).unwrap();
                if kind == TaskKind::CodeGeneration {
                    assert_eq!(fields.solution, r.code);
                }
                let inst = fields.into_instance(&r.id, kind);
                let rs = default_ruleset(kind);
                let analysis = responder.respond(&req(build_discrimination_prompt(&inst, &rs))).unwrap();
                labels.push(parse_discrimination_output(&analysis, &rs, &r.id).unwrap().label);
            }
        }
        assert!(labels.contains(&Label::Good) && labels.contains(&Label::Bad));
    }

    #[test]
    fn malformed_replies_fail_to_parse() {
        let responder = SyntheticResponder {
            malformed_rate: 1.0,
            ..Default::default()
        };
        let defs = default_task_definitions();
        let r = &SyntheticCorpus::new(&[("Go", 1)], 1).build()[0];
        let p = build_generation_prompt(r, &defs[&TaskKind::CodeGeneration], &[]);
        assert!(parse_generator_output(&responder.respond(&req(p.user_text)).unwrap()).is_err());
    }
}
