//! Raw code corpus: ingestion, rule-based filtering and language statistics.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::jsonl::JsonlError;

const DEFAULT_BLACKLIST: &str = include_str!("../data/blacklist.txt");

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("language distribution is undefined for an empty corpus")]
    EmptyCorpus,
}

/// One `<comment, code>` entry of the raw corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCodeRecord {
    pub id: String,
    pub code: String,
    #[serde(default)]
    pub comment: String,
    #[serde(default)]
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repo: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub license: Option<String>,
}

/// A corpus line that was not turned into a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub records: Vec<RawCodeRecord>,
    pub skipped: Vec<SkippedLine>,
}

// Looser shape so a missing required key is reported by name instead of as a serde error.
#[derive(Deserialize)]
struct LooseRecord {
    id: Option<String>,
    code: Option<String>,
    #[serde(default)]
    comment: Option<String>,
    #[serde(default)]
    language: Option<String>,
    #[serde(default)]
    repo: Option<String>,
    #[serde(default)]
    path: Option<String>,
    #[serde(default)]
    license: Option<String>,
}

/// Reads a line-delimited corpus file. Bad lines are skipped and logged.
pub fn ingest_records(path: &Path) -> Result<IngestOutcome, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|e| JsonlError::io(path, e))?;
    Ok(ingest_str(&raw))
}

pub fn ingest_str(raw: &str) -> IngestOutcome {
    let mut out = IngestOutcome::default();
    let mut seen = HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let skip = |out: &mut IngestOutcome, reason: String| {
            log::warn!("corpus line {line_no} skipped: {reason}");
            out.skipped.push(SkippedLine {
                line: line_no,
                reason,
            });
        };
        let loose: LooseRecord = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                skip(&mut out, format!("malformed json: {e}"));
                continue;
            }
        };
        let mut missing = Vec::new();
        if loose.id.as_deref().map_or(true, str::is_empty) {
            missing.push("id");
        }
        if loose.code.is_none() {
            missing.push("code");
        }
        if !missing.is_empty() {
            skip(&mut out, format!("missing required field(s): {}", missing.join(", ")));
            continue;
        }
        let id = loose.id.unwrap();
        if !seen.insert(id.clone()) {
            skip(&mut out, format!("duplicate id {id:?}"));
            continue;
        }
        out.records.push(RawCodeRecord {
            id,
            code: loose.code.unwrap(),
            comment: loose.comment.unwrap_or_default(),
            language: loose.language.unwrap_or_default(),
            repo: loose.repo,
            path: loose.path,
            license: loose.license,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchScope {
    #[default]
    CodeOnly,
    CodeAndComment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_code_chars: usize,
    pub max_code_chars: usize,
    pub blacklist: Vec<String>,
    pub match_scope: MatchScope,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_code_chars: 80,
            max_code_chars: 4096,
            blacklist: default_blacklist(),
            match_scope: MatchScope::CodeOnly,
        }
    }
}

/// The shipped blacklist.
pub fn default_blacklist() -> Vec<String> {
    parse_blacklist(DEFAULT_BLACKLIST)
}

/// Parses a blacklist file: one entry per line, `#` comments, normalized to
/// lowercase and deduplicated in first-seen order.
pub fn parse_blacklist(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.min_code_chars == 0 || self.min_code_chars >= self.max_code_chars {
            return Err(CorpusError::InvalidConfig(format!(
                "need 0 < min_code_chars ({}) < max_code_chars ({})",
                self.min_code_chars, self.max_code_chars
            )));
        }
        let mut seen = HashSet::new();
        for w in &self.blacklist {
            if w.trim().is_empty() {
                return Err(CorpusError::InvalidConfig("empty blacklist entry".into()));
            }
            if *w != w.to_lowercase() {
                return Err(CorpusError::InvalidConfig(format!(
                    "blacklist entry {w:?} is not lowercase"
                )));
            }
            if !seen.insert(w.as_str()) {
                return Err(CorpusError::InvalidConfig(format!(
                    "duplicate blacklist entry {w:?}"
                )));
            }
        }
        Ok(())
    }

    fn blacklist_regex(&self) -> Option<Regex> {
        if self.blacklist.is_empty() {
            return None;
        }
        let alts: Vec<String> = self
            .blacklist
            .iter()
            .map(|w| {
                w.split_whitespace()
                    .map(regex::escape)
                    .collect::<Vec<_>>()
                    .join(r"\s+")
            })
            .collect();
        let pattern = format!(r"(?i)\b(?:{})\b", alts.join("|"));
        Some(Regex::new(&pattern).expect("escaped alternation is a valid regex"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    TooShort,
    TooLong,
    Blacklisted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FilterReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl FilterReport {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

/// Applies the length and blacklist rules. Reasons are checked in the order
/// empty, too_short, too_long, blacklisted; the first hit is recorded.
pub fn apply_filters(
    records: &[RawCodeRecord],
    config: &FilterConfig,
) -> Result<(Vec<RawCodeRecord>, FilterReport), CorpusError> {
    config.validate()?;
    let blacklist = config.blacklist_regex();
    let mut report = FilterReport {
        input_count: records.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for r in records {
        match reject_reason(r, config, blacklist.as_ref()) {
            Some(reason) => *report.rejected.entry(reason).or_insert(0) += 1,
            None => kept.push(r.clone()),
        }
    }
    report.kept_count = kept.len();
    Ok((kept, report))
}

fn reject_reason(
    r: &RawCodeRecord,
    config: &FilterConfig,
    blacklist: Option<&Regex>,
) -> Option<RejectReason> {
    let code = r.code.trim();
    if code.is_empty() {
        return Some(RejectReason::Empty);
    }
    let len = code.chars().count();
    if len < config.min_code_chars {
        return Some(RejectReason::TooShort);
    }
    if len > config.max_code_chars {
        return Some(RejectReason::TooLong);
    }
    if let Some(re) = blacklist {
        let hit = re.is_match(&r.code)
            || (config.match_scope == MatchScope::CodeAndComment && re.is_match(&r.comment));
        if hit {
            return Some(RejectReason::Blacklisted);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageShare {
    pub language: String,
    pub count: usize,
    pub percent: f64,
}

/// Per-language share of the corpus, in percent rounded to two decimals and
/// sorted descending (ties by name). With `grouping`, languages not listed
/// are pooled under `"Others"`.
pub fn language_distribution(
    records: &[RawCodeRecord],
    grouping: Option<&[&str]>,
) -> Result<Vec<LanguageShare>, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let lang = match grouping {
            Some(keep) if !keep.contains(&r.language.as_str()) => "Others",
            _ => r.language.as_str(),
        };
        *counts.entry(lang.to_string()).or_insert(0) += 1;
    }
    let total = records.len() as f64;
    let mut shares: Vec<LanguageShare> = counts
        .into_iter()
        .map(|(language, count)| LanguageShare {
            percent: round2(count as f64 * 100.0 / total),
            language,
            count,
        })
        .collect();
    shares.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.language.cmp(&b.language)));
    Ok(shares)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, code: &str, lang: &str) -> RawCodeRecord {
        RawCodeRecord {
            id: id.into(),
            code: code.into(),
            comment: String::new(),
            language: lang.into(),
            repo: None,
            path: None,
            license: None,
        }
    }

    fn cfg(min: usize, max: usize, blacklist: &[&str]) -> FilterConfig {
        FilterConfig {
            min_code_chars: min,
            max_code_chars: max,
            blacklist: blacklist.iter().map(|s| s.to_string()).collect(),
            match_scope: MatchScope::CodeOnly,
        }
    }

    #[test]
    fn ingest_keeps_file_order() {
        let raw = r#"{"id":"a","code":"x=1","language":"Python"}
{"id":"b","code":"y=2","language":"Go"}
{"id":"c","code":"z=3","language":"Java"}
"#;
        let out = ingest_str(raw);
        let ids: Vec<_> = out.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn ingest_skips_line_missing_code() {
        let raw = r#"{"id":"a","code":"x=1"}
{"id":"b","comment":"no code here"}
{"id":"c","code":"z=3"}
"#;
        let out = ingest_str(raw);
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].line, 2);
        assert!(out.skipped[0].reason.contains("code"));
    }

    #[test]
    fn ingest_empty_and_garbage() {
        assert!(ingest_str("").records.is_empty());
        let out = ingest_str("not json\n{\"id\":\"a\",\"code\":\"c\"}\n{\"id\":\"a\",\"code\":\"d\"}\n");
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.skipped.len(), 2);
    }

    #[test]
    fn too_short_is_rejected() {
        let code = "x".repeat(50);
        let (kept, rep) = apply_filters(&[rec("a", &code, "Python")], &cfg(80, 4096, &[])).unwrap();
        assert!(kept.is_empty());
        assert_eq!(rep.rejected[&RejectReason::TooShort], 1);
    }

    #[test]
    fn blacklisted_whole_word_case_insensitive() {
        let body = format!("def load(): return Image.open(p)  # {}", "y".repeat(60));
        let config = cfg(10, 4096, &["image"]);
        let (kept, rep) = apply_filters(&[rec("a", &body, "Python")], &config).unwrap();
        assert!(kept.is_empty());
        assert_eq!(rep.rejected[&RejectReason::Blacklisted], 1);

        // substring of a longer identifier is not a whole word
        let ok = format!("def imagenet_stats(): pass  # {}", "y".repeat(60));
        let (kept, _) = apply_filters(&[rec("b", &ok, "Python")], &config).unwrap();
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn multiword_entry_and_scope() {
        let config = cfg(5, 4096, &["go to"]);
        let (kept, _) = apply_filters(&[rec("a", "then GO  TO label", "C")], &config).unwrap();
        assert!(kept.is_empty());

        let mut r = rec("b", "fn main() { run(); }", "Rust");
        r.comment = "go to the store".into();
        let (kept, _) = apply_filters(std::slice::from_ref(&r), &config).unwrap();
        assert_eq!(kept.len(), 1);
        let mut both = config.clone();
        both.match_scope = MatchScope::CodeAndComment;
        let (kept, _) = apply_filters(&[r], &both).unwrap();
        assert!(kept.is_empty());
    }

    #[test]
    fn reason_order_empty_first() {
        let config = cfg(80, 100, &["x"]);
        let (_, rep) = apply_filters(
            &[
                rec("e", "   ", "P"),
                rec("s", "x", "P"),
                rec("l", &"x ".repeat(200), "P"),
            ],
            &config,
        )
        .unwrap();
        assert_eq!(rep.rejected[&RejectReason::Empty], 1);
        assert_eq!(rep.rejected[&RejectReason::TooShort], 1);
        assert_eq!(rep.rejected[&RejectReason::TooLong], 1);
    }

    #[test]
    fn ten_in_seven_kept() {
        let long = "a".repeat(90);
        let mut records: Vec<_> = (0..7).map(|i| rec(&i.to_string(), &long, "P")).collect();
        records.extend((7..10).map(|i| rec(&i.to_string(), "short", "P")));
        let (kept, rep) = apply_filters(&records, &cfg(80, 4096, &[])).unwrap();
        assert_eq!(rep.kept_count, 7);
        assert_eq!(kept.len(), 7);
        assert_eq!(rep.kept_count + rep.rejected_total(), 10);
    }

    #[test]
    fn invalid_configs() {
        assert!(cfg(0, 10, &[]).validate().is_err());
        assert!(cfg(10, 10, &[]).validate().is_err());
        assert!(cfg(1, 10, &["Image"]).validate().is_err());
        assert!(cfg(1, 10, &["a", "a"]).validate().is_err());
        assert!(cfg(1, 10, &[" "]).validate().is_err());
        assert!(FilterConfig::default().validate().is_ok());
    }

    #[test]
    fn shipped_blacklist_is_normalized() {
        let b = default_blacklist();
        assert!(b.contains(&"image".to_string()));
        assert!(b.contains(&"go to".to_string()));
        assert!(b.iter().all(|w| *w == w.to_lowercase()));
    }

    #[test]
    fn distribution_degenerate_cases() {
        let one = language_distribution(&[rec("a", "c", "Go"), rec("b", "c", "Go")], None).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].percent, 100.0);

        let two = language_distribution(&[rec("a", "c", "x"), rec("b", "c", "y")], None).unwrap();
        assert_eq!(two.iter().map(|s| s.percent).collect::<Vec<_>>(), [50.0, 50.0]);

        assert!(matches!(
            language_distribution(&[], None),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn distribution_groups_others() {
        let records = vec![
            rec("a", "c", "Python"),
            rec("b", "c", "Ruby"),
            rec("c", "c", "C++"),
            rec("d", "c", "Python"),
        ];
        let d = language_distribution(&records, Some(&["Python"])).unwrap();
        // equal counts sort by name
        assert_eq!(d[0].language, "Others");
        assert_eq!(d[0].count, 2);
        assert_eq!(d[1].language, "Python");
        assert_eq!(d[1].percent, 50.0);
    }

    fn arb_record() -> impl Strategy<Value = RawCodeRecord> {
        (
            "[a-z]{1,8}",
            prop::collection::vec(prop::sample::select(vec!["foo", "image", "bar", "Plot", "go", "to", " "]), 0..40),
            prop::sample::select(vec!["Python", "Go", "Java", "PHP"]),
        )
            .prop_map(|(id, words, lang)| rec(&id, &words.join(" "), lang))
    }

    proptest! {
        #[test]
        fn filtering_conserves_and_is_idempotent(records in prop::collection::vec(arb_record(), 0..40)) {
            let config = cfg(20, 120, &["image", "plot", "go to"]);
            let (kept, rep) = apply_filters(&records, &config).unwrap();
            prop_assert_eq!(rep.kept_count + rep.rejected_total(), records.len());
            let (again, rep2) = apply_filters(&kept, &config).unwrap();
            prop_assert_eq!(&again, &kept);
            prop_assert_eq!(rep2.rejected_total(), 0);
            // order preserved: kept is a subsequence of input
            let mut it = records.iter();
            for k in &kept {
                prop_assert!(it.any(|r| r == k));
            }
        }

        #[test]
        fn percentages_sum_to_hundred(records in prop::collection::vec(arb_record(), 1..200)) {
            let d = language_distribution(&records, None).unwrap();
            let sum: f64 = d.iter().map(|s| s.percent).sum();
            prop_assert!((sum - 100.0).abs() <= 0.05 + 1e-9, "sum {}", sum);
            prop_assert!(d.windows(2).all(|w| w[0].percent >= w[1].percent));
        }
    }
}
