use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{parse_blacklist, FilterConfig};
use crate::coreset::Metric;
use crate::discriminator::{default_ruleset, load_ruleset, DiscriminatorSettings, RuleSet};
use crate::embedding::EmbeddingBackendConfig;
use crate::generator::GeneratorSettings;
use crate::hermetic::SyntheticResponder;
use crate::llm_backend::{BackendError, ChatBackend, ErrorClass, HttpChatBackend, HttpChatConfig, RetryPolicy};
use crate::taskspec::{default_mix, default_task_definitions, load_task_definitions, MixPolicy, TaskDefinitions, TaskKind};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoresetConfig {
    /// Number of records to select; selection stops early if the pool is smaller.
    pub k: usize,
    /// Overrides the run seed for the first center.
    pub seed: Option<u64>,
    pub metric: Metric,
    /// Select within each language, with quotas proportional to language size.
    pub stratify_by_language: bool,
}

impl Default for CoresetConfig {
    fn default() -> Self {
        CoresetConfig {
            k: 25_000,
            seed: None,
            metric: Metric::Euclidean,
            stratify_by_language: false,
        }
    }
}

/// Which record text is embedded for coreset selection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedText {
    #[default]
    Code,
    CodeAndComment,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatBackendKind {
    Http,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatBackendConfig {
    pub kind: ChatBackendKind,
    pub endpoint: Option<String>,
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub retry: RetryPolicy,
    /// Behaviour of the offline backend when `kind` is `mock`.
    pub mock: SyntheticResponder,
}

impl Default for ChatBackendConfig {
    fn default() -> Self {
        ChatBackendConfig {
            kind: ChatBackendKind::Mock,
            endpoint: None,
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120.0,
            retry: RetryPolicy::default(),
            mock: SyntheticResponder::default(),
        }
    }
}

impl ChatBackendConfig {
    pub fn validate(&self, name: &str) -> Result<(), String> {
        if self.kind == ChatBackendKind::Http && self.endpoint.is_none() {
            return Err(format!("{name}: http backend needs an endpoint"));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(format!("{name}: timeout_secs must be > 0"));
        }
        for (field, v) in [("bad_rate", self.mock.bad_rate), ("malformed_rate", self.mock.malformed_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name}: mock.{field} must be in [0, 1]"));
            }
        }
        self.retry.validate().map_err(|e| format!("{name}: {e}"))
    }

    pub fn build(&self) -> Result<Arc<dyn ChatBackend>, BackendError> {
        Ok(match self.kind {
            ChatBackendKind::Mock => Arc::new(self.mock.into_backend()),
            ChatBackendKind::Http => Arc::new(HttpChatBackend::from_config(&HttpChatConfig {
                endpoint: self
                    .endpoint
                    .clone()
                    .ok_or_else(|| BackendError::new(ErrorClass::Config, "missing endpoint"))?,
                api_key_env: self.api_key_env.clone(),
                timeout_secs: self.timeout_secs,
            })?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Concurrency {
    pub max_in_flight: usize,
}

impl Default for Concurrency {
    fn default() -> Self {
        Concurrency { max_in_flight: 8 }
    }
}

/// Everything a run needs. Relative paths are resolved against the
/// directory of the config file by [`PipelineConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus_path: PathBuf,
    /// Replaces `filter.blacklist` when set.
    pub blacklist_path: Option<PathBuf>,
    pub filter: FilterConfig,
    pub embedding_backend: EmbeddingBackendConfig,
    pub embed_text: EmbedText,
    pub coreset: CoresetConfig,
    pub mix: MixPolicy,
    /// Task definitions; the shipped defaults when unset.
    pub task_file: Option<PathBuf>,
    /// Per-task ruleset overrides; shipped rulesets otherwise.
    pub rulesets: BTreeMap<TaskKind, PathBuf>,
    /// Hand-written Good exemplars inserted before generation starts.
    pub seed_exemplars: Option<PathBuf>,
    pub generation_backend: ChatBackendConfig,
    pub discrimination_backend: ChatBackendConfig,
    pub generation: GeneratorSettings,
    pub discrimination: DiscriminatorSettings,
    /// Extra generation rounds for a record whose instance was judged Bad.
    pub retry_after_bad: u32,
    pub target_accepted: usize,
    pub concurrency: Concurrency,
    pub work_dir: PathBuf,
    /// Defaults to `<work_dir>/dataset.jsonl`.
    pub output_path: Option<PathBuf>,
    /// Defaults to `<work_dir>/exemplars.jsonl`.
    pub exemplar_db: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            corpus_path: PathBuf::from("corpus.jsonl"),
            blacklist_path: None,
            filter: FilterConfig::default(),
            embedding_backend: EmbeddingBackendConfig::default(),
            embed_text: EmbedText::Code,
            coreset: CoresetConfig::default(),
            mix: default_mix(),
            task_file: None,
            rulesets: BTreeMap::new(),
            seed_exemplars: None,
            generation_backend: ChatBackendConfig::default(),
            discrimination_backend: ChatBackendConfig::default(),
            generation: GeneratorSettings::default(),
            discrimination: DiscriminatorSettings::default(),
            retry_after_bad: 0,
            target_accepted: 19_915,
            concurrency: Concurrency::default(),
            work_dir: PathBuf::from("work"),
            output_path: None,
            exemplar_db: None,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&raw)
            .map_err(|e| PipelineError::Config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.corpus_path);
        resolve(base, &mut self.work_dir);
        for p in [
            &mut self.blacklist_path,
            &mut self.task_file,
            &mut self.seed_exemplars,
            &mut self.output_path,
            &mut self.exemplar_db,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        for p in self.rulesets.values_mut() {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        if self.target_accepted < 1 {
            return err("target_accepted must be >= 1".into());
        }
        if self.concurrency.max_in_flight < 1 {
            return err("concurrency.max_in_flight must be >= 1".into());
        }
        if self.coreset.k < 1 {
            return err("coreset.k must be >= 1".into());
        }
        if self.generation.temperature < 0.0 || self.discrimination.temperature < 0.0 {
            return err("temperatures must be >= 0".into());
        }
        self.filter.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.mix.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.embedding_backend.validate().map_err(PipelineError::Config)?;
        self.generation_backend.validate("generation_backend").map_err(PipelineError::Config)?;
        self.discrimination_backend
            .validate("discrimination_backend")
            .map_err(PipelineError::Config)?;
        Ok(())
    }

    pub fn output_path(&self) -> PathBuf {
        self.output_path.clone().unwrap_or_else(|| self.work_dir.join("dataset.jsonl"))
    }

    pub fn exemplar_db_path(&self) -> PathBuf {
        self.exemplar_db.clone().unwrap_or_else(|| self.work_dir.join("exemplars.jsonl"))
    }

    pub fn coreset_seed(&self) -> u64 {
        self.coreset.seed.unwrap_or(self.seed)
    }

    /// The effective filter, with the blacklist file applied.
    pub fn effective_filter(&self) -> Result<FilterConfig, PipelineError> {
        let mut f = self.filter.clone();
        if let Some(p) = &self.blacklist_path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| PipelineError::Config(format!("cannot read blacklist {}: {e}", p.display())))?;
            f.blacklist = parse_blacklist(&text);
        }
        f.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(f)
    }

    pub fn task_definitions(&self) -> Result<TaskDefinitions, PipelineError> {
        match &self.task_file {
            Some(p) => load_task_definitions(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display()))),
            None => Ok(default_task_definitions()),
        }
    }

    pub fn rulesets(&self) -> Result<BTreeMap<TaskKind, RuleSet>, PipelineError> {
        TaskKind::ALL
            .into_iter()
            .map(|k| {
                let rs = match self.rulesets.get(&k) {
                    Some(p) => load_ruleset(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?,
                    None => default_ruleset(k),
                };
                Ok((k, rs))
            })
            .collect()
    }

    /// Hash of the serialized config, used to refuse resuming under a
    /// different config. The work directory location is not part of it.
    pub fn fingerprint(&self) -> String {
        let mut located = self.clone();
        if located.output_path.as_deref() == Some(&self.work_dir.join("dataset.jsonl")) {
            located.output_path = None;
        }
        if located.exemplar_db.as_deref() == Some(&self.work_dir.join("exemplars.jsonl")) {
            located.exemplar_db = None;
        }
        located.work_dir = PathBuf::new();
        let json = serde_json::to_vec(&located).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn partial_config_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"corpus_path": "data/c.jsonl", "target_accepted": 5, "rulesets": {"CodeRepair": "r.json"}}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus_path, dir.path().join("data/c.jsonl"));
        assert_eq!(cfg.rulesets[&TaskKind::CodeRepair], dir.path().join("r.json"));
        assert_eq!(cfg.output_path(), dir.path().join("work/dataset.jsonl"));
        assert_eq!(cfg.target_accepted, 5);
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = PipelineConfig {
            target_accepted: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        cfg.target_accepted = 1;
        cfg.concurrency.max_in_flight = 0;
        assert!(cfg.validate().is_err());
        cfg.concurrency.max_in_flight = 1;
        cfg.generation_backend.kind = ChatBackendKind::Http;
        assert!(cfg.validate().is_err());
        let unknown: Result<PipelineConfig, _> = serde_json::from_str(r#"{"targt_accepted": 3}"#);
        assert!(unknown.is_err());
    }
}
