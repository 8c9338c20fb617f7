use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ProviderConfig, RoleTag};
use crate::index::{DEFAULT_K, DEFAULT_THRESHOLD};
use crate::synthesis::ConfidenceWeights;

pub const DEFAULT_MIN_QUORUM: usize = 2;
pub const DEFAULT_GAP_CONFIDENCE_FLOOR: f64 = 0.6;

/// Key names that suggest a literal credential was pasted into the config,
/// compared after lowercasing and dropping everything but letters and digits.
const SECRET_KEYS: [&str; 6] = ["apikey", "key", "secret", "token", "password", "authorization"];

/// Suffixes that mark a credential in compound names such as
/// `openai_api_key`, `client_secret` or `access_token`.
const SECRET_SUFFIXES: [&str; 6] = ["apikey", "secretkey", "accesskey", "secret", "token", "password"];

fn is_secret_key(name: &str) -> bool {
    let folded: String = name
        .chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect();
    SECRET_KEYS.contains(&folded.as_str()) || SECRET_SUFFIXES.iter().any(|s| folded.ends_with(s))
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config embeds a literal credential at {0}; use credentials_env instead")]
    LiteralSecret(String),
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_min_quorum() -> usize {
    DEFAULT_MIN_QUORUM
}

fn default_floor() -> f64 {
    DEFAULT_GAP_CONFIDENCE_FLOOR
}

/// Every tunable knob of an ensemble run. Loaded from one JSON file; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub roster: Vec<ProviderConfig>,
    pub synthesis_model: String,
    #[serde(default)]
    pub research_models: Vec<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_min_quorum")]
    pub min_quorum: usize,
    #[serde(default = "default_floor")]
    pub gap_confidence_floor: f64,
    #[serde(default)]
    pub confidence_weights: ConfidenceWeights,
    /// Send the resolved draft to `synthesis_model` for a consistency pass.
    #[serde(default)]
    pub synthesis_pass: bool,
}

fn find_secret(value: &Value, path: &str) -> Option<String> {
    match value {
        Value::Object(map) => map.iter().find_map(|(k, v)| {
            let here = format!("{path}.{k}");
            if is_secret_key(k) {
                Some(here)
            } else {
                find_secret(v, &here)
            }
        }),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .find_map(|(i, v)| find_secret(v, &format!("{path}[{i}]"))),
        _ => None,
    }
}

impl EnsembleConfig {
    /// Minimal config: every roster entry extracts, the first one also
    /// synthesizes, defaults elsewhere.
    pub fn with_roster(roster: Vec<ProviderConfig>) -> Self {
        let synthesis_model = roster.first().map(|p| p.model_id.clone()).unwrap_or_default();
        let mut roster = roster;
        if let Some(first) = roster.first_mut() {
            first.role_tags.insert(RoleTag::Synthesis);
        }
        Self {
            roster,
            synthesis_model,
            research_models: Vec::new(),
            k: DEFAULT_K,
            threshold: DEFAULT_THRESHOLD,
            min_quorum: DEFAULT_MIN_QUORUM,
            gap_confidence_floor: DEFAULT_GAP_CONFIDENCE_FLOOR,
            confidence_weights: ConfidenceWeights::default(),
            synthesis_pass: false,
        }
    }

    /// Parse and check. Relative `fixtures_dir` paths are resolved against
    /// `base_dir` when given.
    pub fn from_json_str(text: &str, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(path) = find_secret(&value, "$") {
            return Err(ConfigError::LiteralSecret(path));
        }
        let mut config: Self =
            serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(base) = base_dir {
            for provider in &mut config.roster {
                provider.resolve_paths(base);
            }
        }
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text, path.parent())
    }

    pub fn provider(&self, model_id: &str) -> Option<&ProviderConfig> {
        self.roster.iter().find(|p| p.model_id == model_id)
    }

    pub fn extraction_providers(&self) -> impl Iterator<Item = &ProviderConfig> {
        self.roster.iter().filter(|p| p.has_role(RoleTag::Extraction))
    }

    pub fn research_providers(&self) -> impl Iterator<Item = &ProviderConfig> {
        self.research_models.iter().filter_map(|m| self.provider(m))
    }

    pub fn roster_order(&self) -> Vec<String> {
        self.roster.iter().map(|p| p.model_id.clone()).collect()
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.roster.is_empty() {
            return invalid("roster must not be empty".into());
        }
        let mut seen = HashSet::new();
        for provider in &self.roster {
            provider
                .check()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !seen.insert(provider.model_id.as_str()) {
                return invalid(format!("duplicate model_id {:?}", provider.model_id));
            }
        }
        match self.provider(&self.synthesis_model) {
            None => return invalid(format!("synthesis_model {:?} is not in the roster", self.synthesis_model)),
            Some(p) if !p.has_role(RoleTag::Synthesis) => {
                return invalid(format!("synthesis_model {:?} lacks the synthesis role tag", p.model_id))
            }
            Some(_) => {}
        }
        for model in &self.research_models {
            match self.provider(model) {
                None => return invalid(format!("research model {model:?} is not in the roster")),
                Some(p) if !p.has_role(RoleTag::Research) => {
                    return invalid(format!("research model {model:?} lacks the research role tag"))
                }
                Some(_) => {}
            }
        }
        if self.extraction_providers().next().is_none() {
            return invalid("no roster entry carries the extraction role tag".into());
        }
        if self.min_quorum < 1 {
            return invalid("min_quorum must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gap_confidence_floor) {
            return invalid("gap_confidence_floor must be in [0,1]".into());
        }
        if !self.threshold.is_finite() {
            return invalid("threshold must be finite".into());
        }
        self.confidence_weights
            .check()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
