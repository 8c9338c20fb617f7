use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::model::canonicalize_field_name;

/// Ground truth for one description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub expected_fields: BTreeSet<String>,
    /// Expected maximum number of detail fields for this part.
    pub detail_max: usize,
    /// Attributes beyond the expected fields that count as grounded detail.
    #[serde(default)]
    pub allowed_attributes: BTreeSet<String>,
}

impl ManifestEntry {
    /// Expected fields plus allowed attributes.
    pub fn whitelist(&self) -> BTreeSet<String> {
        self.expected_fields
            .union(&self.allowed_attributes)
            .cloned()
            .collect()
    }

    /// Fields that count toward technical depth: allowed but not expected.
    pub fn is_detail(&self, field: &str) -> bool {
        !self.expected_fields.contains(field) && self.allowed_attributes.contains(field)
    }
}

/// Ground truth keyed by description id, loaded from
/// `{"<id>": {"expected_fields": [...], "detail_max": n, "allowed_attributes": [...]}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruthManifest {
    entries: BTreeMap<String, ManifestEntry>,
}

fn canonical_set(names: &BTreeSet<String>) -> BTreeSet<String> {
    names.iter().map(|n| canonicalize_field_name(n)).collect()
}

impl GroundTruthManifest {
    pub fn new(entries: BTreeMap<String, ManifestEntry>) -> Result<Self, MetricError> {
        let mut out = BTreeMap::new();
        for (id, entry) in entries {
            let entry = ManifestEntry {
                expected_fields: canonical_set(&entry.expected_fields),
                detail_max: entry.detail_max,
                allowed_attributes: canonical_set(&entry.allowed_attributes),
            };
            if entry.expected_fields.is_empty() {
                return Err(MetricError::InvalidManifest(format!(
                    "{id}: expected_fields is empty"
                )));
            }
            if entry.detail_max < 1 {
                return Err(MetricError::InvalidManifest(format!(
                    "{id}: detail_max must be at least 1"
                )));
            }
            out.insert(id, entry);
        }
        Ok(Self { entries: out })
    }

    pub fn from_json_str(text: &str) -> Result<Self, MetricError> {
        let entries: BTreeMap<String, ManifestEntry> =
            serde_json::from_str(text).map_err(|e| MetricError::InvalidManifest(e.to_string()))?;
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetricError::InvalidManifest(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn entry(&self, description_id: &str) -> Result<&ManifestEntry, MetricError> {
        self.entries
            .get(description_id)
            .ok_or_else(|| MetricError::MissingManifestEntry(description_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ManifestEntry)> {
        self.entries.iter()
    }
}
