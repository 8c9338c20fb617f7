//! Shared domain types for the extraction pipeline.
//!
//! Every other module speaks in these types: part descriptions come in,
//! field claims flow out of each model, and the schema decides which of
//! those claims count as a valid structured answer.

mod canon;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canon::{canonicalize_field_name, canonicalize_value, UNIT_ALIASES};
pub use validate::{validate_spec_document, DEFAULT_CLAIM_CONFIDENCE};

/// Input to the pipeline: one free-form part description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartDescription {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl PartDescription {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, ModelError> {
        let description = Self {
            id: id.into(),
            text: text.into(),
            category: None,
        };
        description.check()?;
        Ok(description)
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    /// Checks the non-empty-text invariant. Deserialized values should be
    /// passed through this before use.
    pub fn check(&self) -> Result<(), ModelError> {
        if self.text.trim().is_empty() {
            return Err(ModelError::EmptyDescription(self.id.clone()));
        }
        Ok(())
    }
}

/// How a schema field's value must be shaped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldKind {
    #[serde(rename = "scalar-text")]
    ScalarText,
    #[serde(rename = "quantity-with-unit")]
    QuantityWithUnit,
    #[serde(rename = "nested-map")]
    NestedMap,
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::ScalarText => "scalar-text",
            FieldKind::QuantityWithUnit => "quantity-with-unit",
            FieldKind::NestedMap => "nested-map",
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    required_fields: Vec<String>,
    #[serde(default)]
    field_kinds: BTreeMap<String, FieldKind>,
}

/// The shared output schema every model is asked to follow.
///
/// Field names are stored canonicalized. Required fields without an
/// explicit kind are treated as scalar text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct SpecSchema {
    required_fields: Vec<String>,
    field_kinds: BTreeMap<String, FieldKind>,
}

impl TryFrom<RawSchema> for SpecSchema {
    type Error = ModelError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        SpecSchema::new(raw.required_fields, raw.field_kinds)
    }
}

impl SpecSchema {
    pub fn new<I, S>(required: I, kinds: BTreeMap<String, FieldKind>) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut required_fields: Vec<String> = Vec::new();
        for name in required {
            let name = canonicalize_field_name(name.as_ref());
            if name.is_empty() {
                return Err(ModelError::InvalidSchema("empty field name".into()));
            }
            if !required_fields.contains(&name) {
                required_fields.push(name);
            }
        }
        if required_fields.is_empty() {
            return Err(ModelError::InvalidSchema(
                "required_fields must not be empty".into(),
            ));
        }
        let mut field_kinds = BTreeMap::new();
        for (name, kind) in kinds {
            let canonical = canonicalize_field_name(&name);
            if canonical.is_empty() {
                return Err(ModelError::InvalidSchema("empty field name".into()));
            }
            field_kinds.insert(canonical, kind);
        }
        Ok(Self {
            required_fields,
            field_kinds,
        })
    }

    /// part_name, manufacturer, part_number, specifications.
    pub fn default_parts() -> Self {
        let kinds = BTreeMap::from([
            ("part_name".to_string(), FieldKind::ScalarText),
            ("manufacturer".to_string(), FieldKind::ScalarText),
            ("part_number".to_string(), FieldKind::ScalarText),
            ("specifications".to_string(), FieldKind::NestedMap),
        ]);
        Self::new(
            ["part_name", "manufacturer", "part_number", "specifications"],
            kinds,
        )
        .expect("built-in schema is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::InvalidSchema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::InvalidSchema(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn required_fields(&self) -> &[String] {
        &self.required_fields
    }

    pub fn field_kinds(&self) -> &BTreeMap<String, FieldKind> {
        &self.field_kinds
    }

    pub fn is_required(&self, field: &str) -> bool {
        self.required_fields.iter().any(|f| f == field)
    }

    /// Kind of a declared field; `None` for fields the schema does not know.
    pub fn kind_of(&self, field: &str) -> Option<FieldKind> {
        self.field_kinds.get(field).copied().or_else(|| {
            self.is_required(field).then_some(FieldKind::ScalarText)
        })
    }

    /// Same field kinds, different required set. Used for gap-focused
    /// research outputs that only need to cover the gaps.
    pub fn with_required(&self, required: &[String]) -> Result<Self, ModelError> {
        Self::new(required, self.field_kinds.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Extraction,
    Research,
    /// The optional consistency pass run by the synthesis model.
    Synthesis,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Extraction => "extraction",
            Phase::Research => "research",
            Phase::Synthesis => "synthesis",
        })
    }
}

/// One model's assertion about one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldClaim {
    pub field: String,
    pub value: String,
    pub canonical_value: String,
    pub confidence: f64,
    pub source_model: String,
    pub phase: Phase,
    /// Container field this claim was nested under, e.g. `specifications`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// False for attributes the schema does not declare.
    pub in_schema: bool,
}

impl FieldClaim {
    pub fn new(
        field: &str,
        value: impl Into<String>,
        confidence: f64,
        source_model: impl Into<String>,
        phase: Phase,
    ) -> Self {
        let value = value.into();
        Self {
            field: canonicalize_field_name(field),
            canonical_value: canonicalize_value(&value),
            value,
            confidence: confidence.clamp(0.0, 1.0),
            source_model: source_model.into(),
            phase,
            parent: None,
            in_schema: true,
        }
    }

    pub fn nested_under(mut self, parent: &str) -> Self {
        self.parent = Some(canonicalize_field_name(parent));
        self
    }

    pub fn outside_schema(mut self) -> Self {
        self.in_schema = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Timeout,
    Transport,
    Auth,
    RateLimited,
    ExhaustedRetries,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::Timeout => "timeout",
            FailureKind::Transport => "transport",
            FailureKind::Auth => "auth",
            FailureKind::RateLimited => "rate_limited",
            FailureKind::ExhaustedRetries => "exhausted_retries",
        })
    }
}

/// Why a model produced no usable claims.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResultFailure {
    Provider { kind: FailureKind, message: String },
    ParseError { message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum ValidationIssue {
    MissingField {
        path: String,
    },
    KindMismatch {
        path: String,
        expected: String,
        found: String,
        severity: Severity,
    },
}

impl ValidationIssue {
    pub fn severity(&self) -> Severity {
        match self {
            ValidationIssue::MissingField { .. } => Severity::Error,
            ValidationIssue::KindMismatch { severity, .. } => *severity,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity() == Severity::Error
    }
}

/// One model's structured output for one description in one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub model_id: String,
    pub phase: Phase,
    pub claims: Vec<FieldClaim>,
    pub schema_valid: bool,
    pub raw_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<ResultFailure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<ValidationIssue>,
}

impl ExtractionResult {
    pub fn failed(
        model_id: impl Into<String>,
        phase: Phase,
        raw_output: impl Into<String>,
        failure: ResultFailure,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            phase,
            claims: Vec::new(),
            schema_valid: false,
            raw_output: raw_output.into(),
            failure: Some(failure),
            issues: Vec::new(),
        }
    }

    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }

    /// Field names this output covers: every claimed field plus the
    /// containers its nested claims live under.
    pub fn field_set(&self) -> std::collections::BTreeSet<String> {
        let mut set = std::collections::BTreeSet::new();
        for claim in &self.claims {
            set.insert(claim.field.clone());
            if let Some(parent) = &claim.parent {
                set.insert(parent.clone());
            }
        }
        set
    }

    pub fn claim(&self, field: &str) -> Option<&FieldClaim> {
        self.claims.iter().find(|c| c.field == field)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("description {0:?} has empty text")]
    EmptyDescription(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}
