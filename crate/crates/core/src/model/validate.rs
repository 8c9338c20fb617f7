//! Schema validation of parsed model output.
//!
//! Accepted value shapes for a field:
//!
//! - a plain string or number: `"part_name": "Hex bolt"`
//! - a wrapper object: `"part_name": {"value": "Hex bolt", "confidence": 0.9}`
//!   (an optional `"unit"` is appended to the value)
//! - for `nested-map` fields, an object whose entries take either form above
//!
//! Confidence comes from, in order: the wrapper, a top-level
//! `"confidence_scores"` map keyed by field name, a top-level numeric
//! `"confidence"`, then [`DEFAULT_CLAIM_CONFIDENCE`].

use std::sync::OnceLock;

use regex::Regex;
use serde_json::{Map, Value};

use super::{
    canonicalize_field_name, ExtractionResult, FieldClaim, FieldKind, Phase, Severity,
    SpecSchema, ValidationIssue,
};

pub const DEFAULT_CLAIM_CONFIDENCE: f64 = 0.5;

const RESERVED_KEYS: [&str; 2] = ["confidence", "confidence_scores"];

fn quantity_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(r"^[+-]?(\d+(\.\d*)?|\.\d+)\s*[^\d\s.].*$").expect("valid regex")
    })
}

fn type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn is_wrapper(map: &Map<String, Value>) -> bool {
    map.contains_key("value")
}

struct Collector<'a> {
    schema: &'a SpecSchema,
    model_id: &'a str,
    phase: Phase,
    default_confidence: f64,
    scores: Option<&'a Map<String, Value>>,
    claims: Vec<FieldClaim>,
    issues: Vec<ValidationIssue>,
}

enum Scalar {
    Missing,
    Value(String, Option<Value>),
    Wrong(&'static str),
}

impl Collector<'_> {
    fn scalar(value: &Value) -> Scalar {
        match value {
            Value::Null => Scalar::Missing,
            Value::String(s) if s.trim().is_empty() => Scalar::Missing,
            Value::String(s) => Scalar::Value(s.trim().to_string(), None),
            Value::Number(n) => Scalar::Value(n.to_string(), None),
            Value::Object(map) if is_wrapper(map) => {
                let inner = match Self::scalar(&map["value"]) {
                    Scalar::Value(v, _) => v,
                    other => return other,
                };
                let inner = match map.get("unit").and_then(Value::as_str) {
                    Some(unit) if !unit.trim().is_empty() => format!("{inner} {}", unit.trim()),
                    _ => inner,
                };
                Scalar::Value(inner, map.get("confidence").cloned())
            }
            other => Scalar::Wrong(type_name(other)),
        }
    }

    fn confidence(&mut self, path: &str, field: &str, explicit: Option<Value>) -> f64 {
        let candidate = explicit.or_else(|| self.scores.and_then(|s| s.get(field)).cloned());
        let Some(candidate) = candidate else {
            return self.default_confidence;
        };
        match candidate.as_f64() {
            Some(c) if (0.0..=1.0).contains(&c) => c,
            Some(c) => {
                self.issues.push(ValidationIssue::KindMismatch {
                    path: format!("{path}.confidence"),
                    expected: "confidence in [0,1]".into(),
                    found: c.to_string(),
                    severity: Severity::Warning,
                });
                c.clamp(0.0, 1.0)
            }
            None => {
                self.issues.push(ValidationIssue::KindMismatch {
                    path: format!("{path}.confidence"),
                    expected: "number".into(),
                    found: type_name(&candidate).into(),
                    severity: Severity::Warning,
                });
                self.default_confidence
            }
        }
    }

    fn push_claim(
        &mut self,
        field: &str,
        raw: String,
        confidence: f64,
        parent: Option<&str>,
        in_schema: bool,
    ) {
        let mut claim = FieldClaim::new(field, raw, confidence, self.model_id, self.phase);
        claim.parent = parent.map(str::to_string);
        claim.in_schema = in_schema;
        self.claims.push(claim);
    }

    /// A declared (schema-known) scalar or quantity field. Returns whether a
    /// claim was produced.
    fn declared_scalar(
        &mut self,
        path: &str,
        field: &str,
        kind: FieldKind,
        value: &Value,
        parent: Option<&str>,
        severity: Severity,
    ) -> bool {
        match Self::scalar(value) {
            Scalar::Missing => false,
            Scalar::Wrong(found) => {
                self.issues.push(ValidationIssue::KindMismatch {
                    path: path.into(),
                    expected: kind.to_string(),
                    found: found.into(),
                    severity,
                });
                false
            }
            Scalar::Value(raw, explicit) => {
                if kind == FieldKind::QuantityWithUnit && !quantity_pattern().is_match(&raw) {
                    self.issues.push(ValidationIssue::KindMismatch {
                        path: path.into(),
                        expected: kind.to_string(),
                        found: format!("{raw:?}"),
                        severity,
                    });
                    return false;
                }
                let confidence = self.confidence(path, field, explicit);
                self.push_claim(field, raw, confidence, parent, true);
                true
            }
        }
    }

    /// Entries of a declared nested-map field. Returns the number of claims.
    fn declared_map(&mut self, path: &str, container: &str, value: &Value) -> Option<usize> {
        let map = match value {
            Value::Null => return Some(0),
            Value::Object(map) if !is_wrapper(map) => map,
            other => {
                self.issues.push(ValidationIssue::KindMismatch {
                    path: path.into(),
                    expected: FieldKind::NestedMap.to_string(),
                    found: type_name(other).into(),
                    severity: Severity::Error,
                });
                return None;
            }
        };
        let mut count = 0;
        for (key, entry) in map {
            let field = canonicalize_field_name(key);
            if field.is_empty() {
                continue;
            }
            let entry_path = format!("{path}.{field}");
            let kind = match self.schema.kind_of(&field) {
                Some(FieldKind::NestedMap) | None => FieldKind::ScalarText,
                Some(kind) => kind,
            };
            // A bad entry does not invalidate the container.
            if self.declared_scalar(&entry_path, &field, kind, entry, Some(container), Severity::Warning)
            {
                count += 1;
            }
        }
        Some(count)
    }

    /// Attributes the schema does not declare: kept, flagged, never an error.
    fn undeclared(&mut self, field: &str, value: &Value, parent: Option<&str>) {
        match value {
            Value::Object(map) if !is_wrapper(map) => {
                if parent.is_some() {
                    return;
                }
                for (key, entry) in map {
                    let sub = canonicalize_field_name(key);
                    if !sub.is_empty() {
                        self.undeclared(&sub, entry, Some(field));
                    }
                }
            }
            Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .filter_map(|item| match Self::scalar(item) {
                        Scalar::Value(v, _) => Some(v),
                        _ => None,
                    })
                    .collect();
                if !parts.is_empty() {
                    let confidence = self.confidence(field, field, None);
                    self.push_claim(field, parts.join(", "), confidence, parent, false);
                }
            }
            Value::Bool(b) => {
                let confidence = self.confidence(field, field, None);
                self.push_claim(field, b.to_string(), confidence, parent, false);
            }
            other => {
                if let Scalar::Value(raw, explicit) = Self::scalar(other) {
                    let confidence = self.confidence(field, field, explicit);
                    self.push_claim(field, raw, confidence, parent, false);
                }
            }
        }
    }
}

/// Keep the highest-confidence claim per field name; ties keep the first.
fn collapse_duplicates(claims: Vec<FieldClaim>) -> Vec<FieldClaim> {
    let mut kept: Vec<FieldClaim> = Vec::with_capacity(claims.len());
    for claim in claims {
        match kept.iter_mut().find(|c| c.field == claim.field) {
            Some(existing) if claim.confidence > existing.confidence => *existing = claim,
            Some(_) => {}
            None => kept.push(claim),
        }
    }
    kept
}

/// Validate one parsed model output against `schema`.
///
/// Never fails: problems are recorded as issues on the result, and
/// `schema_valid` is true iff no issue has error severity.
pub fn validate_spec_document(
    document: &Value,
    schema: &SpecSchema,
    model_id: &str,
    phase: Phase,
) -> ExtractionResult {
    let raw_output = document.to_string();
    let Value::Object(root) = document else {
        return ExtractionResult {
            model_id: model_id.into(),
            phase,
            claims: Vec::new(),
            schema_valid: false,
            raw_output,
            failure: None,
            issues: vec![ValidationIssue::KindMismatch {
                path: "$".into(),
                expected: "object".into(),
                found: type_name(document).into(),
                severity: Severity::Error,
            }],
        };
    };

    let mut collector = Collector {
        schema,
        model_id,
        phase,
        default_confidence: DEFAULT_CLAIM_CONFIDENCE,
        scores: root.get("confidence_scores").and_then(Value::as_object),
        claims: Vec::new(),
        issues: Vec::new(),
    };
    if let Some(doc_conf) = root.get("confidence") {
        if !doc_conf.is_object() {
            collector.default_confidence =
                collector.confidence("$", "$", Some(doc_conf.clone()));
        }
    }

    let mut present: Vec<String> = Vec::new();
    for (key, value) in root {
        if RESERVED_KEYS.contains(&key.as_str()) {
            continue;
        }
        let field = canonicalize_field_name(key);
        if field.is_empty() {
            continue;
        }
        let produced = match schema.kind_of(&field) {
            Some(FieldKind::NestedMap) => collector
                .declared_map(&field, &field, value)
                .is_some_and(|n| n > 0),
            Some(kind) => {
                collector.declared_scalar(&field, &field, kind, value, None, Severity::Error)
            }
            None => {
                collector.undeclared(&field, value, None);
                false
            }
        };
        if produced {
            present.push(field);
        }
    }

    for required in schema.required_fields() {
        let mismatched = collector.issues.iter().any(|issue| {
            matches!(issue, ValidationIssue::KindMismatch { path, severity: Severity::Error, .. } if path == required)
        });
        if !present.contains(required) && !mismatched {
            collector.issues.push(ValidationIssue::MissingField {
                path: required.clone(),
            });
        }
    }

    let schema_valid = !collector.issues.iter().any(ValidationIssue::is_error);
    ExtractionResult {
        model_id: model_id.into(),
        phase,
        claims: collapse_duplicates(collector.claims),
        schema_valid,
        raw_output,
        failure: None,
        issues: collector.issues,
    }
}
