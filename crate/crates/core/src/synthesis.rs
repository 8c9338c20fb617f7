//! Per-field consensus and the final specification.
//!
//! Claims for one field are grouped by canonical value. The largest group
//! wins; ties fall through, in order, to higher mean confidence, RAG
//! alignment, and the earliest supporting model in roster order. Field
//! confidence is a clamped linear blend of agreement, mean model confidence
//! and the RAG indicator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::index::RetrievedContext;
use crate::model::{canonicalize_value, ExtractionResult, FieldClaim, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceWeights {
    pub w_agreement: f64,
    pub w_model_conf: f64,
    pub w_rag: f64,
}

impl Default for ConfidenceWeights {
    fn default() -> Self {
        Self {
            w_agreement: 0.4,
            w_model_conf: 0.4,
            w_rag: 0.2,
        }
    }
}

impl ConfidenceWeights {
    pub fn new(w_agreement: f64, w_model_conf: f64, w_rag: f64) -> Result<Self, SynthesisError> {
        let weights = Self {
            w_agreement,
            w_model_conf,
            w_rag,
        };
        weights.check()?;
        Ok(weights)
    }

    pub fn check(&self) -> Result<(), SynthesisError> {
        let all = [self.w_agreement, self.w_model_conf, self.w_rag];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SynthesisError::InvalidWeights("weights must be nonnegative".into()));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SynthesisError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum SynthesisError {
    #[error("quorum not met: {successes} valid extraction result(s), {min_quorum} required")]
    QuorumNotMet { successes: usize, min_quorum: usize },
    #[error("invalid confidence weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    None,
    MeanConfidence,
    Rag,
    ModelOrder,
    /// A contested field settled by the synthesis model's consistency pass.
    SynthesisModel,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Supporter {
    pub model_id: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedField {
    pub field: String,
    pub value: String,
    pub canonical_value: String,
    pub agreement: f64,
    pub mean_confidence: f64,
    pub rag_aligned: u8,
    pub confidence: f64,
    pub supporters: Vec<Supporter>,
    pub tie_break_used: TieBreak,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub in_schema: bool,
}

/// 1 iff `canonical_value` occurs inside the canonicalized snippet of any
/// hit in any of `contexts`.
pub fn rag_alignment_indicator(canonical_value: &str, contexts: &[RetrievedContext]) -> u8 {
    let found = contexts.iter().flat_map(|c| &c.hits).any(|hit| {
        !canonical_value.is_empty() && canonicalize_value(&hit.snippet).contains(canonical_value)
    });
    u8::from(found)
}

pub fn field_confidence(
    agreement: f64,
    mean_confidence: f64,
    rag_aligned: u8,
    weights: &ConfidenceWeights,
) -> f64 {
    (weights.w_agreement * agreement
        + weights.w_model_conf * mean_confidence
        + weights.w_rag * f64::from(rag_aligned))
    .clamp(0.0, 1.0)
}

/// Roster position of a model; unknown models sort after the roster.
fn roster_position(roster: &[String], model_id: &str) -> usize {
    roster
        .iter()
        .position(|m| m == model_id)
        .unwrap_or(roster.len())
}

fn claim_order_key<'a>(roster: &[String], claim: &'a FieldClaim) -> (usize, &'a str, Phase) {
    (
        roster_position(roster, &claim.source_model),
        claim.source_model.as_str(),
        claim.phase,
    )
}

struct Group<'a> {
    canonical: &'a str,
    claims: Vec<&'a FieldClaim>,
    mean_confidence: f64,
    rag_aligned: u8,
}

impl<'a> Group<'a> {
    fn new(
        canonical: &'a str,
        mut claims: Vec<&'a FieldClaim>,
        contexts: &[RetrievedContext],
        roster: &[String],
    ) -> Self {
        claims.sort_by(|a, b| {
            claim_order_key(roster, a)
                .cmp(&claim_order_key(roster, b))
                .then_with(|| a.value.cmp(&b.value))
                .then_with(|| a.confidence.total_cmp(&b.confidence))
        });
        // Summing in a fixed order keeps the mean independent of input order.
        let mut confidences: Vec<f64> = claims.iter().map(|c| c.confidence).collect();
        confidences.sort_by(f64::total_cmp);
        let mean_confidence = confidences.iter().sum::<f64>() / confidences.len() as f64;
        Self {
            canonical,
            rag_aligned: rag_alignment_indicator(canonical, contexts),
            claims,
            mean_confidence,
        }
    }

    fn earliest(&self, roster: &[String]) -> (usize, &str, Phase) {
        claim_order_key(roster, self.claims[0])
    }
}

fn group_claims<'a>(
    claims: &'a [FieldClaim],
    contexts: &[RetrievedContext],
    roster: &[String],
) -> Vec<Group<'a>> {
    let mut by_value: BTreeMap<&str, Vec<&FieldClaim>> = BTreeMap::new();
    for claim in claims {
        by_value.entry(&claim.canonical_value).or_default().push(claim);
    }
    by_value
        .into_iter()
        .map(|(canonical, members)| Group::new(canonical, members, contexts, roster))
        .collect()
}

fn assemble(
    winner: &Group<'_>,
    total: usize,
    tie_break_used: TieBreak,
    weights: &ConfidenceWeights,
) -> ResolvedField {
    // Highest-confidence supporter provides the surface form; claims are
    // already in roster order, so the first maximum wins ties.
    let surface = winner
        .claims
        .iter()
        .copied()
        .reduce(|best, c| if c.confidence > best.confidence { c } else { best })
        .expect("groups are nonempty");
    let agreement = winner.claims.len() as f64 / total as f64;
    ResolvedField {
        field: surface.field.clone(),
        value: surface.value.clone(),
        canonical_value: winner.canonical.to_string(),
        agreement,
        mean_confidence: winner.mean_confidence,
        rag_aligned: winner.rag_aligned,
        confidence: field_confidence(agreement, winner.mean_confidence, winner.rag_aligned, weights),
        supporters: winner
            .claims
            .iter()
            .map(|c| Supporter {
                model_id: c.source_model.clone(),
                phase: c.phase,
            })
            .collect(),
        tie_break_used,
        parent: surface.parent.clone(),
        in_schema: winner.claims.iter().any(|c| c.in_schema),
    }
}

/// Resolve one field by majority consensus.
///
/// `roster` gives model order for the final tie-break.
///
/// # Panics
///
/// If `claims` is empty.
pub fn resolve_field(
    claims: &[FieldClaim],
    contexts: &[RetrievedContext],
    weights: &ConfidenceWeights,
    roster: &[String],
) -> ResolvedField {
    assert!(!claims.is_empty(), "resolve_field needs at least one claim");
    let groups = group_claims(claims, contexts, roster);

    let best = groups
        .iter()
        .min_by(|a, b| {
            b.claims
                .len()
                .cmp(&a.claims.len())
                .then_with(|| b.mean_confidence.total_cmp(&a.mean_confidence))
                .then_with(|| b.rag_aligned.cmp(&a.rag_aligned))
                .then_with(|| a.earliest(roster).cmp(&b.earliest(roster)))
                .then_with(|| a.canonical.cmp(b.canonical))
        })
        .expect("at least one group");

    let tied: Vec<&Group<'_>> = groups
        .iter()
        .filter(|g| g.claims.len() == best.claims.len())
        .collect();
    let tie_break_used = if tied.len() == 1 {
        TieBreak::None
    } else {
        let same_mean: Vec<_> = tied
            .iter()
            .filter(|g| g.mean_confidence == best.mean_confidence)
            .collect();
        if same_mean.len() == 1 {
            TieBreak::MeanConfidence
        } else if same_mean.iter().filter(|g| g.rag_aligned == best.rag_aligned).count() == 1 {
            TieBreak::Rag
        } else {
            TieBreak::ModelOrder
        }
    };
    assemble(best, claims.len(), tie_break_used, weights)
}

/// Outcome of the optional synthesis-model consistency pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SynthesisPass {
    NotRequested,
    /// The pass validated; `overridden` lists contested fields it settled.
    Applied { overridden: Vec<String> },
    /// The pass failed or did not validate; the deterministic draft stands.
    FallbackToDraft { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedSpec {
    pub description_id: String,
    pub fields: BTreeMap<String, ResolvedField>,
    pub overall_confidence: f64,
    pub consensus_ratio: f64,
    pub rag_validation_ratio: f64,
    pub provenance: BTreeMap<String, Vec<Supporter>>,
    pub synthesis_pass: SynthesisPass,
}

impl SynthesizedSpec {
    fn from_fields(description_id: &str, fields: BTreeMap<String, ResolvedField>) -> Self {
        let mut spec = Self {
            description_id: description_id.to_string(),
            fields,
            overall_confidence: 0.0,
            consensus_ratio: 0.0,
            rag_validation_ratio: 0.0,
            provenance: BTreeMap::new(),
            synthesis_pass: SynthesisPass::NotRequested,
        };
        spec.refresh_quality();
        spec
    }

    fn refresh_quality(&mut self) {
        let n = self.fields.len();
        self.provenance = self
            .fields
            .iter()
            .map(|(k, f)| (k.clone(), f.supporters.clone()))
            .collect();
        if n == 0 {
            self.overall_confidence = 0.0;
            self.consensus_ratio = 0.0;
            self.rag_validation_ratio = 0.0;
            return;
        }
        let n = n as f64;
        self.overall_confidence = self.fields.values().map(|f| f.confidence).sum::<f64>() / n;
        self.consensus_ratio =
            self.fields.values().filter(|f| f.agreement >= 0.5).count() as f64 / n;
        self.rag_validation_ratio =
            self.fields.values().filter(|f| f.rag_aligned == 1).count() as f64 / n;
    }

    /// Field names, plus the containers nested fields belong to.
    pub fn field_set(&self) -> std::collections::BTreeSet<String> {
        let mut set = std::collections::BTreeSet::new();
        for field in self.fields.values() {
            set.insert(field.field.clone());
            if let Some(parent) = &field.parent {
                set.insert(parent.clone());
            }
        }
        set
    }

    /// The spec rendered back into the model output shape, with
    /// `{"value", "confidence"}` wrappers and nested fields under their
    /// containers.
    pub fn to_document(&self) -> Value {
        let mut root = Map::new();
        for field in self.fields.values() {
            let entry = serde_json::json!({"value": field.value, "confidence": field.confidence});
            match &field.parent {
                None => {
                    root.insert(field.field.clone(), entry);
                }
                Some(parent) => {
                    let container = root
                        .entry(parent.clone())
                        .or_insert_with(|| Value::Object(Map::new()));
                    if let Value::Object(map) = container {
                        map.insert(field.field.clone(), entry);
                    }
                }
            }
        }
        Value::Object(root)
    }
}

/// Inputs shared by every field resolution in one synthesis.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisSettings<'a> {
    pub weights: &'a ConfidenceWeights,
    pub roster: &'a [String],
    pub min_quorum: usize,
}

/// Claims that enter consensus: every claim of a schema-valid extraction
/// result, and every claim of a research result that parsed.
pub fn pooled_claims(results: &[ExtractionResult]) -> Vec<FieldClaim> {
    results
        .iter()
        .filter(|r| match r.phase {
            Phase::Extraction => r.schema_valid,
            Phase::Research => !r.is_failure(),
            Phase::Synthesis => false,
        })
        .flat_map(|r| r.claims.iter().cloned())
        .collect()
}

fn claims_by_field(claims: Vec<FieldClaim>) -> BTreeMap<String, Vec<FieldClaim>> {
    let mut by_field: BTreeMap<String, Vec<FieldClaim>> = BTreeMap::new();
    for claim in claims {
        by_field.entry(claim.field.clone()).or_default().push(claim);
    }
    by_field
}

/// Pool extraction and research results and resolve every claimed field.
pub fn synthesize_spec(
    description_id: &str,
    results: &[ExtractionResult],
    contexts: &[RetrievedContext],
    settings: SynthesisSettings<'_>,
) -> Result<SynthesizedSpec, SynthesisError> {
    let successes = results
        .iter()
        .filter(|r| r.phase == Phase::Extraction && r.schema_valid)
        .count();
    if successes < settings.min_quorum {
        return Err(SynthesisError::QuorumNotMet {
            successes,
            min_quorum: settings.min_quorum,
        });
    }
    let fields = claims_by_field(pooled_claims(results))
        .into_iter()
        .map(|(name, claims)| {
            let resolved = resolve_field(&claims, contexts, settings.weights, settings.roster);
            (name, resolved)
        })
        .collect();
    Ok(SynthesizedSpec::from_fields(description_id, fields))
}

/// Fold the synthesis model's consistency pass into a deterministic draft.
///
/// A pass that failed or did not validate leaves the draft unchanged. A
/// valid pass may settle contested fields (agreement ≤ 0.5) by choosing one
/// of the values some model actually claimed; values no model claimed are
/// ignored and majority fields are never touched.
pub fn apply_consistency_pass(
    draft: SynthesizedSpec,
    pass: &ExtractionResult,
    results: &[ExtractionResult],
    contexts: &[RetrievedContext],
    settings: SynthesisSettings<'_>,
) -> SynthesizedSpec {
    let mut spec = draft;
    if let Some(failure) = &pass.failure {
        spec.synthesis_pass = SynthesisPass::FallbackToDraft {
            reason: format!("{failure:?}"),
        };
        return spec;
    }
    if !pass.schema_valid {
        spec.synthesis_pass = SynthesisPass::FallbackToDraft {
            reason: format!("consistency pass failed validation: {:?}", pass.issues),
        };
        return spec;
    }

    let by_field = claims_by_field(pooled_claims(results));
    let mut overridden = Vec::new();
    for (name, claims) in &by_field {
        let Some(current) = spec.fields.get(name) else {
            continue;
        };
        if current.agreement > 0.5 {
            continue;
        }
        let Some(choice) = pass.claim(name) else {
            continue;
        };
        if choice.canonical_value == current.canonical_value {
            continue;
        }
        let groups = group_claims(claims, contexts, settings.roster);
        if let Some(group) = groups.iter().find(|g| g.canonical == choice.canonical_value) {
            let resolved = assemble(group, claims.len(), TieBreak::SynthesisModel, settings.weights);
            spec.fields.insert(name.clone(), resolved);
            overridden.push(name.clone());
        }
    }
    spec.refresh_quality();
    spec.synthesis_pass = SynthesisPass::Applied { overridden };
    spec
}
