//! Prompt construction.
//!
//! The user text is laid out as:
//!
//! ```text
//! DESCRIPTION:
//! <description text>
//!
//! REFERENCE 1 (record <id>, similarity 0.873):
//! <snippet>
//!
//! FOCUS:
//! - <gap field>
//! ```
//!
//! The REFERENCE blocks are omitted when retrieval found nothing; FOCUS is
//! only emitted in the research phase.

use std::fmt::Write;

use crate::gateway::PromptRequest;
use crate::index::RetrievedContext;
use crate::model::{FieldKind, PartDescription, Phase, SpecSchema};

fn system_text(schema: &SpecSchema, phase: Phase) -> String {
    let mut out = String::from(
        "You extract structured specifications for industrial parts.\n\
         Emit a single JSON object and nothing else.\n\
         Required fields:\n",
    );
    for field in schema.required_fields() {
        let kind = schema.kind_of(field).unwrap_or(FieldKind::ScalarText);
        let _ = writeln!(out, "- {field} ({kind})");
    }
    let optional: Vec<_> = schema
        .field_kinds()
        .iter()
        .filter(|(name, _)| !schema.is_required(name))
        .collect();
    if !optional.is_empty() {
        out.push_str("Optional fields:\n");
        for (field, kind) in optional {
            let _ = writeln!(out, "- {field} ({kind})");
        }
    }
    out.push_str(
        "Each value may be a plain string or {\"value\": ..., \"confidence\": <0..1>}.\n\
         nested-map fields hold attribute/value pairs such as material, dimensions, ratings and standards.\n\
         References are supporting evidence from a parts knowledge base; prefer the description when they disagree.\n",
    );
    match phase {
        Phase::Extraction => {}
        Phase::Research => out.push_str(
            "Earlier extraction left the FOCUS fields missing or uncertain. Research and fill them.\n",
        ),
        Phase::Synthesis => out.push_str(
            "A DRAFT resolved from several models follows. Return the corrected specification.\n",
        ),
    }
    out
}

fn user_text(
    description: &PartDescription,
    context: &RetrievedContext,
    focus_fields: &[String],
    phase: Phase,
) -> String {
    let mut out = format!("DESCRIPTION:\n{}\n", description.text.trim());
    for (i, hit) in context.hits.iter().enumerate() {
        let _ = write!(
            out,
            "\nREFERENCE {} (record {}, similarity {:.3}):\n{}\n",
            i + 1,
            hit.record_id,
            hit.similarity,
            hit.snippet
        );
    }
    if phase == Phase::Research && !focus_fields.is_empty() {
        out.push_str("\nFOCUS:\n");
        for field in focus_fields {
            let _ = writeln!(out, "- {field}");
        }
    }
    out
}

/// Build the request for one phase. Deterministic for fixed inputs.
pub fn build_prompt(
    description: &PartDescription,
    context: &RetrievedContext,
    schema: &SpecSchema,
    focus_fields: &[String],
    phase: Phase,
) -> PromptRequest {
    PromptRequest::new(
        system_text(schema, phase),
        user_text(description, context, focus_fields, phase),
        schema.clone(),
    )
}

/// Request for the synthesis model's consistency pass over a draft document.
pub fn build_synthesis_prompt(
    description: &PartDescription,
    context: &RetrievedContext,
    schema: &SpecSchema,
    draft: &serde_json::Value,
) -> PromptRequest {
    let mut user = user_text(description, context, &[], Phase::Synthesis);
    let _ = write!(user, "\nDRAFT:\n{draft}\n");
    PromptRequest::new(system_text(schema, Phase::Synthesis), user, schema.clone())
}
