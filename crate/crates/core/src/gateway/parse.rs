//! Pull the first JSON object out of free-form model text.

use serde_json::Value;

use super::ProviderResponse;
use crate::model::{validate_spec_document, ExtractionResult, Phase, ResultFailure, SpecSchema};

/// End offset (exclusive) of the balanced object starting at `start`,
/// honoring string literals and escapes.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + offset + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// The first balanced `{...}` span in `text` that parses as a JSON object.
/// Surrounding prose and code fences are ignored.
pub fn extract_json_object(text: &str) -> Option<Value> {
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find('{') {
        let start = search_from + rel;
        if let Some(end) = balanced_end(text, start) {
            if let Ok(value @ Value::Object(_)) = serde_json::from_str::<Value>(&text[start..end]) {
                return Some(value);
            }
        }
        search_from = start + 1;
    }
    None
}

/// Parse a model response into an [`ExtractionResult`]. Total: text with no
/// parseable object yields a `ParseError` failure.
pub fn parse_structured_output(
    response: &ProviderResponse,
    schema: &SpecSchema,
    phase: Phase,
) -> ExtractionResult {
    match extract_json_object(&response.raw_text) {
        Some(document) => {
            let mut result = validate_spec_document(&document, schema, &response.model_id, phase);
            result.raw_output = response.raw_text.clone();
            result
        }
        None => ExtractionResult::failed(
            &response.model_id,
            phase,
            &response.raw_text,
            ResultFailure::ParseError {
                message: "no JSON object found in model output".into(),
            },
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FULL: &str = r#"{"part_name":"Hex bolt","manufacturer":"Acme","part_number":"HB-1","specifications":{"material":"steel","thread":"M8"}}"#;

    fn respond(text: &str) -> ProviderResponse {
        ProviderResponse::new("m1", text)
    }

    #[test]
    fn bare_object() {
        let r = parse_structured_output(&respond(FULL), &SpecSchema::default_parts(), Phase::Extraction);
        assert!(r.schema_valid);
        assert_eq!(r.raw_output, FULL);
    }

    #[test]
    fn fenced_object_inside_prose() {
        let text = format!("Here is the spec:\n```json\n{FULL}\n```\nLet me know if {{anything}} else.");
        let r = parse_structured_output(&respond(&text), &SpecSchema::default_parts(), Phase::Extraction);
        assert!(r.failure.is_none());
        assert!(r.schema_valid);
        assert_eq!(r.claims.len(), 5);
    }

    #[test]
    fn refusal_is_parse_error() {
        let r = parse_structured_output(
            &respond("I cannot help with that."),
            &SpecSchema::default_parts(),
            Phase::Extraction,
        );
        assert!(matches!(r.failure, Some(ResultFailure::ParseError { .. })));
        assert!(!r.schema_valid);
        assert!(r.claims.is_empty());
    }

    #[test]
    fn braces_in_strings_and_bad_first_candidate() {
        let text = r#"note {not json} then {"part_name":"a {b}","x":"\"}"}"#;
        let value = extract_json_object(text).unwrap();
        assert_eq!(value["part_name"], "a {b}");
        assert_eq!(value["x"], "\"}");
    }

    proptest! {
        #[test]
        fn total_over_arbitrary_text(text in "\\PC{0,200}") {
            let r = parse_structured_output(&respond(&text), &SpecSchema::default_parts(), Phase::Extraction);
            prop_assert!(!(r.failure.is_some() && !r.claims.is_empty()));
        }

        #[test]
        fn total_over_brace_soup(text in "[{}\"\\\\:,a1 ]{0,60}") {
            let _ = parse_structured_output(&respond(&text), &SpecSchema::default_parts(), Phase::Extraction);
        }
    }
}
