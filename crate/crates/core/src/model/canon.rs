//! Lexical canonicalization of field names and values.
//!
//! Consensus compares canonical forms, so two models writing `"10 MM"` and
//! `"10 mm"` agree. Nothing here converts units or resolves synonyms beyond
//! the fixed token table below.

/// Unit token aliases, applied per whitespace-separated token after
/// case-folding. Every target maps to itself, which keeps the function
/// idempotent.
pub const UNIT_ALIASES: &[(&str, &str)] = &[
    ("mm", "mm"),
    ("millimeter", "mm"),
    ("millimeters", "mm"),
    ("millimetre", "mm"),
    ("millimetres", "mm"),
    ("in", "in"),
    ("inch", "in"),
    ("inches", "in"),
    ("v", "v"),
    ("volt", "v"),
    ("volts", "v"),
    ("a", "a"),
    ("amp", "a"),
    ("amps", "a"),
    ("ampere", "a"),
    ("amperes", "a"),
    ("kg", "kg"),
    ("kgs", "kg"),
    ("kilogram", "kg"),
    ("kilograms", "kg"),
    ("psi", "psi"),
];

fn unit_alias(token: &str) -> Option<&'static str> {
    UNIT_ALIASES
        .iter()
        .find(|(alias, _)| *alias == token)
        .map(|(_, canonical)| *canonical)
}

/// Trim, collapse whitespace runs, case-fold, normalize unit tokens.
pub fn canonicalize_value(raw: &str) -> String {
    let folded = raw.to_lowercase();
    let mut out = String::with_capacity(folded.len());
    for token in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(unit_alias(token).unwrap_or(token));
    }
    out
}

/// Case-fold, map whitespace and hyphens to `_`, drop anything outside
/// `[a-z0-9_]`. Surrounding whitespace is trimmed first.
pub fn canonicalize_field_name(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .chars()
        .filter_map(|c| match c {
            'a'..='z' | '0'..='9' | '_' => Some(c),
            '-' => Some('_'),
            c if c.is_whitespace() => Some('_'),
            _ => None,
        })
        .collect()
}
