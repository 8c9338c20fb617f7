//! Extraction-quality metrics and the comparison table.
//!
//! | metric | meaning                                         |
//! |--------|-------------------------------------------------|
//! | ICS    | share of expected core fields present           |
//! | TDI    | detail fields per part, relative to a maximum   |
//! | SDQ    | share of model outputs that are schema-valid    |
//! | IDR    | mean pairwise Jaccard distance of field sets    |
//! | ARA    | share of emitted attributes outside a whitelist |

mod manifest;
mod report;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::ExtractionResult;

pub use manifest::{GroundTruthManifest, ManifestEntry};
pub use report::{evaluate_run, render_table, EvalOptions, MetricReport, SystemRun};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("expected field set is empty")]
    EmptyExpected,
    #[error("input list is empty")]
    EmptyList,
    #[error("detail maximum must be at least 1")]
    NonpositiveDMax,
    #[error("need at least two field sets, got {0}")]
    TooFewSets(usize),
    #[error("no manifest entry for description {0:?}")]
    MissingManifestEntry(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
}

/// |extracted ∩ expected| / |expected|.
pub fn ics(extracted: &BTreeSet<String>, expected: &BTreeSet<String>) -> Result<f64, MetricError> {
    if expected.is_empty() {
        return Err(MetricError::EmptyExpected);
    }
    let hit = expected.intersection(extracted).count();
    Ok(hit as f64 / expected.len() as f64)
}

/// (Σ dᵢ) / (n · D_max), capped at 1 when some part exceeds `d_max`.
pub fn tdi(detail_counts: &[usize], d_max: usize) -> Result<f64, MetricError> {
    if d_max == 0 {
        return Err(MetricError::NonpositiveDMax);
    }
    if detail_counts.is_empty() {
        return Err(MetricError::EmptyList);
    }
    let total: usize = detail_counts.iter().sum();
    Ok((total as f64 / (detail_counts.len() * d_max) as f64).min(1.0))
}

/// valid outputs / all outputs.
pub fn sdq(outputs: &[ExtractionResult]) -> Result<f64, MetricError> {
    if outputs.is_empty() {
        return Err(MetricError::EmptyList);
    }
    let valid = outputs.iter().filter(|r| r.schema_valid).count();
    Ok(valid as f64 / outputs.len() as f64)
}

fn jaccard_distance(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(b).count() as f64 / union as f64
}

/// Mean pairwise Jaccard distance. Two empty sets are at distance 0.
pub fn idr(output_field_sets: &[BTreeSet<String>]) -> Result<f64, MetricError> {
    let n = output_field_sets.len();
    if n < 2 {
        return Err(MetricError::TooFewSets(n));
    }
    let mut total = 0.0;
    for (i, a) in output_field_sets.iter().enumerate() {
        for b in &output_field_sets[i + 1..] {
            total += jaccard_distance(a, b);
        }
    }
    Ok(2.0 * total / (n * (n - 1)) as f64)
}

/// Share of `attributes` (counted with multiplicity) not in `allowed`.
pub fn ara(attributes: &[String], allowed: &BTreeSet<String>) -> Result<f64, MetricError> {
    if attributes.is_empty() {
        return Err(MetricError::EmptyList);
    }
    let extraneous = attributes.iter().filter(|a| !allowed.contains(*a)).count();
    Ok(extraneous as f64 / attributes.len() as f64)
}
