use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{ara, ics, idr, sdq, tdi, GroundTruthManifest, MetricError};
use crate::model::ExtractionResult;
use crate::orchestrator::PipelineResult;

/// Metric values for one system under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub system_id: String,
    pub ics: f64,
    pub tdi: f64,
    pub sdq: f64,
    pub idr: f64,
    pub ara: f64,
}

/// All pipeline results one system produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemRun {
    pub system_id: String,
    pub results: Vec<PipelineResult>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Add research-phase field sets to the IDR comparison.
    pub idr_include_research: bool,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn final_fields(result: &PipelineResult) -> BTreeSet<String> {
    result
        .final_spec
        .as_ref()
        .map(|spec| spec.field_set())
        .unwrap_or_default()
}

fn idr_sets(result: &PipelineResult, options: EvalOptions) -> Vec<BTreeSet<String>> {
    let mut sets: Vec<_> = result
        .phase1_results
        .iter()
        .filter(|r| r.schema_valid)
        .map(ExtractionResult::field_set)
        .collect();
    if options.idr_include_research {
        sets.extend(
            result
                .phase2_results
                .iter()
                .filter(|r| !r.is_failure())
                .map(ExtractionResult::field_set),
        );
    }
    sets
}

fn evaluate_system(
    run: &SystemRun,
    manifest: &GroundTruthManifest,
    options: EvalOptions,
) -> Result<MetricReport, MetricError> {
    if run.results.is_empty() {
        return Err(MetricError::EmptyList);
    }
    let mut ics_values = Vec::new();
    let mut tdi_values = Vec::new();
    let mut idr_values = Vec::new();
    let mut ara_values = Vec::new();
    let mut outputs = Vec::new();

    for result in &run.results {
        let entry = manifest.entry(&result.description_id)?;
        let fields = final_fields(result);

        ics_values.push(ics(&fields, &entry.expected_fields)?);

        let details = fields.iter().filter(|f| entry.is_detail(f)).count();
        tdi_values.push(tdi(&[details], entry.detail_max)?);

        let sets = idr_sets(result, options);
        idr_values.push(if sets.len() < 2 { 0.0 } else { idr(&sets)? });

        let attributes: Vec<String> = fields.into_iter().collect();
        if !attributes.is_empty() {
            ara_values.push(ara(&attributes, &entry.whitelist())?);
        }

        outputs.extend(result.phase1_results.iter().cloned());
    }

    Ok(MetricReport {
        system_id: run.system_id.clone(),
        ics: mean(&ics_values),
        tdi: mean(&tdi_values),
        sdq: sdq(&outputs)?,
        idr: mean(&idr_values),
        ara: mean(&ara_values),
    })
}

/// One report per system, in input order, plus the rendered table.
///
/// Per description: ICS and ARA use the final spec's field set, TDI counts
/// final fields that are allowed but not expected, IDR compares the field
/// sets of schema-valid extraction outputs (0 when fewer than two). These are
/// averaged over descriptions. SDQ pools every extraction output of the run.
pub fn evaluate_run(
    runs: &[SystemRun],
    manifest: &GroundTruthManifest,
    options: EvalOptions,
) -> Result<(Vec<MetricReport>, String), MetricError> {
    let reports = runs
        .iter()
        .map(|run| evaluate_system(run, manifest, options))
        .collect::<Result<Vec<_>, _>>()?;
    let table = render_table(&reports);
    Ok((reports, table))
}

/// Plain-text table: Model, ICS, TDI, SDQ, IDR, ARA. IDR has three
/// decimals, the rest two.
pub fn render_table(reports: &[MetricReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.system_id.chars().count())
        .chain(std::iter::once("Model".len()))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>4}  {:>4}  {:>4}  {:>5}  {:>4}",
        "Model", "ICS", "TDI", "SDQ", "IDR", "ARA"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>4.2}  {:>4.2}  {:>4.2}  {:>5.3}  {:>4.2}",
            r.system_id, r.ics, r.tdi, r.sdq, r.idr, r.ara
        );
    }
    out
}
