//! The three-phase run for one description: retrieve and extract with every
//! roster model, research the fields that came back missing or weak, then
//! resolve the pooled claims into one spec.

mod config;
mod prompt;

use std::time::{Duration, Instant};

use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::gateway::{parse_structured_output, Gateway, GatewayError, ProviderConfig};
use crate::index::{KnowledgeIndex, RetrievedContext};
use crate::model::{ExtractionResult, PartDescription, Phase, ResultFailure, SpecSchema};
use crate::synthesis::{
    apply_consistency_pass, synthesize_spec, SynthesisError, SynthesisSettings, SynthesizedSpec,
};

pub use config::{ConfigError, EnsembleConfig, DEFAULT_GAP_CONFIDENCE_FLOOR, DEFAULT_MIN_QUORUM};
pub use prompt::{build_prompt, build_synthesis_prompt};

/// Wall-clock time per phase. Not serialized so that replayed runs produce
/// byte-identical JSON.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub extraction: Duration,
    pub research: Duration,
    pub synthesis: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextUsed {
    pub extraction: RetrievedContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub research: Option<RetrievedContext>,
}

impl ContextUsed {
    pub fn all(&self) -> Vec<RetrievedContext> {
        std::iter::once(self.extraction.clone())
            .chain(self.research.clone())
            .collect()
    }
}

/// Everything one description's run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub description_id: String,
    pub phase1_results: Vec<ExtractionResult>,
    pub gaps: Vec<String>,
    pub phase2_results: Vec<ExtractionResult>,
    pub context_used: ContextUsed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis_result: Option<ExtractionResult>,
    #[serde(rename = "final")]
    pub final_spec: Option<SynthesizedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<SynthesisError>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub timings: PhaseTimings,
}

/// Required fields that phase 1 left uncovered or uncertain, sorted.
///
/// Only schema-valid results count. A field is a gap when fewer than half of
/// them contain it, or when the highest confidence any of them gave it
/// (including entries nested under it) is below `floor`.
pub fn identify_gaps(phase1: &[ExtractionResult], schema: &SpecSchema, floor: f64) -> Vec<String> {
    let valid: Vec<&ExtractionResult> = phase1.iter().filter(|r| r.schema_valid).collect();
    let mut gaps: Vec<String> = schema
        .required_fields()
        .iter()
        .filter(|field| {
            let present = valid
                .iter()
                .filter(|r| r.field_set().contains(field.as_str()))
                .count();
            let best = valid
                .iter()
                .flat_map(|r| r.claims.iter())
                .filter(|c| &c.field == *field || c.parent.as_deref() == Some(field.as_str()))
                .map(|c| c.confidence)
                .fold(f64::NEG_INFINITY, f64::max);
            present * 2 < valid.len() || best < floor
        })
        .cloned()
        .collect();
    gaps.sort();
    gaps
}

pub struct Pipeline {
    config: EnsembleConfig,
    gateway: Gateway,
    index: KnowledgeIndex,
    schema: SpecSchema,
}

impl Pipeline {
    /// Pipeline with a gateway built from the roster's provider kinds.
    pub fn from_config(
        config: EnsembleConfig,
        index: KnowledgeIndex,
        schema: SpecSchema,
    ) -> Result<Self, ConfigError> {
        config.check()?;
        let gateway = Gateway::from_roster(&config.roster)
            .map_err(|e: GatewayError| ConfigError::Invalid(e.to_string()))?;
        Ok(Self {
            config,
            gateway,
            index,
            schema,
        })
    }

    /// Pipeline with caller-supplied backends.
    pub fn with_gateway(
        config: EnsembleConfig,
        gateway: Gateway,
        index: KnowledgeIndex,
        schema: SpecSchema,
    ) -> Result<Self, ConfigError> {
        config.check()?;
        Ok(Self {
            config,
            gateway,
            index,
            schema,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn schema(&self) -> &SpecSchema {
        &self.schema
    }

    async fn retrieve(&self, query: &str, warnings: &mut Vec<String>) -> RetrievedContext {
        match self
            .index
            .search_top_k(query, self.config.k, self.config.threshold)
            .await
        {
            Ok(context) => context,
            Err(e) => {
                tracing::warn!(error = %e, "retrieval failed; continuing without references");
                warnings.push(format!("retrieval failed: {e}"));
                RetrievedContext::empty(query, self.config.k, self.config.threshold)
            }
        }
    }

    async fn ask(
        &self,
        provider: &ProviderConfig,
        request: &crate::gateway::PromptRequest,
        schema: &SpecSchema,
        phase: Phase,
    ) -> ExtractionResult {
        match self.gateway.invoke(provider, request).await {
            Ok(response) => parse_structured_output(&response, schema, phase),
            Err(failure) => {
                tracing::warn!(model = %failure.model_id, kind = %failure.kind, "provider failed");
                ExtractionResult::failed(
                    &provider.model_id,
                    phase,
                    "",
                    ResultFailure::Provider {
                        kind: failure.kind,
                        message: failure.last_error,
                    },
                )
            }
        }
    }

    async fn fan_out<'a>(
        &self,
        providers: impl Iterator<Item = &'a ProviderConfig>,
        request: &crate::gateway::PromptRequest,
        schema: &SpecSchema,
        phase: Phase,
    ) -> Vec<ExtractionResult> {
        join_all(providers.map(|p| self.ask(p, request, schema, phase))).await
    }

    /// Phase 1: retrieve for the description and query every extraction
    /// model concurrently. Results come back in roster order.
    pub async fn extract_phase(
        &self,
        description: &PartDescription,
        warnings: &mut Vec<String>,
    ) -> (Vec<ExtractionResult>, RetrievedContext) {
        let context = self.retrieve(&description.text, warnings).await;
        let request = build_prompt(description, &context, &self.schema, &[], Phase::Extraction);
        let results = self
            .fan_out(
                self.config.extraction_providers(),
                &request,
                &self.schema,
                Phase::Extraction,
            )
            .await;
        (results, context)
    }

    /// Phase 2: re-retrieve with the gap names appended to the query and ask
    /// the research models to fill those fields. Their outputs are validated
    /// against a schema that requires only the gaps.
    pub async fn research_phase(
        &self,
        description: &PartDescription,
        gaps: &[String],
        warnings: &mut Vec<String>,
    ) -> (Vec<ExtractionResult>, RetrievedContext) {
        let query = format!("{} {}", description.text, gaps.join(" "));
        let context = self.retrieve(&query, warnings).await;
        let focus_schema = match self.schema.with_required(gaps) {
            Ok(schema) => schema,
            Err(e) => {
                warnings.push(format!("research skipped: {e}"));
                return (Vec::new(), context);
            }
        };
        let request = build_prompt(description, &context, &focus_schema, gaps, Phase::Research);
        let results = self
            .fan_out(
                self.config.research_providers(),
                &request,
                &focus_schema,
                Phase::Research,
            )
            .await;
        (results, context)
    }

    pub async fn run_pipeline(&self, description: &PartDescription) -> PipelineResult {
        let mut warnings = Vec::new();
        let mut timings = PhaseTimings::default();

        let started = Instant::now();
        let (phase1_results, extraction_context) = self.extract_phase(description, &mut warnings).await;
        timings.extraction = started.elapsed();

        let gaps = identify_gaps(&phase1_results, &self.schema, self.config.gap_confidence_floor);
        let mut phase2_results = Vec::new();
        let mut research_context = None;
        if !gaps.is_empty() && !self.config.research_models.is_empty() {
            let started = Instant::now();
            let (results, context) = self.research_phase(description, &gaps, &mut warnings).await;
            timings.research = started.elapsed();
            phase2_results = results;
            research_context = Some(context);
        }

        let context_used = ContextUsed {
            extraction: extraction_context,
            research: research_context,
        };
        let contexts = context_used.all();
        let roster = self.config.roster_order();
        let settings = SynthesisSettings {
            weights: &self.config.confidence_weights,
            roster: &roster,
            min_quorum: self.config.min_quorum,
        };
        let pooled: Vec<ExtractionResult> = phase1_results
            .iter()
            .chain(phase2_results.iter())
            .cloned()
            .collect();

        let started = Instant::now();
        let mut synthesis_result = None;
        let (final_spec, error) = match synthesize_spec(&description.id, &pooled, &contexts, settings) {
            Ok(draft) if self.config.synthesis_pass => {
                let provider = self
                    .config
                    .provider(&self.config.synthesis_model)
                    .expect("checked config names a roster synthesis model");
                let request = build_synthesis_prompt(
                    description,
                    &context_used.extraction,
                    &self.schema,
                    &draft.to_document(),
                );
                let pass = self.ask(provider, &request, &self.schema, Phase::Synthesis).await;
                let spec = apply_consistency_pass(draft, &pass, &pooled, &contexts, settings);
                synthesis_result = Some(pass);
                (Some(spec), None)
            }
            Ok(draft) => (Some(draft), None),
            Err(e) => {
                tracing::warn!(description = %description.id, error = %e, "synthesis skipped");
                (None, Some(e))
            }
        };
        timings.synthesis = started.elapsed();

        PipelineResult {
            description_id: description.id.clone(),
            phase1_results,
            gaps,
            phase2_results,
            context_used,
            synthesis_result,
            final_spec,
            error,
            warnings,
            timings,
        }
    }
}
