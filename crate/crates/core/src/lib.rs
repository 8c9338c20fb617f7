//! Retrieval-grounded multi-model ensemble for extracting structured part
//! specifications from free-form descriptions.
//!
//! The pipeline runs in three phases:
//!
//! 1. **Extraction**: every extraction-tagged model receives the description
//!    plus the top-k knowledge-base references and answers in parallel.
//! 2. **Research**: required fields that are missing or low-confidence are
//!    sent to the research-tagged models with a fresh, gap-focused retrieval.
//! 3. **Synthesis**: claims from both phases are resolved field by field by
//!    majority consensus, scored for confidence, and checked against the
//!    retrieved references.
//!
//! ## Modules
//!
//! - [`model`]: shared types, canonicalization, schema validation
//! - [`gateway`]: model backends (HTTP, replay fixtures) with retry and timeout
//! - [`index`]: knowledge-base ingestion, embedding, exact top-k search, persistence
//! - [`orchestrator`]: phase execution and prompt construction
//! - [`synthesis`]: consensus, confidence, final specification
//! - [`metrics`]: ICS / TDI / SDQ / IDR / ARA and report rendering

pub mod gateway;
pub mod index;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod synthesis;

pub use gateway::{
    parse_structured_output, Gateway, ModelBackend, PromptRequest, ProviderConfig,
    ProviderFailure, ProviderKind, ProviderResponse, RoleTag,
};
pub use index::{
    EmbeddingVector, Embedder, FlatIndex, HashedTrigramEmbedder, KnowledgeIndex, PartRecord,
    RetrievedContext,
};
pub use metrics::{GroundTruthManifest, MetricReport};
pub use model::{
    canonicalize_field_name, canonicalize_value, validate_spec_document, ExtractionResult,
    FieldClaim, FieldKind, PartDescription, Phase, SpecSchema,
};
pub use orchestrator::{EnsembleConfig, Pipeline, PipelineResult};
pub use synthesis::{ResolvedField, SynthesizedSpec};
