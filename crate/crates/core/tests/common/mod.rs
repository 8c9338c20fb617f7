#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde_json::json;

use partsynth::gateway::AttemptError;
use partsynth::index::{ingest_records, RecordFormat};
use partsynth::orchestrator::EnsembleConfig;
use partsynth::{
    Gateway, HashedTrigramEmbedder, KnowledgeIndex, ModelBackend, PartDescription, PromptRequest,
    ProviderConfig, RoleTag,
};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn corpus() -> Vec<PartDescription> {
    let text = std::fs::read_to_string(fixtures().join("descriptions.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub async fn fixture_index() -> KnowledgeIndex {
    let report = ingest_records(&fixtures().join("kb/parts.csv"), RecordFormat::Csv).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    KnowledgeIndex::build(&report.records, Arc::new(HashedTrigramEmbedder::default()))
        .await
        .unwrap()
}

pub fn empty_index() -> KnowledgeIndex {
    KnowledgeIndex::empty(Arc::new(HashedTrigramEmbedder::default()))
}

/// A complete, schema-valid answer for the default part schema.
pub fn valid_answer(material: &str, confidence: f64) -> String {
    json!({
        "part_name": "Hex bolt",
        "manufacturer": "Acme",
        "part_number": "HB-8",
        "specifications": {"material": material, "thread": "M8"},
        "confidence": confidence,
    })
    .to_string()
}

#[derive(Clone)]
pub enum Script {
    Answer(String),
    Fail(AttemptError),
    /// Never answers; the gateway timeout has to fire.
    Hang,
}

#[derive(Clone)]
pub struct Step {
    pub delay: Duration,
    pub script: Script,
}

impl Step {
    pub fn answer(text: impl Into<String>) -> Self {
        Self { delay: Duration::ZERO, script: Script::Answer(text.into()) }
    }

    pub fn fail(error: AttemptError) -> Self {
        Self { delay: Duration::ZERO, script: Script::Fail(error) }
    }

    pub fn hang() -> Self {
        Self { delay: Duration::ZERO, script: Script::Hang }
    }

    pub fn after(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Call {
    pub model_id: String,
    pub research: bool,
    pub started: Instant,
    pub finished: Instant,
}

/// Scripted backend. The research script is used when the prompt carries a
/// FOCUS block; the extraction script otherwise.
pub struct Stub {
    pub extraction: Step,
    pub research: Option<Step>,
    pub log: Arc<Mutex<Vec<Call>>>,
}

#[async_trait]
impl ModelBackend for Stub {
    async fn complete(
        &self,
        config: &ProviderConfig,
        request: &PromptRequest,
    ) -> Result<String, AttemptError> {
        let research = request.user_text.contains("\nFOCUS:\n");
        let step = match (&self.research, research) {
            (Some(step), true) => step.clone(),
            _ => self.extraction.clone(),
        };
        let started = Instant::now();
        tokio::time::sleep(step.delay).await;
        let outcome = match step.script {
            Script::Answer(text) => Ok(text),
            Script::Fail(error) => Err(error),
            Script::Hang => {
                std::future::pending::<()>().await;
                unreachable!()
            }
        };
        self.log.lock().unwrap().push(Call {
            model_id: config.model_id.clone(),
            research,
            started,
            finished: Instant::now(),
        });
        outcome
    }
}

/// Roster `m1..mn`, all extraction-tagged; `m1` also synthesizes and the
/// ids in `research` carry the research tag.
pub fn stub_config(n: usize, research: &[&str]) -> EnsembleConfig {
    let roster = (1..=n)
        .map(|i| {
            let id = format!("m{i}");
            let mut roles = vec![RoleTag::Extraction];
            if research.contains(&id.as_str()) {
                roles.push(RoleTag::Research);
            }
            ProviderConfig::replay(&id, "unused")
                .with_roles(roles)
                .with_max_retries(0)
                .with_timeout(Duration::from_secs(5))
        })
        .collect();
    let mut config = EnsembleConfig::with_roster(roster);
    config.research_models = research.iter().map(|s| s.to_string()).collect();
    config
}

pub struct StubGateway {
    pub gateway: Gateway,
    pub log: Arc<Mutex<Vec<Call>>>,
}

pub fn stub_gateway(steps: BTreeMap<String, (Step, Option<Step>)>) -> StubGateway {
    let log = Arc::new(Mutex::new(Vec::new()));
    let mut gateway = Gateway::new();
    for (model, (extraction, research)) in steps {
        let stub = Stub { extraction, research, log: log.clone() };
        gateway.register(&model, Arc::new(stub));
    }
    StubGateway { gateway, log }
}
