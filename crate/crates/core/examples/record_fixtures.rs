//! Regenerate the replay fixtures and the golden pipeline output under
//! `tests/fixtures/`.
//!
//! Five scripted personas answer from `truth.json`, each with its own quirks
//! (wrapper vs plain values, spelled-out units, fenced output, an omitted
//! entry, an extra attribute). For a few parts every persona reports low
//! confidence on `specifications`, which sends those parts through the
//! research phase. Every response is recorded as a replay fixture.
//!
//! ```text
//! cargo run -p partsynth-core --example record_fixtures
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use serde_json::{json, Map, Value};

use partsynth::gateway::{extract_json_object, AttemptError, RecordingBackend};
use partsynth::index::{ingest_records, RecordFormat};
use partsynth::{
    EnsembleConfig, Gateway, HashedTrigramEmbedder, KnowledgeIndex, ModelBackend, PartDescription,
    Pipeline, PromptRequest, ProviderConfig, SpecSchema,
};

/// Parts whose extraction answers carry low specification confidence.
const UNCERTAIN: [&str; 3] = ["P03", "P11", "P17"];

struct Persona {
    truth: BTreeMap<String, Value>,
    by_text: BTreeMap<String, String>,
}

fn description_text(user_text: &str) -> Option<&str> {
    let rest = user_text.strip_prefix("DESCRIPTION:\n")?;
    rest.split('\n').next()
}

fn spell_units(value: &str) -> String {
    match value.strip_suffix(" mm") {
        Some(number) => format!("{number} millimeters"),
        None => value.to_string(),
    }
}

impl Persona {
    fn extraction(&self, model: &str, id: &str, part: &Value) -> String {
        let spec = part["specifications"].as_object().cloned().unwrap_or_default();
        let low = UNCERTAIN.contains(&id);
        let spec_conf = if low { 0.5 } else { 0.85 };
        let scalar = |key: &str| part[key].as_str().unwrap_or_default().to_string();
        match model {
            "atlas" => {
                let wrap = |v: &Value, c: f64| json!({"value": v, "confidence": c});
                let specs: Map<String, Value> =
                    spec.iter().map(|(k, v)| (k.clone(), wrap(v, spec_conf))).collect();
                let doc = json!({
                    "part_name": wrap(&part["part_name"], 0.95),
                    "manufacturer": wrap(&part["manufacturer"], 0.9),
                    "part_number": wrap(&part["part_number"], 0.95),
                    "specifications": specs,
                });
                doc.to_string()
            }
            "borealis" => {
                let specs: Map<String, Value> = spec
                    .iter()
                    .map(|(k, v)| (k.clone(), json!(spell_units(v.as_str().unwrap_or_default()))))
                    .collect();
                let mut scores = json!({"part_name": 0.9, "manufacturer": 0.85, "part_number": 0.9});
                scores["specifications"] = json!(spec_conf);
                let doc = json!({
                    "part_name": scalar("part_name"),
                    "manufacturer": scalar("manufacturer"),
                    "part_number": scalar("part_number"),
                    "specifications": specs,
                    "confidence_scores": scores,
                });
                serde_json::to_string_pretty(&doc).expect("serializable")
            }
            "cirrus" => {
                let mut specs = spec.clone();
                let last = specs.keys().next_back().cloned();
                if let Some(last) = last {
                    specs.remove(&last);
                }
                let doc = json!({
                    "part_name": scalar("part_name"),
                    "manufacturer": scalar("manufacturer"),
                    "part_number": scalar("part_number"),
                    "specifications": specs,
                    "confidence": if low { 0.5 } else { 0.8 },
                });
                format!("Here is the extracted specification:\n```json\n{}\n```", serde_json::to_string_pretty(&doc).expect("serializable"))
            }
            "delta" => {
                let doc = json!({
                    "part_name": scalar("part_name").to_uppercase(),
                    "manufacturer": scalar("manufacturer"),
                    "part_number": scalar("part_number"),
                    "specifications": spec,
                    "marketing_note": "popular replacement part",
                    "confidence": if low { 0.5 } else { 0.75 },
                });
                doc.to_string()
            }
            _ => {
                let doc = json!({
                    "part_name": {"value": scalar("part_name"), "confidence": 0.7},
                    "manufacturer": {"value": scalar("manufacturer"), "confidence": 0.7},
                    "part_number": {"value": scalar("part_number"), "confidence": 0.8},
                    "specifications": spec.iter().map(|(k, v)| (k.clone(), json!({"value": v, "confidence": spec_conf - 0.1}))).collect::<Map<_, _>>(),
                });
                doc.to_string()
            }
        }
    }

    fn research(&self, user_text: &str, part: &Value) -> String {
        let focus: Vec<&str> = user_text
            .split("\nFOCUS:\n")
            .nth(1)
            .unwrap_or_default()
            .lines()
            .filter_map(|l| l.strip_prefix("- "))
            .collect();
        let mut doc = Map::new();
        for field in focus {
            let value = &part[field];
            let entry = match value {
                Value::Object(entries) => Value::Object(
                    entries
                        .iter()
                        .map(|(k, v)| (k.clone(), json!({"value": v, "confidence": 0.9})))
                        .collect(),
                ),
                other => json!({"value": other, "confidence": 0.9}),
            };
            doc.insert(field.to_string(), entry);
        }
        Value::Object(doc).to_string()
    }
}

#[async_trait]
impl ModelBackend for Persona {
    async fn complete(
        &self,
        config: &ProviderConfig,
        request: &PromptRequest,
    ) -> Result<String, AttemptError> {
        let text = description_text(&request.user_text)
            .ok_or_else(|| AttemptError::permanent("prompt has no DESCRIPTION block"))?;
        let id = self
            .by_text
            .get(text)
            .ok_or_else(|| AttemptError::permanent(format!("unknown description {text:?}")))?;
        let part = &self.truth[id];
        if let Some(draft) = request.user_text.split("\nDRAFT:\n").nth(1) {
            let draft = extract_json_object(draft)
                .ok_or_else(|| AttemptError::permanent("draft is not JSON"))?;
            return Ok(draft.to_string());
        }
        if request.user_text.contains("\nFOCUS:\n") {
            return Ok(self.research(&request.user_text, part));
        }
        Ok(self.extraction(&config.model_id, id, part))
    }
}

fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[tokio::main]
async fn main() {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let descriptions: Vec<PartDescription> =
        serde_json::from_value(read_json(&fixtures.join("descriptions.json"))).expect("descriptions");
    let truth: BTreeMap<String, Value> =
        serde_json::from_value(read_json(&fixtures.join("truth.json"))).expect("truth");
    let by_text = descriptions.iter().map(|d| (d.text.clone(), d.id.clone())).collect();
    let persona = Arc::new(Persona { truth, by_text });

    let config = EnsembleConfig::load(&fixtures.join("config.json")).expect("config");
    let replay_dir = fixtures.join("replay");
    if replay_dir.exists() {
        std::fs::remove_dir_all(&replay_dir).expect("clear replay dir");
    }
    let mut gateway = Gateway::new();
    for provider in &config.roster {
        let recorder = RecordingBackend::new(persona.clone(), &replay_dir);
        gateway.register(&provider.model_id, Arc::new(recorder));
    }

    let report = ingest_records(&fixtures.join("kb/parts.csv"), RecordFormat::Csv).expect("kb");
    let index = KnowledgeIndex::build(&report.records, Arc::new(HashedTrigramEmbedder::default()))
        .await
        .expect("index");
    let pipeline =
        Pipeline::with_gateway(config, gateway, index, SpecSchema::default_parts()).expect("pipeline");

    let mut results = Vec::new();
    for description in &descriptions {
        let result = pipeline.run_pipeline(description).await;
        assert!(result.final_spec.is_some(), "{} produced no spec", description.id);
        results.push(result);
    }
    let golden = fixtures.join("golden");
    std::fs::create_dir_all(&golden).expect("golden dir");
    let body = serde_json::to_string_pretty(&results).expect("serializable") + "\n";
    std::fs::write(golden.join("pipeline_results.json"), body).expect("write golden");
    let researched = results.iter().filter(|r| !r.phase2_results.is_empty()).count();
    println!(
        "recorded {} descriptions ({researched} with research) into {}",
        results.len(),
        replay_dir.display()
    );
}
