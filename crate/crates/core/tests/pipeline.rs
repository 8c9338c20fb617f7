mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use partsynth::gateway::AttemptError;
use partsynth::model::{FailureKind, ResultFailure};
use partsynth::orchestrator::{EnsembleConfig, PipelineResult};
use partsynth::synthesis::{SynthesisError, SynthesisPass};
use partsynth::{PartDescription, Phase, Pipeline, SpecSchema};

use common::*;

fn description() -> PartDescription {
    PartDescription::new("d1", "Hex bolt M8, zinc plated steel").unwrap()
}

fn steps(pairs: Vec<(&str, Step)>) -> BTreeMap<String, (Step, Option<Step>)> {
    pairs.into_iter().map(|(m, s)| (m.to_string(), (s, None))).collect()
}

async fn run(config: EnsembleConfig, steps: BTreeMap<String, (Step, Option<Step>)>) -> PipelineResult {
    let stub = stub_gateway(steps);
    let pipeline =
        Pipeline::with_gateway(config, stub.gateway, empty_index(), SpecSchema::default_parts()).unwrap();
    pipeline.run_pipeline(&description()).await
}

#[tokio::test]
async fn all_valid_no_gaps() {
    let result = run(
        stub_config(3, &[]),
        steps(vec![
            ("m1", Step::answer(valid_answer("steel", 0.9))),
            ("m2", Step::answer(valid_answer("steel", 0.9))),
            ("m3", Step::answer(valid_answer("steel", 0.9))),
        ]),
    )
    .await;
    assert_eq!(result.phase1_results.len(), 3);
    assert!(result.gaps.is_empty());
    assert!(result.phase2_results.is_empty());
    let spec = result.final_spec.expect("final spec");
    assert_eq!(spec.fields["material"].agreement, 1.0);
    assert_eq!(spec.synthesis_pass, SynthesisPass::NotRequested);
    assert!(result.context_used.extraction.hits.is_empty());
}

#[tokio::test]
async fn two_timeouts_break_quorum() {
    let mut config = stub_config(3, &[]);
    for provider in &mut config.roster {
        provider.timeout = Duration::from_millis(50);
    }
    let result = run(
        config,
        steps(vec![
            ("m1", Step::answer(valid_answer("steel", 0.9))),
            ("m2", Step::hang()),
            ("m3", Step::hang()),
        ]),
    )
    .await;
    assert_eq!(result.phase1_results.len(), 3);
    assert!(result.final_spec.is_none());
    assert_eq!(
        result.error,
        Some(SynthesisError::QuorumNotMet { successes: 1, min_quorum: 2 })
    );
    for failed in &result.phase1_results[1..] {
        assert!(matches!(
            failed.failure,
            Some(ResultFailure::Provider { kind: FailureKind::Timeout, .. })
        ));
    }
}

#[tokio::test]
async fn fenced_prose_answer_still_parses() {
    let fenced = format!("Sure! Here you go:\n```json\n{}\n```\nAnything else?", valid_answer("steel", 0.8));
    let result = run(
        stub_config(2, &[]),
        steps(vec![
            ("m1", Step::answer(valid_answer("steel", 0.9))),
            ("m2", Step::answer(fenced)),
        ]),
    )
    .await;
    assert!(result.phase1_results[1].schema_valid);
    assert!(result.final_spec.is_some());
}

#[tokio::test]
async fn research_fills_low_confidence_gap_after_extraction_finishes() {
    let mut map = steps(vec![
        ("m1", Step::answer(valid_answer("steel", 0.5)).after(Duration::from_millis(40))),
        ("m2", Step::answer(valid_answer("steel", 0.5))),
    ]);
    let research = serde_json::json!({
        "part_name": "Hex bolt", "manufacturer": "Acme", "part_number": "HB-8",
        "specifications": {"material": {"value": "steel", "confidence": 0.8}},
    })
    .to_string();
    map.insert("m3".into(), (Step::answer(valid_answer("brass", 0.5)), Some(Step::answer(research))));
    let stub = stub_gateway(map);
    let pipeline = Pipeline::with_gateway(
        stub_config(3, &["m3"]),
        stub.gateway,
        empty_index(),
        SpecSchema::default_parts(),
    )
    .unwrap();
    let result = pipeline.run_pipeline(&description()).await;

    assert_eq!(result.gaps, ["manufacturer", "part_name", "part_number", "specifications"]);
    assert_eq!(result.phase2_results.len(), 1);
    let research = &result.phase2_results[0];
    assert_eq!(research.phase, Phase::Research);
    let claim = research.claim("material").expect("material claim");
    assert_eq!(claim.confidence, 0.8);

    let log = stub.log.lock().unwrap();
    let last_extraction = log.iter().filter(|c| !c.research).map(|c| c.finished).max().unwrap();
    let first_research = log.iter().filter(|c| c.research).map(|c| c.started).min().unwrap();
    assert!(first_research >= last_extraction, "research started before extraction finished");

    let material = &result.final_spec.unwrap().fields["material"];
    assert_eq!(material.canonical_value, "steel");
    assert_eq!(material.agreement, 0.75);
}

#[tokio::test]
async fn failing_research_degrades_to_phase_one() {
    let mut map = steps(vec![
        ("m1", Step::answer(valid_answer("steel", 0.5))),
        ("m2", Step::answer(valid_answer("steel", 0.5))),
    ]);
    map.insert(
        "m3".into(),
        (Step::answer(valid_answer("steel", 0.5)), Some(Step::fail(AttemptError::permanent("boom")))),
    );
    let stub = stub_gateway(map);
    let pipeline = Pipeline::with_gateway(
        stub_config(3, &["m3"]),
        stub.gateway,
        empty_index(),
        SpecSchema::default_parts(),
    )
    .unwrap();
    let result = pipeline.run_pipeline(&description()).await;
    assert_eq!(result.phase2_results.len(), 1);
    assert!(result.phase2_results[0].claims.is_empty());
    assert!(result.phase2_results[0].is_failure());
    assert!(result.final_spec.is_some());
}

#[tokio::test]
async fn invalid_consistency_pass_falls_back_to_draft() {
    let mut config = stub_config(3, &[]);
    config.synthesis_pass = true;
    let draft_only = {
        let result = run(
            stub_config(3, &[]),
            steps(vec![
                ("m1", Step::answer(valid_answer("steel", 0.9))),
                ("m2", Step::answer(valid_answer("steel", 0.9))),
                ("m3", Step::answer(valid_answer("brass", 0.9))),
            ]),
        )
        .await;
        result.final_spec.unwrap()
    };

    // m1 answers extraction and then garbage for the synthesis prompt.
    struct Garbage;
    #[async_trait::async_trait]
    impl partsynth::ModelBackend for Garbage {
        async fn complete(
            &self,
            _: &partsynth::ProviderConfig,
            request: &partsynth::PromptRequest,
        ) -> Result<String, AttemptError> {
            if request.user_text.contains("\nDRAFT:\n") {
                Ok("I cannot comply.".into())
            } else {
                Ok(valid_answer("steel", 0.9))
            }
        }
    }
    let mut stub = stub_gateway(steps(vec![
        ("m2", Step::answer(valid_answer("steel", 0.9))),
        ("m3", Step::answer(valid_answer("brass", 0.9))),
    ]));
    stub.gateway.register("m1", std::sync::Arc::new(Garbage));
    let pipeline =
        Pipeline::with_gateway(config, stub.gateway, empty_index(), SpecSchema::default_parts()).unwrap();
    let result = pipeline.run_pipeline(&description()).await;
    let spec = result.final_spec.unwrap();
    assert!(matches!(spec.synthesis_pass, SynthesisPass::FallbackToDraft { .. }));
    assert_eq!(spec.fields, draft_only.fields);
    assert!(result.synthesis_result.unwrap().is_failure());
}

#[tokio::test]
async fn retrieval_context_reaches_the_prompt() {
    let index = fixture_index().await;
    let stub = stub_gateway(steps(vec![
        ("m1", Step::answer(valid_answer("steel", 0.9))),
        ("m2", Step::answer(valid_answer("steel", 0.9))),
    ]));
    let pipeline =
        Pipeline::with_gateway(stub_config(2, &[]), stub.gateway, index, SpecSchema::default_parts()).unwrap();
    let description = &corpus()[0];
    let result = pipeline.run_pipeline(description).await;
    let hits = &result.context_used.extraction.hits;
    assert_eq!(hits.len(), 5);
    assert_eq!(hits[0].record_id, "KB-001");
    assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
}
