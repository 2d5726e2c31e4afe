mod common;

use std::sync::Arc;

use qsynth::gateway::{MockProvider, MockReply};
use qsynth::prompts::SELECTIVE_CONTEXT;
use qsynth::rag::PromptKind;
use qsynth::sandbox::ErrorCategory;

use common::rag_harness::*;

#[test]
fn low_score_uses_base_prompt() {
    let r = run(0.55, &[true], mock());
    let out = r.outcome.unwrap();
    assert!((out.retrieval.max_score - 0.55).abs() < 1e-6);
    assert_eq!(out.prompt_kind, PromptKind::Base);
    let prompts = generation_prompts(&r.mock);
    assert!(!prompts[0].contains(SELECTIVE_CONTEXT));
    assert!(!prompts[0].contains("qml.CNOT"));
    assert_eq!(out.expanded_query, EXPANDED);
}

#[test]
fn high_score_uses_rag_prompt_with_selective_context() {
    let r = run(0.85, &[true], mock());
    let out = r.outcome.unwrap();
    assert_eq!(out.prompt_kind, PromptKind::Rag);
    let prompts = generation_prompts(&r.mock);
    assert!(prompts[0].contains(
        "If retrieved examples are not relevant to this challenge, ignore them and rely on your own PennyLane knowledge."
    ));
    assert!(prompts[0].contains("STORED Implement an entangling circuit"));
    assert!(prompts[0].contains("qml.CNOT(wires=[0, 1])"));
}

#[test]
fn immediate_pass_stops_after_one_attempt() {
    let r = run(0.85, &[true], mock());
    let out = r.outcome.unwrap();
    assert_eq!(out.attempts.len(), 1);
    assert!(out.final_pass);
    assert_eq!(generation_prompts(&r.mock).len(), 1);
}

#[test]
fn fail_fail_pass_makes_three_generation_calls() {
    let r = run(0.85, &[false, false, true], mock());
    let out = r.outcome.unwrap();
    assert_eq!(generation_prompts(&r.mock).len(), 3);
    assert_eq!(out.attempts.len(), 3);
    assert!(out.final_pass);
    assert_eq!(
        out.attempts.iter().map(|a| a.iteration).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );
    assert_eq!(r.executor.executed().len(), 3);
}

#[test]
fn always_fail_stops_after_one_plus_t_attempts() {
    let r = run(0.85, &[], mock());
    let out = r.outcome.unwrap();
    assert_eq!(out.attempts.len(), 3);
    assert!(!out.final_pass);
    assert_eq!(generation_prompts(&r.mock).len(), 3);
    assert!(out.attempts.iter().all(|a| a.category == ErrorCategory::ReasoningError));
}

#[test]
fn repair_prompt_carries_previous_code_feedback_and_examples() {
    let r = run(0.85, &[false, true], mock());
    r.outcome.unwrap();
    let prompts = generation_prompts(&r.mock);
    let fix = &prompts[1];
    assert!(fix.contains("def circuit(x):\n    return x"));
    assert!(fix.contains("0 of 1 tests passed."));
    assert!(fix.contains("AssertionError: expected 1.0, got 0.0"));
    assert!(fix.contains("Return the input unchanged."));
    assert!(fix.contains("qml.CNOT(wires=[0, 1])"));
    assert!(fix.contains(SELECTIVE_CONTEXT));
}

#[test]
fn expansion_failure_falls_back_to_description() {
    let m = Arc::new(
        MockProvider::new()
            .rule(
                EXPAND,
                vec![MockReply::Failure {
                    error: qsynth::gateway::MockFailureKind::Fatal,
                    message: "down".into(),
                }],
            )
            .unwrap()
            .with_fallback(MockReply::text(SOLUTION)),
    );
    let out = run(0.85, &[true], m).outcome.unwrap();
    assert_eq!(out.expanded_query, "Return the input unchanged.");
    assert!(out.expansion_fallback);
}

#[test]
fn prose_reply_is_a_formatting_failure_without_execution() {
    let m = Arc::new(
        MockProvider::new()
            .rule(EXPAND, vec![MockReply::text(EXPANDED)])
            .unwrap()
            .with_fallback(MockReply::text("Sorry, I cannot help with that challenge today.")),
    );
    let r = run(0.85, &[], m);
    let out = r.outcome.unwrap();
    assert_eq!(out.attempts.len(), 3);
    assert!(out
        .attempts
        .iter()
        .all(|a| a.category == ErrorCategory::FormattingFailure && a.result.is_none()));
    assert!(r.executor.executed().is_empty());
}

#[test]
fn gateway_failure_keeps_partial_trace() {
    let m = Arc::new(
        MockProvider::new()
            .rule(EXPAND, vec![MockReply::text(EXPANDED)])
            .unwrap(),
    );
    m.push(MockReply::text(SOLUTION));
    m.push(MockReply::Failure {
        error: qsynth::gateway::MockFailureKind::Fatal,
        message: "quota".into(),
    });
    let r = run(0.85, &[false], m);
    let err = r.outcome.unwrap_err();
    let partial = err.partial().expect("partial trace");
    assert_eq!(partial.attempts.len(), 1);
    assert!(!partial.final_pass);
}

#[test]
fn solve_is_reproducible() {
    let a = run(0.85, &[false, true], mock()).outcome.unwrap();
    let b = run(0.85, &[false, true], mock()).outcome.unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
