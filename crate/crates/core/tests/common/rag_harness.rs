//! Scripted single-pair setup for driving the RAG solve loop.

use std::sync::Arc;

use qsynth::analyzer::Whitelist;
use qsynth::challenge::{ChallengeTask, TestSpec};
use qsynth::gateway::{Gateway, MockProvider, MockReply, RetryPolicy};
use qsynth::prompts::PromptSet;
use qsynth::rag::{Pipeline, PipelineConfig, SolveError};
use qsynth::retrieval::{EmbeddingProvider, EmbeddingVector, IndexedPair, ProviderError, VectorIndex};
use qsynth::sandbox::{ErrorRules, ScriptedExecutor};

pub const EXPAND: &str = "^Rewrite the following";
pub const EXPANDED: &str = "AngleEmbedding StronglyEntanglingLayers expval PauliZ";
pub const SOLUTION: &str = "```python\ndef circuit(x):\n    return x\n```";

/// Stored pair sits on the first axis; every query sits at a fixed cosine
/// from it.
pub struct FixedAngle(pub f64);

impl EmbeddingProvider for FixedAngle {
    fn id(&self) -> String {
        "fixed-angle".into()
    }
    fn dim(&self) -> usize {
        2
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let values = if text.starts_with("STORED") {
            vec![1.0, 0.0]
        } else {
            vec![self.0, (1.0 - self.0 * self.0).sqrt()]
        };
        Ok(EmbeddingVector {
            values,
            provider_id: self.id(),
        })
    }
}

pub fn index(provider: &FixedAngle) -> VectorIndex {
    let pair = IndexedPair {
        id: "pair-1".into(),
        instruction: "STORED Implement an entangling circuit".into(),
        code: "qml.CNOT(wires=[0, 1])".into(),
    };
    VectorIndex::build(vec![pair], provider, 0).unwrap()
}

pub fn task() -> ChallengeTask {
    ChallengeTask {
        id: "toy".into(),
        year: "2024".into(),
        description: "Return the input unchanged.".into(),
        template_code: "def circuit(x):\n    pass\n".into(),
        test_spec: TestSpec {
            tests_source: "def test_identity():\n    pass\n".into(),
            ..TestSpec::default()
        },
        reference_code: None,
    }
}

pub fn gateway(mock: Arc<MockProvider>) -> Gateway {
    Gateway::new(mock).with_retry(RetryPolicy {
        max_retries: 0,
        base_delay_ms: 0,
        max_delay_ms: 0,
    })
}

pub fn mock() -> Arc<MockProvider> {
    Arc::new(
        MockProvider::new()
            .rule(EXPAND, vec![MockReply::text(EXPANDED)])
            .unwrap()
            .with_fallback(MockReply::text(SOLUTION)),
    )
}

pub struct Run {
    pub outcome: Result<qsynth::rag::SolveOutcome, SolveError>,
    pub mock: Arc<MockProvider>,
    pub executor: ScriptedExecutor,
}

pub fn run(cosine: f64, flags: &[bool], mock: Arc<MockProvider>) -> Run {
    let provider = FixedAngle(cosine);
    let idx = index(&provider);
    let gw = gateway(mock.clone());
    let prompts = PromptSet::bundled();
    let executor = ScriptedExecutor::from_flags(flags.iter().copied());
    let wl = Whitelist::bundled();
    let rules = ErrorRules::bundled();
    let pipeline = Pipeline {
        index: &idx,
        embedder: &provider,
        gateway: &gw,
        prompts: &prompts,
        executor: &executor,
        whitelist: &wl,
        rules: &rules,
        cfg: PipelineConfig::default(),
    };
    let outcome = pipeline.solve(&task());
    Run {
        outcome,
        mock,
        executor,
    }
}

pub fn generation_prompts(mock: &MockProvider) -> Vec<String> {
    mock.requests()
        .into_iter()
        .map(|r| r.messages[0].content.clone())
        .filter(|p| !p.starts_with("Rewrite the following"))
        .collect()
}
