#![allow(dead_code)]

pub mod bleu_fixtures;
pub mod rag_harness;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qsynth::extract::{extract, ExtractedFunction, SourceCategory, SourceRecord};
use qsynth::gateway::{Gateway, MockProvider, RetryPolicy};
use qsynth::prompts::PromptSet;
use qsynth::retrieval::IndexedPair;
use qsynth::sandbox::{ErrorCategory, ExecutionResult, ExitKind, TestOutcome};
use qsynth::verify::{verify_entry, ModernizeMode, Thresholds, VerifiedEntry};

pub const CLASSIFIER: &str = include_str!("../fixtures/entries/quantum_classifier.py");
pub const LISTING_1: &str = include_str!("../fixtures/entries/listing1_raw.py");
pub const LISTING_2: &str = include_str!("../fixtures/entries/listing2_modernized.py");
pub const ENTRY_265: &str = include_str!("../fixtures/entries/entry_265.py");

pub fn quiet_gateway(mock: Arc<MockProvider>) -> Gateway {
    Gateway::new(mock).with_retry(RetryPolicy {
        max_retries: 0,
        base_delay_ms: 0,
        max_delay_ms: 0,
    })
}

pub fn classifier_record() -> SourceRecord {
    SourceRecord {
        id: "entry-32".into(),
        origin_url: "https://example.org/quantum_classifier.py".into(),
        source_category: SourceCategory::Community,
        raw_text: CLASSIFIER.into(),
    }
}

pub fn classifier_functions() -> Vec<ExtractedFunction> {
    extract(&classifier_record()).unwrap().functions
}

/// Extract the classifier, modernize its circuit with a mock that answers
/// with the modern listing, and verify.
pub fn golden_entry_32() -> (ExtractedFunction, VerifiedEntry, Arc<MockProvider>) {
    let circuit = classifier_functions()
        .into_iter()
        .find(|f| f.name == "quantum_circuit")
        .expect("circuit extracted");
    let mock = Arc::new(MockProvider::queued([LISTING_2]));
    let gw = quiet_gateway(mock.clone());
    let prompts = PromptSet::bundled();
    let entry = verify_entry(
        &circuit,
        Some((&gw, &prompts, "mock")),
        ModernizeMode::Deprecated,
        &Thresholds::default(),
    );
    (circuit, entry, mock)
}

/// Pairs of random token sets over a small vocabulary, spread across the
/// whole Jaccard range.
pub fn random_shingle_pairs(n: usize, seed: u64) -> Vec<(BTreeSet<u64>, BTreeSet<u64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let size = rng.gen_range(20..200);
            let a: BTreeSet<u64> = (0..size).map(|_| rng.gen_range(0..400u64)).collect();
            let keep = rng.gen_range(0.0..=1.0);
            let mut b: BTreeSet<u64> = a.iter().copied().filter(|_| rng.gen_bool(keep)).collect();
            let extra = rng.gen_range(0..size);
            b.extend((0..extra).map(|_| rng.gen_range(0..400u64)));
            if b.is_empty() {
                b.insert(0);
            }
            (a, b)
        })
        .collect()
}

const OPS: &[&str] = &[
    "RX", "RY", "RZ", "Hadamard", "CNOT", "CZ", "PauliX", "Toffoli", "SWAP", "CRX", "IsingXX", "Rot",
];
const MEAS: &[&str] = &["expval", "probs", "var", "sample", "state"];
const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "zu", "pe", "qua", "bri", "dex", "fon", "gal",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    (0..3).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// Synthetic instruction/code pairs with unique function names.
pub fn synthetic_pairs(n: usize, seed: u64) -> Vec<IndexedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let name = format!("{}_{}", word(&mut rng), word(&mut rng));
        if !seen.insert(name.clone()) {
            continue;
        }
        let wires = rng.gen_range(1..9);
        let a = *OPS.choose(&mut rng).unwrap();
        let b = *OPS.choose(&mut rng).unwrap();
        let m = *MEAS.choose(&mut rng).unwrap();
        let instruction = format!(
            "Implement {name} on {wires} wires applying {a} and then {b}, returning the {m} of the final state."
        );
        let code = format!(
            "import pennylane as qml\n\ndef {name}(x):\n    qml.{a}(x, wires=0)\n    qml.{b}(wires=[0, {w}])\n    return qml.{m}(wires={w})\n",
            w = wires - 1
        );
        out.push(IndexedPair {
            id: format!("pair-{:04}", out.len()),
            instruction,
            code,
        });
    }
    out
}

pub fn result(tests: &[(&str, bool, &str)], exit_kind: ExitKind, stderr: &str) -> ExecutionResult {
    let tests = tests
        .iter()
        .map(|(n, p, m)| TestOutcome {
            name: n.to_string(),
            passed: *p,
            message: m.to_string(),
        })
        .collect();
    ExecutionResult::from_tests(tests, exit_kind, String::new(), stderr.into(), 0.05)
}

/// One constructed failure per category, paired with the solution code.
pub fn failure_fixtures() -> Vec<(&'static str, ExecutionResult, Option<&'static str>)> {
    const OK_CODE: &str =
        "import pennylane as qml\n\ndef circuit(x):\n    qml.RX(x, wires=0)\n    return qml.expval(qml.PauliZ(0))\n";
    vec![
        (
            "formatting_failure",
            result(&[("import", false, "  File \"solution.py\", line 3\n    def circuit(x)\n                 ^\nSyntaxError: expected ':'")], ExitKind::Ok, ""),
            Some("import pennylane as qml\n\ndef circuit(x)\n    pass\n"),
        ),
        (
            "hallucination",
            result(
                &[("test_circuit", false, "AttributeError: module 'pennylane' has no attribute 'QuantumAdder'")],
                ExitKind::Ok,
                "",
            ),
            Some("import pennylane as qml\n\ndef circuit(x):\n    qml.QuantumAdder(x, wires=[0, 1])\n    return qml.expval(qml.PauliZ(0))\n"),
        ),
        (
            "reasoning_error",
            result(&[("test_circuit", false, "AssertionError: expected 0.5403, got 0.8415")], ExitKind::Ok, ""),
            Some(OK_CODE),
        ),
        (
            "api_misuse",
            result(
                &[(
                    "test_circuit",
                    false,
                    "pennylane.wires.WireError: Did not find some of the wires (3,) on device with wires (0, 1)",
                )],
                ExitKind::Ok,
                "",
            ),
            Some(OK_CODE),
        ),
        ("timeout", result(&[], ExitKind::Timeout, ""), Some(OK_CODE)),
    ]
}

/// Proptest configuration with a frozen seed.
pub fn fixed_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x5eed_0070),
        failure_persistence: None,
        ..proptest::test_runner::Config::default()
    }
}

const CLEAN: &str =
    "import pennylane as qml\n\ndef f(x):\n    qml.RX(x, wires=0)\n    return qml.expval(qml.PauliZ(0))\n";
const INVENTED: &str =
    "import pennylane as qml\n\ndef f(x):\n    qml.MagicRotation(x, wires=0)\n    return qml.expval(qml.PauliZ(0))\n";
const WIRE_ERROR: &str = "pennylane.wires.WireError: Did not find some of the wires (5,) on device with wires (0, 1)";

/// A random failure mix and the category the precedence order assigns it:
/// timeout, formatting, hallucination, API misuse, reasoning error.
pub fn random_classification_case(rng: &mut ChaCha8Rng) -> (ExecutionResult, Option<&'static str>, ErrorCategory) {
    let timeout = rng.gen_bool(0.15);
    let no_code = rng.gen_bool(0.1);
    let syntax = rng.gen_bool(0.15);
    let invented = rng.gen_bool(0.25);
    let wire = rng.gen_bool(0.3);
    let all_pass = !timeout && rng.gen_bool(0.1);

    let code = if no_code {
        None
    } else if invented {
        Some(INVENTED)
    } else {
        Some(CLEAN)
    };
    let r = if timeout {
        result(&[], ExitKind::Timeout, "")
    } else if all_pass {
        result(&[("test_a", true, ""), ("test_b", true, "")], ExitKind::Ok, "")
    } else if syntax {
        result(&[("import", false, "SyntaxError: invalid syntax")], ExitKind::Ok, "")
    } else {
        let msg = if wire {
            WIRE_ERROR
        } else {
            "AssertionError: expected 1.0, got 0.0"
        };
        result(&[("test_a", true, ""), ("test_b", false, msg)], ExitKind::Ok, "")
    };
    let expected = if all_pass {
        ErrorCategory::None
    } else if timeout {
        ErrorCategory::Timeout
    } else if no_code || syntax {
        ErrorCategory::FormattingFailure
    } else if invented {
        ErrorCategory::Hallucination
    } else if wire {
        ErrorCategory::ApiMisuse
    } else {
        ErrorCategory::ReasoningError
    };
    (r, code, expected)
}
