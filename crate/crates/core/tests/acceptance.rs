//! One PASS/FAIL line per headline criterion. Runs without network access
//! or a Python interpreter; every model call is scripted.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qsynth::analyzer::{QuantumFeatureSet, Whitelist};
use qsynth::dedup::{dedup, estimate_jaccard, jaccard, shingle, DedupConfig, MinHasher, DEFAULT_SEED};
use qsynth::metrics::{bleu, codebleu, dataflow_from_features, pass_at_k, rouge_l_tokens, token_bleu, weighted_bleu};
use qsynth::prompts::SELECTIVE_CONTEXT;
use qsynth::rag::PromptKind;
use qsynth::retrieval::{EmbeddingProvider, EmbeddingVector, HashedBagProvider, VectorIndex};
use qsynth::sandbox::{classify_error, ErrorCategory, ErrorRules};
use qsynth::verify::Verdict;

use common::bleu_fixtures::*;
use common::rag_harness::{generation_prompts, mock, run};

type Check = Result<(), String>;
type CheckFn = fn() -> Check;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($fmt)+)),
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Check {
    ensure!(elapsed < limit, "took {elapsed:?}, limit {limit:?}");
    Ok(())
}

fn entry_32_golden() -> Check {
    let started = Instant::now();
    let (_, entry, mock) = common::golden_entry_32();
    let elapsed = started.elapsed();
    let r = &entry.report;
    ensure!(
        entry.verdict == Verdict::TransformedValid,
        "verdict {:?}",
        entry.verdict
    );
    ensure!(mock.request_count() == 1, "{} modernize calls", mock.request_count());
    ensure!(
        r.deprecated_calls == (2, Some(0)),
        "deprecated calls {:?}",
        r.deprecated_calls
    );
    let t = r.transformed_features.as_ref().ok_or("no transformed features")?;
    ensure!(
        (r.original_features.qml_call_count, t.qml_call_count) == (4, 4),
        "qml calls {} -> {}",
        r.original_features.qml_call_count,
        t.qml_call_count
    );
    ensure!(
        (r.original_features.measurement_count, t.measurement_count) == (1, 1),
        "measurements {} -> {}",
        r.original_features.measurement_count,
        t.measurement_count
    );
    within(elapsed, Duration::from_secs(1))
}

fn dedup_fixture() -> Check {
    let started = Instant::now();
    let cfg = DedupConfig::default();
    let j = jaccard(
        &shingle(common::LISTING_2).shingles,
        &shingle(common::ENTRY_265).shingles,
    );
    ensure!(j < 0.70, "fixture Jaccard {j}");
    let out = dedup([("32", common::LISTING_2), ("265", common::ENTRY_265)], &cfg);
    ensure!(out.retained == [0, 1], "retained {:?}", out.retained);
    let out = dedup(
        [
            ("32", common::LISTING_2),
            ("265", common::ENTRY_265),
            ("32-copy", common::LISTING_2),
        ],
        &cfg,
    );
    ensure!(out.retained == [0, 1], "retained {:?}", out.retained);
    ensure!(
        out.duplicates.len() == 1 && out.duplicates[0].removed_id == "32-copy" && out.duplicates[0].survivor_id == "32",
        "duplicates {:?}",
        out.duplicates
    );

    let hasher = MinHasher::new(DEFAULT_SEED);
    let pairs = common::random_shingle_pairs(200, 7);
    let close = pairs
        .iter()
        .filter(|(a, b)| {
            let va: Vec<u64> = a.iter().copied().collect();
            let vb: Vec<u64> = b.iter().copied().collect();
            let est = estimate_jaccard(&hasher.signature_of_hashes(&va), &hasher.signature_of_hashes(&vb));
            (est - jaccard(a, b)).abs() <= 0.10
        })
        .count();
    ensure!(
        close * 100 >= 95 * pairs.len(),
        "{close}/{} estimates within 0.10",
        pairs.len()
    );
    within(started.elapsed(), Duration::from_secs(10))
}

const GATES: &[&str] = &[
    "RX", "RY", "RZ", "Hadamard", "CNOT", "CZ", "Toffoli", "Rot", "SWAP", "PauliX",
];
const DEVICES: &[&str] = &["default.qubit", "lightning.qubit", "default.mixed"];
const RETURNS: &[&str] = &["expval", "probs", "var", "sample", "state"];

fn pick(rng: &mut ChaCha8Rng, pool: &[&str]) -> BTreeSet<String> {
    pool.iter()
        .filter(|_| rng.gen_bool(0.4))
        .map(|s| s.to_string())
        .collect()
}

fn random_features(rng: &mut ChaCha8Rng) -> QuantumFeatureSet {
    QuantumFeatureSet {
        gate_names: pick(rng, GATES),
        device_types: pick(rng, DEVICES),
        measurement_returns: pick(rng, RETURNS),
        ..QuantumFeatureSet::default()
    }
}

fn features(g: &[&str], d: &[&str], m: &[&str]) -> QuantumFeatureSet {
    let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    QuantumFeatureSet {
        gate_names: set(g),
        device_types: set(d),
        measurement_returns: set(m),
        ..QuantumFeatureSet::default()
    }
}

fn dataflow_oracle() -> Check {
    let a = features(&["RX", "CNOT"], &["default.qubit"], &["expval"]);
    let b = features(&["RY"], &["lightning.qubit"], &["probs"]);
    let c = features(&["RX", "CNOT"], &["default.qubit"], &[]);
    ensure!(dataflow_from_features(&a, &a) == 1.0, "identity");
    ensure!(dataflow_from_features(&a, &b) == 0.0, "disjoint");
    ensure!(
        dataflow_from_features(&c, &a) == 0.75,
        "3-of-4 gave {}",
        dataflow_from_features(&c, &a)
    );

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (h, r) = (random_features(&mut rng), random_features(&mut rng));
        let keys = |f: &QuantumFeatureSet| -> HashSet<String> {
            f.gate_names
                .iter()
                .chain(&f.device_types)
                .chain(&f.measurement_returns)
                .cloned()
                .collect()
        };
        let (x, y) = (keys(&h), keys(&r));
        let inter = x.intersection(&y).count();
        let union = x.union(&y).count();
        let oracle = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        let (ab, ba) = (dataflow_from_features(&h, &r), dataflow_from_features(&r, &h));
        ensure!((ab - ba).abs() <= 1e-12, "asymmetric: {ab} vs {ba}");
        ensure!((ab - oracle).abs() <= 1e-12, "{ab} vs oracle {oracle}");
    }
    Ok(())
}

fn random_circuit(rng: &mut ChaCha8Rng) -> String {
    let dev = DEVICES.choose(rng).unwrap();
    let name = ["circuit", "ansatz", "model"].choose(rng).unwrap();
    let mut code =
        format!("import pennylane as qml\n\ndev = qml.device('{dev}', wires=3)\n\n@qml.qnode(dev)\ndef {name}(x):\n");
    for _ in 0..rng.gen_range(1..8) {
        code.push_str(&format!(
            "    qml.{}(x, wires={})\n",
            GATES.choose(rng).unwrap(),
            rng.gen_range(0..3)
        ));
    }
    code.push_str(&format!("    return qml.{}(wires=0)\n", RETURNS.choose(rng).unwrap()));
    code
}

fn quantum_codebleu() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (h, r) = (random_circuit(&mut rng), random_circuit(&mut rng));
        let c = codebleu(&h, &r).map_err(|e| e.to_string())?;
        let mean = 0.25 * (c.token_bleu + c.weighted_bleu + c.ast_match + c.dataflow_match);
        ensure!(
            (c.codebleu - mean).abs() <= 1e-9,
            "codebleu {} vs mean {mean}",
            c.codebleu
        );
    }
    let listing = codebleu(common::LISTING_2, common::LISTING_2).map_err(|e| e.to_string())?;
    ensure!(
        (listing.codebleu - 1.0).abs() <= 1e-12,
        "identity gave {}",
        listing.codebleu
    );

    let tb = |h| token_bleu(h, MONO_R).map_err(|e| e.to_string());
    let wb = |h| weighted_bleu(h, MONO_R).map_err(|e| e.to_string());
    let (qml_tb, plain_tb) = (tb(MONO_QML)?, tb(MONO_PLAIN)?);
    let (qml_wb, plain_wb) = (wb(MONO_QML)?, wb(MONO_PLAIN)?);
    ensure!(
        (qml_tb - plain_tb).abs() < 1e-12,
        "token BLEU differs: {qml_tb} vs {plain_tb}"
    );
    ensure!(qml_wb >= plain_wb, "weighted BLEU not monotone: {qml_wb} < {plain_wb}");
    ensure!(
        (qml_wb - MONO_QML_WEIGHTED).abs() < 1e-6 && (plain_wb - MONO_PLAIN_WEIGHTED).abs() < 1e-6,
        "weighted values drifted"
    );

    let ws = |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_owned).collect() };
    for (h, r, expected) in FROZEN {
        let got = bleu(&ws(h), &ws(r)).map_err(|e| e.to_string())?;
        ensure!((got - expected).abs() < 1e-6, "{h:?}: {got} vs reference {expected}");
    }
    Ok(())
}

fn rouge_fixture() -> Check {
    let v = |s: &str| -> Vec<char> { s.chars().collect() };
    let f = rouge_l_tokens(&v("ace"), &v("abcde")).map_err(|e| e.to_string())?;
    ensure!(f == 0.75, "fixture gave {f}");
    let same = rouge_l_tokens(&v("abcde"), &v("abcde")).map_err(|e| e.to_string())?;
    ensure!(same == 1.0, "identity gave {same}");
    let disjoint = rouge_l_tokens(&v("xyz"), &v("abcde")).map_err(|e| e.to_string())?;
    ensure!(disjoint == 0.0, "disjoint gave {disjoint}");
    Ok(())
}

fn rounded(v: EmbeddingVector) -> Vec<f64> {
    v.values.into_iter().map(|x| x as f32 as f64).collect()
}

fn retrieval_consistency() -> Check {
    let started = Instant::now();
    let p = HashedBagProvider { dim: 768, seed: 11 };
    let err = |e: qsynth::retrieval::RetrievalError| e.to_string();

    let pairs = common::synthetic_pairs(100, 3);
    let index = VectorIndex::build(pairs.clone(), &p, 11).map_err(err)?;
    let (mut top1, mut top5) = (0, 0);
    for pair in &pairs {
        let r = index.query(&pair.instruction, &p, 5).map_err(err)?;
        top1 += usize::from(r.hits[0].pair_id == pair.id);
        top5 += usize::from(r.hits.iter().any(|h| h.pair_id == pair.id));
    }
    ensure!(top1 >= 95 && top5 == 100, "top-1 {top1}/100, top-5 {top5}/100");

    // exhaustive scan over the same float32 rows must agree exactly
    let pairs = common::synthetic_pairs(1000, 5);
    let index = VectorIndex::build(pairs.clone(), &p, 11).map_err(err)?;
    let rows: Vec<(Vec<f64>, f64)> = pairs
        .iter()
        .map(|x| {
            let v = rounded(p.embed(&x.embedding_text()).unwrap());
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            (v, n)
        })
        .collect();
    for q in pairs.iter().step_by(10).map(|x| x.instruction.as_str()) {
        let qv = p.embed(q).map_err(|e| e.to_string())?.values;
        let qn = qv.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut scan: Vec<(f64, &str)> = rows
            .iter()
            .zip(&pairs)
            .map(|((v, n), x)| {
                let dot: f64 = v.iter().zip(&qv).map(|(a, b)| a * b).sum();
                ((dot / (qn * n)).clamp(-1.0, 1.0), x.id.as_str())
            })
            .collect();
        scan.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let got = index.query(q, &p, 5).map_err(err)?;
        let got: Vec<(f64, &str)> = got.hits.iter().map(|h| (h.score, h.pair_id.as_str())).collect();
        ensure!(got == scan[..5], "{q:?}: index {got:?} vs scan {:?}", &scan[..5]);
    }
    within(started.elapsed(), Duration::from_secs(30))
}

fn solve_loop_contract() -> Check {
    let low = run(0.55, &[true], mock()).outcome.map_err(|e| e.to_string())?;
    ensure!(low.prompt_kind == PromptKind::Base, "0.55 gave {:?}", low.prompt_kind);

    let high = run(0.85, &[true], mock());
    let out = high.outcome.map_err(|e| e.to_string())?;
    ensure!(out.prompt_kind == PromptKind::Rag, "0.85 gave {:?}", out.prompt_kind);
    ensure!(
        generation_prompts(&high.mock)[0].contains(SELECTIVE_CONTEXT),
        "selective-context sentence missing"
    );

    let ffp = run(0.85, &[false, false, true], mock());
    let out = ffp.outcome.map_err(|e| e.to_string())?;
    let calls = generation_prompts(&ffp.mock).len();
    ensure!(
        calls == 3 && out.final_pass,
        "fail-fail-pass: {calls} calls, final_pass {}",
        out.final_pass
    );

    let never = run(0.85, &[], mock());
    let out = never.outcome.map_err(|e| e.to_string())?;
    ensure!(
        out.attempts.len() == 3 && !out.final_pass && generation_prompts(&never.mock).len() == 3,
        "always-fail: {} attempts",
        out.attempts.len()
    );
    Ok(())
}

fn pass_at_k_aggregation() -> Check {
    let mut matrix = vec![vec![false; 5]; 25];
    for (i, row) in matrix.iter_mut().enumerate().take(14) {
        row[i % 5] = true;
    }
    let p5 = pass_at_k(&matrix, 5).map_err(|e| e.to_string())?;
    ensure!(p5 == 0.56, "14 of 25 gave {p5}");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let n = rng.gen_range(1..30);
        let m: Vec<Vec<bool>> = (0..n).map(|_| (0..5).map(|_| rng.gen_bool(0.3)).collect()).collect();
        let (a, b) = (pass_at_k(&m, 1).unwrap(), pass_at_k(&m, 5).unwrap());
        ensure!(b >= a, "pass@5 {b} < pass@1 {a}");
    }
    Ok(())
}

fn error_classification() -> Check {
    let wl = Whitelist::bundled();
    let rules = ErrorRules::bundled();
    let mut seen = BTreeSet::new();
    for (expected, r, code) in common::failure_fixtures() {
        let got = classify_error(&r, code, &wl, &rules);
        ensure!(
            got.as_str() == expected,
            "{expected} fixture classified {}",
            got.as_str()
        );
        seen.insert(got);
    }
    ensure!(
        seen == ErrorCategory::FAILURES.into_iter().collect(),
        "not one-to-one: {seen:?}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..200 {
        let (r, code, expected) = common::random_classification_case(&mut rng);
        let got = classify_error(&r, code, &wl, &rules);
        ensure!(got == expected, "case {i}: {got:?} vs {expected:?}");
    }
    Ok(())
}

fn profile_composition() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus.jsonl");
    let mut text = String::new();
    for (cat, n) in [("official", 1934), ("community", 8245), ("archive", 3210)] {
        for i in 0..n {
            text.push_str(&format!("{{\"id\":\"{cat}-{i}\",\"source_category\":\"{cat}\"}}\n"));
        }
    }
    std::fs::write(&corpus, text).map_err(|e| e.to_string())?;
    let out_path = dir.path().join("profile.json");
    let out = Command::new(env!("CARGO_BIN_EXE_qsynth"))
        .arg("profile")
        .arg("-i")
        .arg(&corpus)
        .arg("-o")
        .arg(&out_path)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let p: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    for (cat, expected) in [("official", 14.4), ("community", 61.6), ("archive", 24.0)] {
        let got = p["categories"][cat]["percent"].as_f64().unwrap_or(f64::NAN);
        ensure!((got - expected).abs() <= 0.1, "{cat}: {got} vs {expected}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let checks: [(&str, CheckFn); 10] = [
        ("entry 32 golden pipeline", entry_32_golden),
        ("dedup fixture and MinHash accuracy", dedup_fixture),
        ("dataflow match oracle", dataflow_oracle),
        ("quantum CodeBLEU", quantum_codebleu),
        ("ROUGE-L fixture", rouge_fixture),
        ("retrieval consistency", retrieval_consistency),
        ("solve loop contract", solve_loop_contract),
        ("pass@k aggregation", pass_at_k_aggregation),
        ("error classification", error_classification),
        ("profile composition", profile_composition),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(()) => println!("PASS {name} ({ms} ms)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({ms} ms): {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
