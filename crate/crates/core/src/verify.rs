//! Stage 2: optional API modernization plus four-layer verification.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::analyzer::{self, QuantumFeatureSet};
use crate::extract::{ExtractedFunction, SourceCategory};
use crate::gateway::{strip_fences, ChatRequest, Gateway, GatewayError};
use crate::prompts::{self, PromptSet};
use crate::pysyntax::Module;

const NUMERIC_FAMILY: [&str; 6] = ["numpy", "scipy", "jax", "torch", "tensorflow", "autograd"];
const FRAMEWORK: &str = "pennylane";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub max_gate_change: f64,
    pub max_qml_call_change: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            max_gate_change: 0.20,
            max_qml_call_change: 0.50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Syntax,
    Imports,
    QuantumPreservation,
    SemanticStructure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerResult {
    pub layer: Layer,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    OriginalValid,
    TransformedValid,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub layer_results: Vec<LayerResult>,
    pub verdict: Verdict,
    pub fallback_applied: bool,
    pub original_features: QuantumFeatureSet,
    pub transformed_features: Option<QuantumFeatureSet>,
    /// Calls into the deprecated `templates.` namespace, original then transformed.
    pub deprecated_calls: (usize, Option<usize>),
}

impl VerificationReport {
    pub fn layer(&self, layer: Layer) -> &LayerResult {
        self.layer_results
            .iter()
            .find(|r| r.layer == layer)
            .expect("all four layers are always reported")
    }

    pub fn all_passed(&self) -> bool {
        self.layer_results.iter().all(|r| r.passed)
    }
}

/// `|new - orig| / max(orig, 1)`.
pub fn relative_change(orig: usize, new: usize) -> f64 {
    orig.abs_diff(new) as f64 / orig.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnShape {
    None,
    Single,
    List,
    Tuple,
    Dict,
}

/// Shapes of every return statement, in source order.
pub fn return_shapes(module: &Module) -> Vec<ReturnShape> {
    module
        .root
        .descendants()
        .filter(|n| n.kind == "Return")
        .map(|r| match r.children.first().map(|e| e.kind) {
            None => ReturnShape::None,
            Some("List" | "ListComp") => ReturnShape::List,
            Some("Tuple") => ReturnShape::Tuple,
            Some("Dict" | "DictComp") => ReturnShape::Dict,
            Some(_) => ReturnShape::Single,
        })
        .collect()
}

fn required_imports(original: &QuantumFeatureSet) -> BTreeSet<String> {
    original
        .imports
        .iter()
        .filter(|m| *m == FRAMEWORK || NUMERIC_FAMILY.contains(&m.as_str()))
        .cloned()
        .collect()
}

fn deprecated_count(module: &Module) -> usize {
    analyzer::qml_calls(module).iter().filter(|c| c.is_deprecated()).count()
}

pub fn verify(original: &str, transformed: Option<&str>) -> VerificationReport {
    verify_with(original, transformed, &Thresholds::default())
}

pub fn verify_with(original: &str, transformed: Option<&str>, t: &Thresholds) -> VerificationReport {
    let orig_module = Module::parse(original).ok();
    let original_features = orig_module.as_ref().map(analyzer::features_of).unwrap_or_default();
    let orig_deprecated = orig_module.as_ref().map_or(0, deprecated_count);

    let Some(orig_module) = orig_module else {
        let fail = |layer| LayerResult {
            layer,
            passed: false,
            detail: "original does not parse".into(),
        };
        return VerificationReport {
            layer_results: vec![
                fail(Layer::Syntax),
                fail(Layer::Imports),
                fail(Layer::QuantumPreservation),
                fail(Layer::SemanticStructure),
            ],
            verdict: Verdict::Rejected,
            fallback_applied: transformed.is_some(),
            original_features,
            transformed_features: None,
            deprecated_calls: (0, None),
        };
    };

    let candidate = transformed.unwrap_or(original);
    let (layer_results, transformed_features, new_deprecated) = match Module::parse(candidate) {
        Err(e) => {
            let skipped = |layer| LayerResult {
                layer,
                passed: false,
                detail: "not evaluated: transformed code does not parse".into(),
            };
            (
                vec![
                    LayerResult {
                        layer: Layer::Syntax,
                        passed: false,
                        detail: format!("line {}: {}", e.line, e.message),
                    },
                    skipped(Layer::Imports),
                    skipped(Layer::QuantumPreservation),
                    skipped(Layer::SemanticStructure),
                ],
                None,
                None,
            )
        }
        Ok(m) => {
            let f = analyzer::features_of(&m);
            let layers = vec![
                LayerResult {
                    layer: Layer::Syntax,
                    passed: true,
                    detail: "parses".into(),
                },
                import_layer(&original_features, &f),
                quantum_layer(&original_features, &f, t),
                structure_layer(&orig_module, &m),
            ];
            let dep = deprecated_count(&m);
            (layers, Some(f), Some(dep))
        }
    };

    let all_passed = layer_results.iter().all(|r| r.passed);
    let (verdict, fallback_applied) = match (transformed.is_some(), all_passed) {
        (true, true) => (Verdict::TransformedValid, false),
        (false, true) => (Verdict::OriginalValid, false),
        // the original already parsed, so Layers 1-2 hold for it alone
        (_, false) => (Verdict::OriginalValid, true),
    };
    VerificationReport {
        layer_results,
        verdict,
        fallback_applied,
        original_features,
        transformed_features: transformed.and(transformed_features),
        deprecated_calls: (orig_deprecated, transformed.and(new_deprecated)),
    }
}

fn import_layer(orig: &QuantumFeatureSet, new: &QuantumFeatureSet) -> LayerResult {
    let missing: Vec<_> = required_imports(orig).difference(&new.imports).cloned().collect();
    LayerResult {
        layer: Layer::Imports,
        passed: missing.is_empty(),
        detail: if missing.is_empty() {
            "required imports present".into()
        } else {
            format!("missing imports: {}", missing.join(", "))
        },
    }
}

fn quantum_layer(orig: &QuantumFeatureSet, new: &QuantumFeatureSet, t: &Thresholds) -> LayerResult {
    let gate = relative_change(orig.gate_count, new.gate_count);
    let calls = relative_change(orig.qml_call_count, new.qml_call_count);
    let mut problems = Vec::new();
    if gate > t.max_gate_change {
        problems.push(format!(
            "gate count {}→{} changes by {:.3} > {}",
            orig.gate_count, new.gate_count, gate, t.max_gate_change
        ));
    }
    if orig.measurement_count != new.measurement_count || orig.measurement_returns != new.measurement_returns {
        problems.push(format!(
            "measurements {}→{} ({:?}→{:?})",
            orig.measurement_count, new.measurement_count, orig.measurement_returns, new.measurement_returns
        ));
    }
    if calls > t.max_qml_call_change {
        problems.push(format!(
            "qml calls {}→{} change by {:.3} > {}",
            orig.qml_call_count, new.qml_call_count, calls, t.max_qml_call_change
        ));
    }
    LayerResult {
        layer: Layer::QuantumPreservation,
        passed: problems.is_empty(),
        detail: if problems.is_empty() {
            format!(
                "gates {}→{}, qml calls {}→{}, measurements {}→{}",
                orig.gate_count,
                new.gate_count,
                orig.qml_call_count,
                new.qml_call_count,
                orig.measurement_count,
                new.measurement_count
            )
        } else {
            problems.join("; ")
        },
    }
}

fn structure_layer(orig: &Module, new: &Module) -> LayerResult {
    let a = return_shapes(orig);
    let b = return_shapes(new);
    LayerResult {
        layer: Layer::SemanticStructure,
        passed: a == b,
        detail: format!("returns {a:?} → {b:?}"),
    }
}

/// Asks the gateway to replace deprecated API calls.
pub fn modernize(code: &str, gateway: &Gateway, prompts: &PromptSet, model_id: &str) -> Result<String, GatewayError> {
    let req = ChatRequest::new(model_id)
        .system(prompts.template(prompts::MODERNIZE_SYSTEM))
        .user(prompts.render(prompts::MODERNIZE_USER, &[("code", code)]));
    gateway.chat(&req).map(|r| strip_fences(&r))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModernizeMode {
    Off,
    /// Only code that calls into the deprecated namespace.
    #[default]
    Deprecated,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedEntry {
    pub id: String,
    pub parent_id: String,
    pub name: String,
    pub source_category: SourceCategory,
    pub origin_url: String,
    pub code: String,
    pub verdict: Verdict,
    pub features: QuantumFeatureSet,
    pub report: VerificationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modernize_error: Option<String>,
}

/// Runs Stage 2 over one extracted function. The gateway, when given, is
/// used according to `mode`; gateway failures keep the original code.
pub fn verify_entry(
    f: &ExtractedFunction,
    gateway: Option<(&Gateway, &PromptSet, &str)>,
    mode: ModernizeMode,
    t: &Thresholds,
) -> VerifiedEntry {
    let wants = match mode {
        ModernizeMode::Off => false,
        ModernizeMode::All => true,
        ModernizeMode::Deprecated => Module::parse(&f.code).is_ok_and(|m| deprecated_count(&m) > 0),
    };
    let mut modernize_error = None;
    let transformed = match gateway {
        Some((gw, prompts, model)) if wants => match modernize(&f.code, gw, prompts, model) {
            Ok(code) => Some(code),
            Err(e) => {
                log::warn!("{}: modernization failed, keeping original: {e}", f.id);
                modernize_error = Some(e.to_string());
                None
            }
        },
        _ => None,
    };
    let mut report = verify_with(&f.code, transformed.as_deref(), t);
    if modernize_error.is_some() && report.verdict != Verdict::Rejected {
        report.fallback_applied = true;
    }
    let (code, features) = match (report.verdict, transformed) {
        (Verdict::TransformedValid, Some(code)) => {
            let feats = report.transformed_features.clone().unwrap_or_default();
            (code, feats)
        }
        _ => (f.code.clone(), report.original_features.clone()),
    };
    VerifiedEntry {
        id: f.id.clone(),
        parent_id: f.parent_id.clone(),
        name: f.name.clone(),
        source_category: f.source_category,
        origin_url: f.origin_url.clone(),
        code,
        verdict: report.verdict,
        features,
        report,
        modernize_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RAW: &str = "import pennylane as qml\n\ndef quantum_circuit(inputs, weights):\n    qml.templates.AngleEmbedding(inputs, wires=range(n_qubits))\n    qml.templates.StronglyEntanglingLayers(weights, wires=range(n_qubits))\n    return [qml.expval(qml.PauliZ(i)) for i in range(n_qubits)]\n";

    fn modern() -> String {
        RAW.replace("qml.templates.", "qml.")
    }

    #[test]
    fn modernized_entry_is_transformed_valid() {
        let r = verify(RAW, Some(&modern()));
        assert_eq!(r.verdict, Verdict::TransformedValid);
        assert!(!r.fallback_applied);
        assert_eq!(r.deprecated_calls, (2, Some(0)));
        let t = r.transformed_features.as_ref().unwrap();
        assert_eq!((r.original_features.qml_call_count, t.qml_call_count), (4, 4));
        assert_eq!((r.original_features.measurement_count, t.measurement_count), (1, 1));
    }

    #[test]
    fn dropped_return_falls_back() {
        let broken = modern().replace("return [", "x = [");
        let r = verify(RAW, Some(&broken));
        assert!(!r.layer(Layer::SemanticStructure).passed);
        assert!(r.fallback_applied);
        assert_eq!(r.verdict, Verdict::OriginalValid);
    }

    #[test]
    fn gate_delta_threshold() {
        let gates = |n: usize| {
            let mut s = String::from("def c():\n");
            for i in 0..n {
                s.push_str(&format!("    qml.RX(0.1, wires={i})\n"));
            }
            s.push_str("    return qml.state()\n");
            s
        };
        let r = verify(&gates(10), Some(&gates(7)));
        assert!((relative_change(10, 7) - 0.30).abs() < 1e-12);
        assert!(!r.layer(Layer::QuantumPreservation).passed);
        assert!(r.fallback_applied);
        // 0.20 is inclusive
        assert!(
            verify(&gates(10), Some(&gates(8)))
                .layer(Layer::QuantumPreservation)
                .passed
        );
        assert!(
            verify(&gates(10), Some(&gates(12)))
                .layer(Layer::QuantumPreservation)
                .passed
        );
        assert!(
            !verify(&gates(10), Some(&gates(13)))
                .layer(Layer::QuantumPreservation)
                .passed
        );
    }

    #[test]
    fn zero_original_guard() {
        assert_eq!(relative_change(0, 0), 0.0);
        assert_eq!(relative_change(0, 1), 1.0);
        let r = verify(
            "def f():\n    return 1\n",
            Some("def f():\n    qml.RX(0.1, wires=0)\n    return 1\n"),
        );
        assert!(!r.layer(Layer::QuantumPreservation).passed);
    }

    #[test]
    fn measurement_change_fails() {
        let other = modern().replace("qml.expval(", "qml.var(");
        assert!(!verify(RAW, Some(&other)).layer(Layer::QuantumPreservation).passed);
    }

    #[test]
    fn missing_framework_import_fails() {
        let no_import = modern().replace("import pennylane as qml\n", "");
        let r = verify(RAW, Some(&no_import));
        assert!(!r.layer(Layer::Imports).passed);
        assert_eq!(r.verdict, Verdict::OriginalValid);
    }

    #[test]
    fn unparseable_transform_and_original() {
        let r = verify(RAW, Some("def broken(:\n"));
        assert!(!r.layer(Layer::Syntax).passed);
        assert_eq!(r.verdict, Verdict::OriginalValid);
        assert!(r.fallback_applied);
        let r = verify("def broken(:\n", Some(RAW));
        assert_eq!(r.verdict, Verdict::Rejected);
    }

    #[test]
    fn original_alone() {
        let r = verify(RAW, None);
        assert_eq!(r.verdict, Verdict::OriginalValid);
        assert!(!r.fallback_applied);
        assert!(r.transformed_features.is_none());
        assert_eq!(verify(RAW, Some(RAW)).verdict, Verdict::TransformedValid);
    }

    #[test]
    fn return_shape_kinds() {
        let m = Module::parse("def f():\n    return\n    return 1\n    return [1]\n    return (1, 2)\n    return {}\n    return [i for i in x]\n").unwrap();
        use ReturnShape::*;
        assert_eq!(return_shapes(&m), vec![None, Single, List, Tuple, Dict, List]);
    }
}
