//! Quantum feature extraction for PennyLane code.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pysyntax::{Module, Node, SyntaxError};

/// Measurement call names recognised in return expressions.
pub const MEASUREMENTS: [&str; 7] = ["expval", "var", "probs", "sample", "counts", "state", "density_matrix"];

/// Framework entry points that are neither gates nor measurements.
const UTILITY_CALLS: [&str; 12] = [
    "qnode",
    "QNode",
    "grad",
    "jacobian",
    "draw",
    "draw_mpl",
    "specs",
    "matrix",
    "vjp",
    "jvp",
    "set_shots",
    "simplify",
];
const UTILITY_PREFIXES: [&str; 4] = ["numpy.", "math.", "transforms.", "workflow."];

const FRAMEWORK_MODULE: &str = "pennylane";
const DEFAULT_ALIAS: &str = "qml";
const DEPRECATED_PREFIX: &str = "templates.";

const BUNDLED_WHITELIST: &str = include_str!("../assets/whitelist.txt");

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantumFeatureSet {
    pub gate_names: BTreeSet<String>,
    pub device_types: BTreeSet<String>,
    pub measurement_returns: BTreeSet<String>,
    pub qml_call_count: usize,
    pub gate_count: usize,
    pub measurement_count: usize,
    pub imports: BTreeSet<String>,
}

impl QuantumFeatureSet {
    /// Gate names, device types and measurement returns as one set.
    pub fn quantum_keys(&self) -> BTreeSet<String> {
        self.gate_names
            .iter()
            .chain(&self.device_types)
            .chain(&self.measurement_returns)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Gate,
    Device,
    Measurement,
    Utility,
}

/// One resolved framework call site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QmlCall {
    /// Dotted path below the framework root, e.g. `RX` or `templates.AngleEmbedding`.
    pub head: String,
    pub kind: CallKind,
    pub in_return: bool,
    pub device_name: Option<String>,
    pub start: usize,
}

impl QmlCall {
    pub fn is_deprecated(&self) -> bool {
        self.head.starts_with(DEPRECATED_PREFIX)
    }
}

/// How names in a module map into the framework namespace.
#[derive(Debug, Clone, Default)]
pub struct FrameworkBindings {
    /// Names bound to the framework module or one of its submodules.
    modules: BTreeMap<String, String>,
    /// Names bound by `from pennylane[.x] import name`.
    symbols: BTreeMap<String, String>,
}

impl FrameworkBindings {
    pub fn of(module: &Module) -> Self {
        let mut b = Self::default();
        b.modules.insert(DEFAULT_ALIAS.to_owned(), String::new());
        for node in module.root.descendants() {
            match node.kind {
                "Import" => {
                    for alias in &node.children {
                        let Some(name) = alias.name.as_deref() else { continue };
                        let Some(sub) = framework_subpath(name) else { continue };
                        match alias.value.as_deref() {
                            Some(asname) => {
                                b.modules.insert(asname.to_owned(), sub);
                            }
                            // `import pennylane.x` binds `pennylane` itself
                            None => {
                                b.modules.insert(FRAMEWORK_MODULE.to_owned(), String::new());
                            }
                        }
                    }
                }
                "ImportFrom" if node.op != Some("relative") => {
                    let Some(sub) = node.value.as_deref().and_then(framework_subpath) else {
                        continue;
                    };
                    for alias in &node.children {
                        let Some(name) = alias.name.as_deref() else { continue };
                        if name == "*" {
                            continue;
                        }
                        let bound = alias.value.as_deref().unwrap_or(name);
                        b.symbols.insert(bound.to_owned(), join_path(&sub, name));
                    }
                }
                _ => {}
            }
        }
        b
    }

    /// Resolves a call target to its framework head, if it is one.
    pub fn resolve(&self, func: &Node) -> Option<String> {
        let path = dotted_path(func)?;
        if path.len() >= 2 {
            let prefix = self.modules.get(&path[0])?;
            let rest = path[1..].join(".");
            Some(join_path(prefix, &rest))
        } else {
            self.symbols.get(&path[0]).cloned()
        }
    }
}

fn framework_subpath(module: &str) -> Option<String> {
    if module == FRAMEWORK_MODULE {
        Some(String::new())
    } else {
        module
            .strip_prefix(FRAMEWORK_MODULE)
            .and_then(|rest| rest.strip_prefix('.'))
            .map(str::to_owned)
    }
}

fn join_path(prefix: &str, rest: &str) -> String {
    if prefix.is_empty() {
        rest.to_owned()
    } else {
        format!("{prefix}.{rest}")
    }
}

/// `a.b.c` as `["a", "b", "c"]`; `None` unless the expression is a plain
/// dotted name.
pub fn dotted_path(node: &Node) -> Option<Vec<String>> {
    match node.kind {
        "Name" => Some(vec![node.name.clone()?]),
        "Attribute" => {
            let mut base = dotted_path(node.children.first()?)?;
            base.push(node.name.clone()?);
            Some(base)
        }
        _ => None,
    }
}

pub fn classify_head(head: &str) -> CallKind {
    if head == "device" {
        return CallKind::Device;
    }
    if measurement_name(head).is_some() {
        return CallKind::Measurement;
    }
    let last = head.rsplit('.').next().unwrap_or(head);
    if UTILITY_CALLS.contains(&head)
        || UTILITY_PREFIXES.iter().any(|p| head.starts_with(p))
        || last.ends_with("Optimizer")
    {
        return CallKind::Utility;
    }
    CallKind::Gate
}

fn measurement_name(head: &str) -> Option<&str> {
    let name = head.strip_prefix("measurements.").unwrap_or(head);
    MEASUREMENTS.contains(&name).then_some(name)
}

/// Every framework call in the module, in source order.
pub fn qml_calls(module: &Module) -> Vec<QmlCall> {
    let bindings = FrameworkBindings::of(module);
    let mut out = Vec::new();
    collect_calls(&module.root, false, &bindings, &mut out);
    out.sort_by_key(|c| c.start);
    out
}

fn collect_calls(node: &Node, in_return: bool, bindings: &FrameworkBindings, out: &mut Vec<QmlCall>) {
    let in_return = in_return || node.kind == "Return";
    if node.kind == "Call" {
        if let Some(head) = node.children.first().and_then(|f| bindings.resolve(f)) {
            let kind = classify_head(&head);
            let device_name = (kind == CallKind::Device).then(|| device_argument(node)).flatten();
            out.push(QmlCall {
                head,
                kind,
                in_return,
                device_name,
                start: node.start,
            });
        }
    }
    for child in &node.children {
        collect_calls(child, in_return, bindings, out);
    }
}

fn device_argument(call: &Node) -> Option<String> {
    let positional = call.children.iter().skip(1).find(|c| c.kind != "keyword");
    if let Some(arg) = positional {
        return (arg.kind == "Constant").then(|| arg.value.clone()).flatten();
    }
    call.children
        .iter()
        .find(|c| c.kind == "keyword" && c.name.as_deref() == Some("name"))
        .and_then(|k| k.children.first())
        .filter(|v| v.kind == "Constant")
        .and_then(|v| v.value.clone())
}

/// Top-level module names imported anywhere in the module.
pub fn imported_modules(module: &Module) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for node in module.root.descendants() {
        match node.kind {
            "Import" => {
                for alias in &node.children {
                    if let Some(name) = alias.name.as_deref() {
                        out.insert(root_segment(name).to_owned());
                    }
                }
            }
            "ImportFrom" if node.op != Some("relative") => {
                if let Some(m) = node.value.as_deref() {
                    out.insert(root_segment(m).to_owned());
                }
            }
            _ => {}
        }
    }
    out
}

fn root_segment(dotted: &str) -> &str {
    dotted.split('.').next().unwrap_or(dotted)
}

pub fn features_of(module: &Module) -> QuantumFeatureSet {
    let mut f = QuantumFeatureSet {
        imports: imported_modules(module),
        ..Default::default()
    };
    for call in qml_calls(module) {
        f.qml_call_count += 1;
        match call.kind {
            CallKind::Gate => {
                f.gate_count += 1;
                f.gate_names.insert(call.head);
            }
            CallKind::Device => {
                if let Some(name) = call.device_name {
                    f.device_types.insert(name);
                }
            }
            CallKind::Measurement => {
                f.measurement_count += 1;
                if call.in_return {
                    let name = measurement_name(&call.head).unwrap_or(&call.head);
                    f.measurement_returns.insert(name.to_owned());
                }
            }
            CallKind::Utility => {}
        }
    }
    f
}

pub fn extract_features(code: &str) -> Result<QuantumFeatureSet, SyntaxError> {
    Ok(features_of(&Module::parse(code)?))
}

/// Framework call heads found by a purely lexical scan for `qml.<name>`;
/// used when the code does not parse.
pub fn lexical_qml_heads(code: &str) -> Vec<String> {
    static PATTERN: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = PATTERN.get_or_init(|| Regex::new(r"(?:^|[^\w.])qml\.([A-Za-z_]\w*(?:\.[A-Za-z_]\w*)*)\s*\(").unwrap());
    re.captures_iter(code).map(|c| c[1].to_owned()).collect()
}

#[derive(Debug, Error)]
pub enum WhitelistError {
    #[error("whitelist {0} contains no names")]
    Empty(String),
    #[error("reading whitelist {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Curated set of valid framework operation names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Whitelist {
    pub allowed_names: BTreeSet<String>,
    pub source_path: PathBuf,
}

impl Whitelist {
    /// Parses the line format: one name per line, `#` starts a comment.
    pub fn parse(text: &str, source_path: impl Into<PathBuf>) -> Result<Self, WhitelistError> {
        let source_path = source_path.into();
        let allowed_names: BTreeSet<String> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        if allowed_names.is_empty() {
            return Err(WhitelistError::Empty(source_path.display().to_string()));
        }
        Ok(Self {
            allowed_names,
            source_path,
        })
    }

    pub fn load(path: &Path) -> Result<Self, WhitelistError> {
        let text = fs::read_to_string(path).map_err(|source| WhitelistError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// The starter list shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_WHITELIST, "<bundled>").expect("bundled whitelist is non-empty")
    }

    pub fn contains(&self, name: &str) -> bool {
        self.allowed_names.contains(name)
    }
}

pub fn whitelist_violations(features: &QuantumFeatureSet, wl: &Whitelist) -> BTreeSet<String> {
    features
        .gate_names
        .iter()
        .chain(&features.measurement_returns)
        .filter(|n| !wl.contains(n))
        .cloned()
        .collect()
}

/// Violations for arbitrary text: parsed features when the code parses,
/// otherwise the lexical `qml.<name>(` scan.
pub fn code_violations(code: &str, wl: &Whitelist) -> BTreeSet<String> {
    match extract_features(code) {
        Ok(f) => whitelist_violations(&f, wl),
        Err(_) => lexical_qml_heads(code)
            .into_iter()
            .filter(|h| matches!(classify_head(h), CallKind::Gate | CallKind::Measurement))
            .map(|h| measurement_name(&h).map(str::to_owned).unwrap_or(h))
            .filter(|h| !wl.contains(h))
            .collect(),
    }
}
