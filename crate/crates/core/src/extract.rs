//! Stage 1: isolate quantum-relevant functions from whole source files.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::ops::AddAssign;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::analyzer::{self, dotted_path, CallKind, QuantumFeatureSet};
use crate::pysyntax::{Ctx, Module, Node, SyntaxError};

pub const MODULE_BODY_NAME: &str = "__module_body__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceCategory {
    Official,
    Community,
    Archive,
}

impl SourceCategory {
    pub const ALL: [SourceCategory; 3] = [Self::Official, Self::Community, Self::Archive];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Official => "official",
            Self::Community => "community",
            Self::Archive => "archive",
        }
    }
}

impl fmt::Display for SourceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceCategory {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "official" => Ok(Self::Official),
            "community" => Ok(Self::Community),
            "archive" => Ok(Self::Archive),
            other => Err(format!("unknown source category {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: String,
    pub origin_url: String,
    pub source_category: SourceCategory,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Direct,
    Contextual,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedFunction {
    pub id: String,
    pub parent_id: String,
    pub name: String,
    pub span: (usize, usize),
    pub code: String,
    pub classification: Classification,
    pub features: QuantumFeatureSet,
    pub source_category: SourceCategory,
    pub origin_url: String,
}

impl ExtractedFunction {
    pub fn is_retained(&self) -> bool {
        self.classification != Classification::Rejected
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub files: usize,
    pub parse_failures: usize,
    pub enumerated: usize,
    pub retained: usize,
    pub direct: usize,
    pub contextual: usize,
}

impl AddAssign for ExtractionStats {
    fn add_assign(&mut self, o: Self) {
        self.files += o.files;
        self.parse_failures += o.parse_failures;
        self.enumerated += o.enumerated;
        self.retained += o.retained;
        self.direct += o.direct;
        self.contextual += o.contextual;
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("{id}: empty source")]
    Empty { id: String },
    #[error("{id}: parse failure at line {}: {}", .source.line, .source.message)]
    ParseFailure {
        id: String,
        #[source]
        source: SyntaxError,
    },
}

#[derive(Debug, Error)]
pub enum SourceLoadError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    /// Every enumerated function, rejected ones included.
    pub functions: Vec<ExtractedFunction>,
    pub stats: ExtractionStats,
}

impl Extraction {
    pub fn retained(&self) -> impl Iterator<Item = &ExtractedFunction> {
        self.functions.iter().filter(|f| f.is_retained())
    }
}

pub fn extract(record: &SourceRecord) -> Result<Extraction, ExtractError> {
    if record.raw_text.trim().is_empty() {
        return Err(ExtractError::Empty { id: record.id.clone() });
    }
    let module = Module::parse(&record.raw_text).map_err(|source| ExtractError::ParseFailure {
        id: record.id.clone(),
        source,
    })?;
    let file = FileContext::new(&module);

    let mut defs = Vec::new();
    collect_defs(&module.root, &mut defs);

    let mut out = Extraction::default();
    out.stats.files = 1;
    for def in defs {
        let name = def.name.clone().unwrap_or_default();
        let start_line = module.lines.line_of(def_start(def));
        let end_line = module.lines.line_of(def.end.saturating_sub(1).max(def.start));
        let text = whole_lines(&module, start_line, end_line);
        let body = strip_indent(&text, leading_indent(&text));
        let code = with_imports(&file.hoisted_imports(def), &body);
        let contextual_hint = has_qnode_decorator(def) || file.uses_device_before(def);
        out.push(record, name, (start_line, end_line), code, contextual_hint);
    }

    if let Some((span, wrapped)) = file.module_body() {
        let code = with_imports(&file.hoisted_imports_for_nodes(&file.loose_statements()), &wrapped);
        out.push(record, MODULE_BODY_NAME.to_owned(), span, code, false);
    }
    Ok(out)
}

impl Extraction {
    fn push(&mut self, record: &SourceRecord, name: String, span: (usize, usize), code: String, contextual_hint: bool) {
        self.stats.enumerated += 1;
        let (classification, features) = classify(&code, contextual_hint);
        match classification {
            Classification::Direct => self.stats.direct += 1,
            Classification::Contextual => self.stats.contextual += 1,
            Classification::Rejected => {}
        }
        if classification != Classification::Rejected {
            self.stats.retained += 1;
        }
        self.functions.push(ExtractedFunction {
            id: format!("{}::{}@{}", record.id, name, span.0),
            parent_id: record.id.clone(),
            name,
            span,
            code,
            classification,
            features,
            source_category: record.source_category,
            origin_url: record.origin_url.clone(),
        });
    }
}

/// Classifies emitted code by re-parsing it, so the direct/contextual call
/// is made on exactly what downstream stages will see.
fn classify(code: &str, contextual_hint: bool) -> (Classification, QuantumFeatureSet) {
    let Ok(module) = Module::parse(code) else {
        return (Classification::Rejected, QuantumFeatureSet::default());
    };
    let features = analyzer::features_of(&module);
    let Some(def) = module.body().last().filter(|n| is_def(n)) else {
        return (Classification::Rejected, features);
    };
    let body = def.children.iter().find(|c| c.kind == "body");
    let direct = body.is_some_and(|b| {
        analyzer::qml_calls(&module)
            .iter()
            .any(|c| c.start >= b.start && c.start < b.end)
    });
    let class = if direct {
        Classification::Direct
    } else if contextual_hint {
        Classification::Contextual
    } else {
        Classification::Rejected
    };
    (class, features)
}

fn is_def(n: &Node) -> bool {
    matches!(n.kind, "FunctionDef" | "AsyncFunctionDef")
}

fn collect_defs<'a>(node: &'a Node, out: &mut Vec<&'a Node>) {
    if is_def(node) {
        out.push(node);
    }
    for c in &node.children {
        collect_defs(c, out);
    }
}

fn def_start(def: &Node) -> usize {
    def.children
        .iter()
        .find(|c| c.kind == "decorators")
        .map_or(def.start, |d| d.start.min(def.start))
}

fn has_qnode_decorator(def: &Node) -> bool {
    let Some(decos) = def.children.iter().find(|c| c.kind == "decorators") else {
        return false;
    };
    decos.children.iter().any(|d| {
        let target = if d.kind == "Call" { d.children.first() } else { Some(d) };
        target
            .and_then(dotted_path)
            .is_some_and(|p| p.last().is_some_and(|s| s == "qnode"))
    })
}

fn whole_lines(module: &Module, first: usize, last: usize) -> String {
    let start = module.lines.line_start(first);
    let end = if last < module.lines.line_count() {
        module.lines.line_start(last + 1)
    } else {
        module.source.len()
    };
    let mut s = module.source[start..end].to_owned();
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

fn leading_indent(text: &str) -> &str {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    &first[..first.len() - first.trim_start_matches([' ', '\t']).len()]
}

/// Removes `indent` from every line that starts with it.
fn strip_indent(text: &str, indent: &str) -> String {
    if indent.is_empty() {
        return text.to_owned();
    }
    text.split_inclusive('\n')
        .map(|l| l.strip_prefix(indent).unwrap_or(l))
        .collect()
}

fn with_imports(imports: &[String], body: &str) -> String {
    if imports.is_empty() {
        return body.to_owned();
    }
    let mut s = imports.join("\n");
    s.push_str("\n\n");
    s.push_str(body);
    s
}

/// A file-level import binding one name.
#[derive(Debug, Clone)]
struct ImportBinding {
    bound: String,
    statement: String,
}

struct FileContext<'a> {
    module: &'a Module,
    imports: Vec<ImportBinding>,
    /// Module-level names assigned from a device constructor, with the
    /// offset of the assignment.
    devices: Vec<(String, usize)>,
}

impl<'a> FileContext<'a> {
    fn new(module: &'a Module) -> Self {
        let mut imports = Vec::new();
        let mut devices = Vec::new();
        let calls = analyzer::qml_calls(module);
        for stmt in module.body() {
            match stmt.kind {
                "Import" => {
                    for a in &stmt.children {
                        let Some(name) = a.name.as_deref() else { continue };
                        let (bound, statement) = match a.value.as_deref() {
                            Some(asname) => (asname.to_owned(), format!("import {name} as {asname}")),
                            None => (
                                name.split('.').next().unwrap_or(name).to_owned(),
                                format!("import {name}"),
                            ),
                        };
                        imports.push(ImportBinding { bound, statement });
                    }
                }
                "ImportFrom" if stmt.op != Some("relative") => {
                    let Some(from) = stmt.value.as_deref() else { continue };
                    for a in &stmt.children {
                        let Some(name) = a.name.as_deref() else { continue };
                        if name == "*" {
                            continue;
                        }
                        let (bound, statement) = match a.value.as_deref() {
                            Some(asname) => (asname.to_owned(), format!("from {from} import {name} as {asname}")),
                            None => (name.to_owned(), format!("from {from} import {name}")),
                        };
                        imports.push(ImportBinding { bound, statement });
                    }
                }
                "Assign" | "AnnAssign" => {
                    let Some(value) = stmt.children.last() else { continue };
                    let is_device = value.kind == "Call"
                        && calls
                            .iter()
                            .any(|c| c.start == value.start && c.kind == CallKind::Device);
                    if is_device {
                        for target in &stmt.children[..stmt.children.len() - 1] {
                            if target.kind == "Name" {
                                if let Some(n) = &target.name {
                                    devices.push((n.clone(), stmt.start));
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        Self {
            module,
            imports,
            devices,
        }
    }

    fn hoisted_imports(&self, def: &Node) -> Vec<String> {
        self.hoisted_imports_for_nodes(&[def])
    }

    fn hoisted_imports_for_nodes(&self, nodes: &[&Node]) -> Vec<String> {
        let free = free_names(nodes);
        let mut seen = BTreeSet::new();
        self.imports
            .iter()
            .filter(|b| free.contains(&b.bound))
            .filter(|b| seen.insert(b.statement.clone()))
            .map(|b| b.statement.clone())
            .collect()
    }

    fn uses_device_before(&self, def: &Node) -> bool {
        let free = free_names(&[def]);
        self.devices
            .iter()
            .any(|(name, at)| *at < def.start && free.contains(name))
    }

    /// Top-level statements that are not definitions or imports.
    fn loose_statements(&self) -> Vec<&'a Node> {
        self.module
            .body()
            .iter()
            .filter(|s| {
                !matches!(
                    s.kind,
                    "FunctionDef" | "AsyncFunctionDef" | "ClassDef" | "Import" | "ImportFrom"
                )
            })
            .collect()
    }

    /// Loose module-level code wrapped in a synthetic function, if any of it
    /// calls into the framework.
    fn module_body(&self) -> Option<((usize, usize), String)> {
        let loose = self.loose_statements();
        let calls = analyzer::qml_calls(self.module);
        let has_quantum = loose
            .iter()
            .any(|s| calls.iter().any(|c| c.start >= s.start && c.start < s.end));
        if !has_quantum {
            return None;
        }
        let lines = &self.module.lines;
        let first = lines.line_of(loose.first()?.start);
        let mut text = format!("def {MODULE_BODY_NAME}():\n");
        let mut last = first;
        for s in &loose {
            let a = lines.line_of(s.start);
            let b = lines.line_of(s.end.saturating_sub(1).max(s.start));
            if a <= last && a != first {
                continue; // shares a line with the previous statement
            }
            for line in whole_lines(self.module, a, b).split_inclusive('\n') {
                if line.trim().is_empty() {
                    text.push('\n');
                } else {
                    text.push_str("    ");
                    text.push_str(line);
                }
            }
            last = b;
        }
        Some(((first, last), text))
    }
}

/// Names loaded inside `nodes` that are not bound locally.
fn free_names(nodes: &[&Node]) -> BTreeSet<String> {
    let mut loads = BTreeSet::new();
    let mut locals = BTreeSet::new();
    for n in nodes {
        for d in n.descendants() {
            match (d.kind, d.ctx) {
                ("Name", Ctx::Load) => {
                    loads.extend(d.name.clone());
                }
                ("Name", Ctx::Store | Ctx::Del) | ("arg", _) => {
                    locals.extend(d.name.clone());
                }
                _ => {}
            }
        }
    }
    loads.difference(&locals).cloned().collect()
}

pub fn extract_all(records: &[SourceRecord]) -> (Extraction, Vec<ExtractError>) {
    let results: Vec<_> = records.par_iter().map(extract).collect();
    let mut total = Extraction::default();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(e) => {
                total.stats += e.stats;
                total.functions.extend(e.functions);
            }
            Err(e) => {
                total.stats.files += 1;
                total.stats.parse_failures += 1;
                errors.push(e);
            }
        }
    }
    (total, errors)
}

/// Loads every `*.py` file under `dir`, ids relative to `dir`.
pub fn load_directory(dir: &Path, category: SourceCategory) -> Result<Vec<SourceRecord>, SourceLoadError> {
    let mut paths: Vec<PathBuf> = WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "py"))
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let raw_text = read(&p)?;
            let id = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            Ok(SourceRecord {
                origin_url: format!("file://{}", p.display()),
                id,
                source_category: category,
                raw_text,
            })
        })
        .collect()
}

/// Loads a tab-separated manifest: `id  category  url  path`. Relative
/// paths resolve against the manifest's directory; `#` lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Vec<SourceRecord>, SourceLoadError> {
    let text = read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let bad = |message: String| SourceLoadError::Manifest {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, category, url, file] = fields[..] else {
            return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
        };
        let source_category = category.parse().map_err(bad)?;
        let file = base.join(file.trim());
        out.push(SourceRecord {
            id: id.trim().to_owned(),
            origin_url: url.trim().to_owned(),
            source_category,
            raw_text: read(&file)?,
        });
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String, SourceLoadError> {
    fs::read_to_string(path).map_err(|source| SourceLoadError::Io {
        path: path.to_owned(),
        source,
    })
}
