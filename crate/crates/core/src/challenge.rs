//! Coding challenges and the on-disk bundle format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    /// Solution function to call.
    pub function: String,
    #[serde(default)]
    pub args: Vec<Value>,
    #[serde(default)]
    pub kwargs: Map<String, Value>,
    pub expected: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    /// Python source defining `test_*` functions; may import from `solution`.
    #[serde(default)]
    pub tests_source: String,
    #[serde(default)]
    pub cases: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
}

impl TestSpec {
    pub fn is_empty(&self) -> bool {
        self.tests_source.trim().is_empty() && self.cases.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeTask {
    pub id: String,
    #[serde(default)]
    pub year: String,
    pub description: String,
    #[serde(default)]
    pub template_code: String,
    #[serde(default)]
    pub test_spec: TestSpec,
    /// Known-good solution used for similarity metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_code: Option<String>,
}

#[derive(Debug, Error)]
pub enum ChallengeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Default, Deserialize)]
struct Meta {
    id: Option<String>,
    #[serde(default)]
    year: String,
    #[serde(default)]
    cases: Vec<TestCase>,
    rel_tol: Option<f64>,
}

fn read_optional(path: &Path) -> Result<Option<String>, ChallengeError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(ChallengeError::Io {
            path: path.to_owned(),
            source,
        }),
    }
}

/// Reads `description.md`, `template.py`, `tests.py`, `meta.json` and the
/// optional `reference.py` from a challenge directory. The id defaults to
/// the directory name.
pub fn load_bundle(dir: &Path) -> Result<ChallengeTask, ChallengeError> {
    let invalid = |message: String| ChallengeError::Invalid {
        path: dir.to_owned(),
        message,
    };
    let description = read_optional(&dir.join("description.md"))?.unwrap_or_default();
    if description.trim().is_empty() {
        return Err(invalid("description.md is missing or empty".into()));
    }
    let meta: Meta = match read_optional(&dir.join("meta.json"))? {
        Some(text) => serde_json::from_str(&text).map_err(|e| invalid(format!("meta.json: {e}")))?,
        None => Meta::default(),
    };
    let test_spec = TestSpec {
        tests_source: read_optional(&dir.join("tests.py"))?.unwrap_or_default(),
        cases: meta.cases,
        rel_tol: meta.rel_tol,
    };
    if test_spec.is_empty() {
        return Err(invalid("no tests.py and no cases in meta.json".into()));
    }
    let id = meta
        .id
        .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_default();
    Ok(ChallengeTask {
        id,
        year: meta.year,
        description,
        template_code: read_optional(&dir.join("template.py"))?.unwrap_or_default(),
        test_spec,
        reference_code: read_optional(&dir.join("reference.py"))?,
    })
}

/// Every immediate subdirectory of `root` that holds a description, in
/// name order.
pub fn load_bundles(root: &Path) -> Result<Vec<ChallengeTask>, ChallengeError> {
    let entries = fs::read_dir(root).map_err(|source| ChallengeError::Io {
        path: root.to_owned(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join("description.md").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_bundle(d)).collect()
}
