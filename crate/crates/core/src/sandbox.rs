//! Subprocess test execution and failure classification.

use std::collections::VecDeque;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::analyzer::{code_violations, Whitelist};
use crate::challenge::ChallengeTask;

pub const DEFAULT_LIMIT: Duration = Duration::from_secs(60);
pub const OUTPUT_CAP: usize = 64 * 1024;
pub const IMPORT_TEST: &str = "import";

const BUNDLED_RULES: &str = include_str!("../assets/error_rules.txt");
pub const BUNDLED_SHIM: &str = include_str!("../assets/shim.py");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    Ok,
    NonzeroExit,
    Timeout,
    LaunchFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub name: String,
    pub passed: bool,
    #[serde(default)]
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub passed: bool,
    pub tests_total: usize,
    pub tests_passed: usize,
    #[serde(default)]
    pub tests: Vec<TestOutcome>,
    pub stdout: String,
    pub stderr: String,
    pub wall_time: f64,
    pub exit_kind: ExitKind,
}

impl ExecutionResult {
    /// Result assembled from per-test outcomes; `passed` requires at least
    /// one test and a clean exit.
    pub fn from_tests(
        tests: Vec<TestOutcome>,
        exit_kind: ExitKind,
        stdout: String,
        stderr: String,
        wall_time: f64,
    ) -> Self {
        let tests_total = tests.len();
        let tests_passed = tests.iter().filter(|t| t.passed).count();
        Self {
            passed: exit_kind == ExitKind::Ok && tests_total > 0 && tests_passed == tests_total,
            tests_total,
            tests_passed,
            tests,
            stdout,
            stderr,
            wall_time,
            exit_kind,
        }
    }

    pub fn failure(exit_kind: ExitKind, stderr: impl Into<String>) -> Self {
        Self::from_tests(Vec::new(), exit_kind, String::new(), stderr.into(), 0.0)
    }

    pub fn import_failed(&self) -> bool {
        self.tests.len() == 1 && self.tests[0].name == IMPORT_TEST && !self.tests[0].passed
    }

    /// Text the classifier inspects: stderr and failed test messages.
    pub fn diagnostics(&self) -> String {
        let mut s = self.stderr.clone();
        for t in self.tests.iter().filter(|t| !t.passed) {
            s.push('\n');
            s.push_str(&t.message);
        }
        s
    }
}

/// The single JSON line printed by the test shim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimReport {
    pub tests: Vec<TestOutcome>,
    #[serde(default)]
    pub wall_time: f64,
}

/// Finds the shim's report: the last stdout line that parses as an object
/// with a `tests` array.
pub fn parse_shim_output(stdout: &str) -> Option<ShimReport> {
    stdout
        .lines()
        .rev()
        .filter(|l| l.trim_start().starts_with('{'))
        .find_map(|l| serde_json::from_str::<ShimReport>(l.trim()).ok())
}

pub trait Executor: Send + Sync {
    fn execute(&self, code: &str, task: &ChallengeTask) -> ExecutionResult;
}

#[derive(Debug, Clone)]
pub struct SubprocessExecutor {
    pub interpreter: PathBuf,
    /// Test shim script; `None` uses the bundled copy.
    pub shim: Option<PathBuf>,
    pub limit: Duration,
    pub output_cap: usize,
}

impl SubprocessExecutor {
    pub fn new(shim: impl Into<PathBuf>) -> Self {
        Self {
            shim: Some(shim.into()),
            ..Self::bundled()
        }
    }

    pub fn bundled() -> Self {
        Self {
            interpreter: PathBuf::from("python3"),
            shim: None,
            limit: DEFAULT_LIMIT,
            output_cap: OUTPUT_CAP,
        }
    }

    pub fn with_limit(mut self, limit: Duration) -> Self {
        self.limit = limit;
        self
    }

    pub fn with_interpreter(mut self, interpreter: impl Into<PathBuf>) -> Self {
        self.interpreter = interpreter.into();
        self
    }

    fn prepare(&self, workspace: &Path, code: &str, task: &ChallengeTask) -> std::io::Result<PathBuf> {
        let shim = match &self.shim {
            Some(p) => p.clone(),
            None => {
                let p = workspace.join("qsynth_shim.py");
                fs::write(&p, BUNDLED_SHIM)?;
                p
            }
        };
        fs::write(workspace.join("solution.py"), code)?;
        fs::write(workspace.join("tests.py"), &task.test_spec.tests_source)?;
        let cases = json!({"rel_tol": task.test_spec.rel_tol, "cases": task.test_spec.cases});
        fs::write(workspace.join("cases.json"), cases.to_string())?;
        Ok(shim)
    }
}

impl Executor for SubprocessExecutor {
    fn execute(&self, code: &str, task: &ChallengeTask) -> ExecutionResult {
        if let Some(shim) = self.shim.as_ref().filter(|p| !p.is_file()) {
            return ExecutionResult::failure(
                ExitKind::LaunchFailure,
                format!("test shim not found: {}", shim.display()),
            );
        }
        let workspace = match tempfile::Builder::new().prefix("qsynth-exec-").tempdir() {
            Ok(w) => w,
            Err(e) => return ExecutionResult::failure(ExitKind::LaunchFailure, format!("workspace: {e}")),
        };
        let shim = match self.prepare(workspace.path(), code, task) {
            Ok(shim) => shim,
            Err(e) => return ExecutionResult::failure(ExitKind::LaunchFailure, format!("workspace: {e}")),
        };
        let mut cmd = Command::new(&self.interpreter);
        cmd.arg(&shim)
            .arg(workspace.path())
            .current_dir(workspace.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let started = Instant::now();
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => {
                return ExecutionResult::failure(
                    ExitKind::LaunchFailure,
                    format!("cannot launch {}: {e}", self.interpreter.display()),
                )
            }
        };
        let cap = self.output_cap;
        let out_reader = child.stdout.take().map(|s| thread::spawn(move || read_capped(s, cap)));
        let err_reader = child.stderr.take().map(|s| thread::spawn(move || read_capped(s, cap)));

        let status = wait_with_limit(&mut child, self.limit);
        let wall_time = started.elapsed().as_secs_f64();
        let stdout = out_reader.and_then(|h| h.join().ok()).unwrap_or_default();
        let stderr = err_reader.and_then(|h| h.join().ok()).unwrap_or_default();

        let Some(status) = status else {
            return ExecutionResult::from_tests(Vec::new(), ExitKind::Timeout, stdout, stderr, wall_time);
        };
        match parse_shim_output(&stdout) {
            Some(report) if status.success() => {
                ExecutionResult::from_tests(report.tests, ExitKind::Ok, stdout, stderr, wall_time)
            }
            Some(report) => ExecutionResult::from_tests(report.tests, ExitKind::NonzeroExit, stdout, stderr, wall_time),
            None => ExecutionResult::from_tests(Vec::new(), ExitKind::NonzeroExit, stdout, stderr, wall_time),
        }
    }
}

/// Replays queued results in order, then a single failing test forever.
/// Records every executed solution.
#[derive(Default)]
pub struct ScriptedExecutor {
    queue: Mutex<VecDeque<ExecutionResult>>,
    seen: Mutex<Vec<String>>,
}

impl ScriptedExecutor {
    pub fn new(results: impl IntoIterator<Item = ExecutionResult>) -> Self {
        Self {
            queue: Mutex::new(results.into_iter().collect()),
            seen: Mutex::default(),
        }
    }

    /// One passing or failing test per entry.
    pub fn from_flags(flags: impl IntoIterator<Item = bool>) -> Self {
        Self::new(flags.into_iter().map(single_test))
    }

    pub fn executed(&self) -> Vec<String> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

pub fn single_test(passed: bool) -> ExecutionResult {
    let message = if passed {
        ""
    } else {
        "AssertionError: expected 1.0, got 0.0"
    };
    let test = TestOutcome {
        name: "test_case".into(),
        passed,
        message: message.into(),
    };
    ExecutionResult::from_tests(vec![test], ExitKind::Ok, String::new(), String::new(), 0.0)
}

impl Executor for ScriptedExecutor {
    fn execute(&self, code: &str, _task: &ChallengeTask) -> ExecutionResult {
        self.seen
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(code.to_owned());
        self.queue
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front()
            .unwrap_or_else(|| single_test(false))
    }
}

/// Waits for the child; on timeout kills its whole process group and
/// returns `None`.
fn wait_with_limit(child: &mut Child, limit: Duration) -> Option<ExitStatus> {
    let deadline = Instant::now() + limit;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Some(status),
            Ok(None) if Instant::now() >= deadline => {
                kill_tree(child);
                let _ = child.wait();
                return None;
            }
            Ok(None) => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                log::warn!("waiting on executor child: {e}");
                kill_tree(child);
                let _ = child.wait();
                return None;
            }
        }
    }
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    {
        // the child leads its own process group
        let pgid = child.id() as libc::pid_t;
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

/// Reads a stream to the end, keeping at most `cap` bytes.
fn read_capped(mut r: impl Read, cap: usize) -> String {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    let mut truncated = false;
    loop {
        match r.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                kept.extend_from_slice(&buf[..n.min(room)]);
                truncated |= n > room;
            }
        }
    }
    let mut s = String::from_utf8_lossy(&kept).into_owned();
    if truncated {
        s.push_str("\n[truncated]");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    FormattingFailure,
    Hallucination,
    ReasoningError,
    ApiMisuse,
    Timeout,
    None,
}

impl ErrorCategory {
    pub const FAILURES: [ErrorCategory; 5] = [
        Self::FormattingFailure,
        Self::Hallucination,
        Self::ReasoningError,
        Self::ApiMisuse,
        Self::Timeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FormattingFailure => "formatting_failure",
            Self::Hallucination => "hallucination",
            Self::ReasoningError => "reasoning_error",
            Self::ApiMisuse => "api_misuse",
            Self::Timeout => "timeout",
            Self::None => "none",
        }
    }
}

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("line {line}: unknown rule group {group:?}")]
    UnknownGroup { line: usize, group: String },
    #[error("line {line}: {source}")]
    BadPattern {
        line: usize,
        #[source]
        source: regex::Error,
    },
    #[error("reading rules {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Pattern groups driving [`classify_error`].
#[derive(Debug, Clone)]
pub struct ErrorRules {
    formatting: Vec<Regex>,
    hallucination: Vec<Regex>,
    api_misuse: Vec<Regex>,
    api_misuse_error: Vec<Regex>,
    framework_frame: Vec<Regex>,
}

impl Default for ErrorRules {
    fn default() -> Self {
        Self::bundled()
    }
}

impl ErrorRules {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_RULES).expect("bundled rules are valid")
    }

    pub fn load(path: &Path) -> Result<Self, RulesError> {
        let text = fs::read_to_string(path).map_err(|source| RulesError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, RulesError> {
        let mut rules = Self {
            formatting: Vec::new(),
            hallucination: Vec::new(),
            api_misuse: Vec::new(),
            api_misuse_error: Vec::new(),
            framework_frame: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (group, pattern) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let re = RegexBuilder::new(pattern.trim())
                .multi_line(true)
                .build()
                .map_err(|source| RulesError::BadPattern { line: i + 1, source })?;
            let slot = match group {
                "formatting_failure" => &mut rules.formatting,
                "hallucination" => &mut rules.hallucination,
                "api_misuse" => &mut rules.api_misuse,
                "api_misuse_error" => &mut rules.api_misuse_error,
                "framework_frame" => &mut rules.framework_frame,
                other => {
                    return Err(RulesError::UnknownGroup {
                        line: i + 1,
                        group: other.to_owned(),
                    })
                }
            };
            slot.push(re);
        }
        Ok(rules)
    }
}

fn any_match(patterns: &[Regex], text: &str) -> bool {
    patterns.iter().any(|p| p.is_match(text))
}

/// Maps a result onto exactly one category. Rules apply in a fixed order:
/// timeout, formatting, hallucination, API misuse, then reasoning error.
/// `code` is `None` when no code could be extracted from the response.
pub fn classify_error(
    result: &ExecutionResult,
    code: Option<&str>,
    wl: &Whitelist,
    rules: &ErrorRules,
) -> ErrorCategory {
    if result.passed {
        return ErrorCategory::None;
    }
    if result.exit_kind == ExitKind::Timeout {
        return ErrorCategory::Timeout;
    }
    let text = result.diagnostics();
    let Some(code) = code else {
        return ErrorCategory::FormattingFailure;
    };
    let nothing_ran = result.tests_total == 0 && result.exit_kind != ExitKind::LaunchFailure;
    if nothing_ran || (result.import_failed() && any_match(&rules.formatting, &text)) {
        return ErrorCategory::FormattingFailure;
    }
    if !code_violations(code, wl).is_empty() || any_match(&rules.hallucination, &text) {
        return ErrorCategory::Hallucination;
    }
    if any_match(&rules.api_misuse, &text)
        || (any_match(&rules.api_misuse_error, &text) && any_match(&rules.framework_frame, &text))
    {
        return ErrorCategory::ApiMisuse;
    }
    ErrorCategory::ReasoningError
}

#[cfg(test)]
mod tests {
    use super::*;

    fn failed(message: &str) -> ExecutionResult {
        ExecutionResult::from_tests(
            vec![
                TestOutcome {
                    name: "test_a".into(),
                    passed: true,
                    message: String::new(),
                },
                TestOutcome {
                    name: "test_b".into(),
                    passed: false,
                    message: message.into(),
                },
            ],
            ExitKind::Ok,
            String::new(),
            String::new(),
            0.1,
        )
    }

    const GOOD: &str = "import pennylane as qml\ndef f():\n    qml.RX(0.1, wires=0)\n";

    fn classify(r: &ExecutionResult, code: Option<&str>) -> ErrorCategory {
        classify_error(r, code, &Whitelist::bundled(), &ErrorRules::bundled())
    }

    #[test]
    fn shim_output_parsing() {
        let out = "noise\n{\"tests\":[{\"name\":\"test_f\",\"passed\":true,\"message\":\"\"}],\"wall_time\":0.01}\n";
        let r = parse_shim_output(out).unwrap();
        assert_eq!(r.tests.len(), 1);
        assert!(parse_shim_output("{\"other\": 1}\n").is_none());
        assert!(parse_shim_output("").is_none());
    }

    #[test]
    fn result_invariants() {
        let r = failed("AssertionError");
        assert_eq!((r.tests_total, r.tests_passed, r.passed), (2, 1, false));
        let empty = ExecutionResult::from_tests(Vec::new(), ExitKind::Ok, String::new(), String::new(), 0.0);
        assert!(!empty.passed);
    }

    #[test]
    fn hallucination_from_stderr() {
        let r = failed("AttributeError: module 'pennylane' has no attribute 'FakeGate'");
        assert_eq!(classify(&r, Some(GOOD)), ErrorCategory::Hallucination);
    }

    #[test]
    fn hallucination_from_whitelist() {
        let code = "import pennylane as qml\ndef f():\n    qml.MagicGate(wires=0)\n";
        assert_eq!(
            classify(&failed("AssertionError"), Some(code)),
            ErrorCategory::Hallucination
        );
    }

    #[test]
    fn passed_is_none() {
        let mut r = failed("");
        r.tests[1].passed = true;
        let r = ExecutionResult::from_tests(r.tests, ExitKind::Ok, String::new(), String::new(), 0.0);
        assert_eq!(classify(&r, Some(GOOD)), ErrorCategory::None);
    }

    #[test]
    fn assertion_is_reasoning_error() {
        let r =
            failed("Traceback (most recent call last):\n  File \"tests.py\", line 3\nAssertionError: 0.5 != 0.7071");
        assert_eq!(classify(&r, Some(GOOD)), ErrorCategory::ReasoningError);
    }

    #[test]
    fn framework_errors_are_api_misuse() {
        let r = failed("pennylane.wires.WireError: Did not find some of the wires (5,)");
        assert_eq!(classify(&r, Some(GOOD)), ErrorCategory::ApiMisuse);
        let frame = "Traceback:\n  File \"/usr/lib/python3/site-packages/pennylane/ops/op_math.py\", line 9\nTypeError: RX.__init__() got an unexpected keyword argument 'wire'";
        assert_eq!(classify(&failed(frame), Some(GOOD)), ErrorCategory::ApiMisuse);
        // a TypeError outside the framework is the model's own bug
        let own = "  File \"solution.py\", line 4\nTypeError: unsupported operand";
        assert_eq!(classify(&failed(own), Some(GOOD)), ErrorCategory::ReasoningError);
    }

    #[test]
    fn formatting_failures() {
        assert_eq!(classify(&failed("x"), None), ErrorCategory::FormattingFailure);
        let import = ExecutionResult::from_tests(
            vec![TestOutcome {
                name: IMPORT_TEST.into(),
                passed: false,
                message: "  File \"solution.py\", line 1\nSyntaxError: invalid syntax".into(),
            }],
            ExitKind::Ok,
            String::new(),
            String::new(),
            0.0,
        );
        assert_eq!(classify(&import, Some(GOOD)), ErrorCategory::FormattingFailure);
        let crashed = ExecutionResult::failure(ExitKind::NonzeroExit, "Segmentation fault");
        assert_eq!(classify(&crashed, Some(GOOD)), ErrorCategory::FormattingFailure);
    }

    #[test]
    fn import_time_hallucination_is_not_formatting() {
        let import = ExecutionResult::from_tests(
            vec![TestOutcome {
                name: IMPORT_TEST.into(),
                passed: false,
                message: "AttributeError: module 'pennylane' has no attribute 'FakeGate'".into(),
            }],
            ExitKind::Ok,
            String::new(),
            String::new(),
            0.0,
        );
        assert_eq!(classify(&import, Some(GOOD)), ErrorCategory::Hallucination);
    }

    #[test]
    fn timeout_first() {
        let r = ExecutionResult::failure(ExitKind::Timeout, "module 'pennylane' has no attribute 'X'");
        assert_eq!(classify(&r, None), ErrorCategory::Timeout);
    }

    #[test]
    fn rules_file_errors() {
        assert!(matches!(
            ErrorRules::parse("bogus x"),
            Err(RulesError::UnknownGroup { line: 1, .. })
        ));
        assert!(matches!(
            ErrorRules::parse("# c\nhallucination (\n"),
            Err(RulesError::BadPattern { line: 2, .. })
        ));
    }

    #[test]
    fn output_cap() {
        let s = read_capped(&b"abcdefgh"[..], 4);
        assert_eq!(s, "abcd\n[truncated]");
        assert_eq!(read_capped(&b"ab"[..], 4), "ab");
    }
}
