use std::time::{Duration, Instant};

use qsynth::analyzer::Whitelist;
use qsynth::challenge::{ChallengeTask, TestCase, TestSpec};
use qsynth::metrics::partial_credit;
use qsynth::sandbox::{
    classify_error, parse_shim_output, ErrorCategory, ErrorRules, Executor, ExitKind, SubprocessExecutor,
};

fn task(tests_source: &str, cases: Vec<TestCase>) -> ChallengeTask {
    ChallengeTask {
        id: "toy".into(),
        year: "2024".into(),
        description: "toy".into(),
        template_code: String::new(),
        test_spec: TestSpec {
            tests_source: tests_source.into(),
            cases,
            rel_tol: None,
        },
        reference_code: None,
    }
}

fn executor() -> SubprocessExecutor {
    SubprocessExecutor::bundled().with_limit(Duration::from_secs(20))
}

const ADD: &str = "print('noise from import')\n\ndef add(a, b):\n    print('noise from call')\n    return a + b\n";

#[test]
fn passing_solution_prints_exactly_one_report_line() {
    let tests = "from solution import add\n\ndef test_add():\n    assert add(1, 2) == 3\n";
    let cases = vec![TestCase {
        name: "case_float".into(),
        function: "add".into(),
        args: vec![0.1.into(), 0.2.into()],
        kwargs: Default::default(),
        expected: 0.3.into(),
        rel_tol: Some(1e-9),
    }];
    let r = executor().execute(ADD, &task(tests, cases));
    assert_eq!(r.exit_kind, ExitKind::Ok, "{}", r.stderr);
    assert!(r.passed);
    assert_eq!((r.tests_total, r.tests_passed), (2, 2));
    let lines: Vec<&str> = r.stdout.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 1, "{:?}", r.stdout);
    let report = parse_shim_output(lines[0]).unwrap();
    assert_eq!(report.tests.len(), 2);
    assert!(report.wall_time >= 0.0);
}

#[test]
fn one_of_three_raising() {
    let tests = "from solution import add\n\ndef test_a():\n    assert add(1, 1) == 2\n\ndef test_b():\n    assert add(2, 2) == 5, 'off by one'\n\ndef test_c():\n    assert add(0, 0) == 0\n";
    let r = executor().execute(ADD, &task(tests, Vec::new()));
    assert_eq!(r.exit_kind, ExitKind::Ok);
    assert!(!r.passed);
    assert_eq!((r.tests_total, r.tests_passed), (3, 2));
    let failed: Vec<_> = r.tests.iter().filter(|t| !t.passed).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].name, "test_b");
    assert!(failed[0].message.contains("AssertionError: off by one"));
    assert!((partial_credit(&r).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let category = classify_error(&r, Some(ADD), &Whitelist::bundled(), &ErrorRules::bundled());
    assert_eq!(category, ErrorCategory::ReasoningError);
}

#[test]
fn import_failure_is_a_single_pseudo_test() {
    let code = "import module_that_does_not_exist_xyz\n\ndef add(a, b):\n    return a + b\n";
    let r = executor().execute(code, &task("def test_a():\n    pass\n", Vec::new()));
    assert!(r.import_failed());
    assert_eq!(r.tests[0].name, "import");
    assert!(r.tests[0].message.contains("ModuleNotFoundError"));
    assert_eq!(partial_credit(&r).unwrap(), 0.0);
}

#[test]
fn syntax_error_is_a_formatting_failure() {
    let code = "def add(a, b)\n    return a + b\n";
    let r = executor().execute(code, &task("def test_a():\n    pass\n", Vec::new()));
    assert!(r.import_failed());
    assert!(r.tests[0].message.contains("SyntaxError"));
    let category = classify_error(&r, Some(code), &Whitelist::bundled(), &ErrorRules::bundled());
    assert_eq!(category, ErrorCategory::FormattingFailure);
}

#[test]
fn runaway_solution_is_killed_at_the_limit() {
    let code = "def add(a, b):\n    while True:\n        pass\n";
    let tests = "from solution import add\n\ndef test_a():\n    add(1, 2)\n";
    let limit = Duration::from_secs(2);
    let started = Instant::now();
    let r = SubprocessExecutor::bundled()
        .with_limit(limit)
        .execute(code, &task(tests, Vec::new()));
    let elapsed = started.elapsed();
    assert_eq!(r.exit_kind, ExitKind::Timeout);
    assert!(!r.passed);
    assert!(elapsed < limit + Duration::from_secs(2), "{elapsed:?}");
    let category = classify_error(&r, Some(code), &Whitelist::bundled(), &ErrorRules::bundled());
    assert_eq!(category, ErrorCategory::Timeout);
}

#[test]
fn missing_interpreter_is_a_launch_failure() {
    let r = executor()
        .with_interpreter("/nonexistent/python-qsynth")
        .execute(ADD, &task("def test_a():\n    pass\n", Vec::new()));
    assert_eq!(r.exit_kind, ExitKind::LaunchFailure);
    assert!(!r.passed);
}
