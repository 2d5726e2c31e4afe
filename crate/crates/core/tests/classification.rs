mod common;

use std::collections::BTreeSet;

use qsynth::analyzer::Whitelist;
use qsynth::sandbox::{classify_error, ErrorCategory, ErrorRules};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{failure_fixtures, random_classification_case};

#[test]
fn five_fixtures_map_one_to_one() {
    let wl = Whitelist::bundled();
    let rules = ErrorRules::bundled();
    let mut seen = BTreeSet::new();
    for (expected, r, code) in failure_fixtures() {
        let got = classify_error(&r, code, &wl, &rules);
        assert_eq!(got.as_str(), expected);
        assert!(seen.insert(got));
    }
    assert_eq!(seen, ErrorCategory::FAILURES.into_iter().collect());
}

#[test]
fn randomized_results_follow_the_precedence_order() {
    let wl = Whitelist::bundled();
    let rules = ErrorRules::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut hit = BTreeSet::new();
    for _ in 0..200 {
        let (r, code, expected) = random_classification_case(&mut rng);
        let got = classify_error(&r, code, &wl, &rules);
        assert_eq!(got, expected, "{r:?}");
        assert_eq!(classify_error(&r, code, &wl, &rules), got);
        hit.insert(got);
    }
    assert_eq!(hit.len(), 6);
}
