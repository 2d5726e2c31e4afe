//! Code similarity and execution metrics.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{self, code_violations, QuantumFeatureSet, Whitelist};
use crate::pysyntax::{tokenize, Module, Node};
use crate::sandbox::ExecutionResult;

pub const MAX_ORDER: usize = 4;
pub const QML_WEIGHT: usize = 3;
const FRAMEWORK_ROOT: &str = "qml";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("empty token stream")]
    EmptyInput,
    #[error("challenge {challenge} has {have} attempts, {k} required")]
    InsufficientAttempts { challenge: usize, have: usize, k: usize },
    #[error("result has no tests")]
    NoTests,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// BLEU-4 with uniform weights and the standard brevity penalty. An order
/// above 1 with no clipped matches scores `1 / (total + 1)`.
pub fn bleu(h: &[String], r: &[String]) -> Result<f64, MetricError> {
    if h.is_empty() || r.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let hc = ngram_counts(h, n);
        let rc = ngram_counts(r, n);
        let matches: usize = hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
        let total = h.len().saturating_sub(n - 1);
        let p = if matches > 0 {
            matches as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let (c, rl) = (h.len() as f64, r.len() as f64);
    let bp = if c > rl { 1.0 } else { (1.0 - rl / c).exp() };
    Ok((bp * (log_sum / MAX_ORDER as f64).exp()).clamp(0.0, 1.0))
}

pub fn token_bleu(h: &str, r: &str) -> Result<f64, MetricError> {
    bleu(&tokenize(h), &tokenize(r))
}

/// Repeats every `qml . name (. name)*` run three times in place.
pub fn upweight_qml(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let starts_run = tokens[i] == FRAMEWORK_ROOT
            && (i == 0 || tokens[i - 1] != ".")
            && tokens.get(i + 1).is_some_and(|t| t == ".")
            && tokens.get(i + 2).is_some_and(|t| is_identifier(t));
        if !starts_run {
            out.push(tokens[i].clone());
            i += 1;
            continue;
        }
        let mut end = i + 3;
        while end + 1 < tokens.len() && tokens[end] == "." && is_identifier(&tokens[end + 1]) {
            end += 2;
        }
        for _ in 0..QML_WEIGHT {
            out.extend_from_slice(&tokens[i..end]);
        }
        i = end;
    }
    out
}

fn is_identifier(t: &str) -> bool {
    let mut chars = t.chars();
    chars.next().is_some_and(|c| c.is_alphabetic() || c == '_') && chars.all(|c| c.is_alphanumeric() || c == '_')
}

pub fn weighted_bleu(h: &str, r: &str) -> Result<f64, MetricError> {
    bleu(&upweight_qml(&tokenize(h)), &upweight_qml(&tokenize(r)))
}

/// Structural forms of every subtree of height at least 2.
pub fn subtree_shapes(root: &Node) -> Vec<String> {
    fn walk(node: &Node, out: &mut Vec<String>) -> (String, usize) {
        let mut shape = String::from("(");
        shape.push_str(node.kind);
        if let Some(op) = node.op {
            shape.push(':');
            shape.push_str(op);
        }
        let mut height = 1;
        for child in &node.children {
            let (s, h) = walk(child, out);
            shape.push(' ');
            shape.push_str(&s);
            height = height.max(h + 1);
        }
        shape.push(')');
        if height >= 2 {
            out.push(shape.clone());
        }
        (shape, height)
    }
    let mut out = Vec::new();
    walk(root, &mut out);
    out
}

/// Fraction of the reference's anonymized subtrees (height ≥ 2) found in
/// the hypothesis, counted as a multiset.
pub fn ast_match(h: &str, r: &str) -> f64 {
    let (Ok(hm), Ok(rm)) = (Module::parse(h), Module::parse(r)) else {
        return 0.0;
    };
    let reference = subtree_shapes(&rm.root);
    let hypothesis = subtree_shapes(&hm.root);
    if reference.is_empty() {
        return if hypothesis.is_empty() { 1.0 } else { 0.0 };
    }
    let mut available: HashMap<&str, usize> = HashMap::new();
    for s in &hypothesis {
        *available.entry(s.as_str()).or_insert(0) += 1;
    }
    let mut matched = 0usize;
    for s in &reference {
        if let Some(c) = available.get_mut(s.as_str()).filter(|c| **c > 0) {
            *c -= 1;
            matched += 1;
        }
    }
    matched as f64 / reference.len() as f64
}

/// Jaccard over quantum keys; two empty key sets agree (1.0).
pub fn dataflow_from_features(h: &QuantumFeatureSet, r: &QuantumFeatureSet) -> f64 {
    jaccard_or_one(&h.quantum_keys(), &r.quantum_keys())
}

pub fn jaccard_or_one(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn dataflow_match(h: &str, r: &str) -> f64 {
    match (analyzer::extract_features(h), analyzer::extract_features(r)) {
        (Ok(hf), Ok(rf)) => dataflow_from_features(&hf, &rf),
        _ => 0.0,
    }
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens<T: PartialEq>(h: &[T], r: &[T]) -> Result<f64, MetricError> {
    if h.is_empty() || r.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    // F1 of LCS precision and recall, in closed form
    Ok(2.0 * lcs_len(h, r) as f64 / (h.len() + r.len()) as f64)
}

pub fn rouge_l(h: &str, r: &str) -> Result<f64, MetricError> {
    rouge_l_tokens(&tokenize(h), &tokenize(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleu {
    pub token_bleu: f64,
    pub weighted_bleu: f64,
    pub ast_match: f64,
    pub dataflow_match: f64,
    pub codebleu: f64,
}

pub fn codebleu(h: &str, r: &str) -> Result<CodeBleu, MetricError> {
    let token_bleu = token_bleu(h, r)?;
    let weighted_bleu = weighted_bleu(h, r)?;
    let ast_match = ast_match(h, r);
    let dataflow_match = dataflow_match(h, r);
    Ok(CodeBleu {
        token_bleu,
        weighted_bleu,
        ast_match,
        dataflow_match,
        codebleu: 0.25 * (token_bleu + weighted_bleu + ast_match + dataflow_match),
    })
}

/// Fraction of challenges with a pass among their first `k` attempts.
pub fn pass_at_k(attempts: &[Vec<bool>], k: usize) -> Result<f64, MetricError> {
    if attempts.is_empty() {
        return Ok(0.0);
    }
    let mut solved = 0usize;
    for (i, a) in attempts.iter().enumerate() {
        if a.len() < k {
            return Err(MetricError::InsufficientAttempts {
                challenge: i,
                have: a.len(),
                k,
            });
        }
        if a[..k].iter().any(|&p| p) {
            solved += 1;
        }
    }
    Ok(solved as f64 / attempts.len() as f64)
}

pub fn partial_credit(result: &ExecutionResult) -> Result<f64, MetricError> {
    if result.tests_total == 0 {
        return Err(MetricError::NoTests);
    }
    Ok(result.tests_passed as f64 / result.tests_total as f64)
}

/// Share of solutions calling framework names outside the whitelist.
pub fn hallucination_rate<S: AsRef<str>>(solutions: &[S], wl: &Whitelist) -> f64 {
    if solutions.is_empty() {
        log::warn!("hallucination rate over an empty solution list is reported as 0");
        return 0.0;
    }
    let flagged = solutions
        .iter()
        .filter(|s| !code_violations(s.as_ref(), wl).is_empty())
        .count();
    flagged as f64 / solutions.len() as f64
}
