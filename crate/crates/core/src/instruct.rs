//! Stage 4: instruction generation and the retrieval consistency check.

use serde::{Deserialize, Serialize};

use crate::analyzer::QuantumFeatureSet;
use crate::extract::SourceCategory;
use crate::gateway::{strip_fences, ChatRequest, Gateway};
use crate::prompts::{self, PromptSet};
use crate::retrieval::{EmbeddingProvider, IndexedPair, RetrievalError, VectorIndex};
use crate::verify::{Verdict, VerifiedEntry};

pub const MIN_WORDS: usize = 20;
pub const MAX_WORDS: usize = 40;

pub const ACTION_VERBS: &[&str] = &[
    "apply",
    "build",
    "calculate",
    "classify",
    "compute",
    "construct",
    "create",
    "define",
    "design",
    "determine",
    "develop",
    "draw",
    "embed",
    "encode",
    "entangle",
    "estimate",
    "evaluate",
    "execute",
    "find",
    "generate",
    "implement",
    "initialize",
    "load",
    "make",
    "measure",
    "model",
    "optimize",
    "perform",
    "prepare",
    "produce",
    "program",
    "return",
    "rotate",
    "run",
    "sample",
    "simulate",
    "solve",
    "train",
    "transform",
    "use",
    "visualize",
    "write",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin_url: String,
    pub parent_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Valid,
    /// Instruction kept despite failing validation twice.
    Flagged,
    /// No instruction could be obtained from the gateway.
    Unpaired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub id: String,
    pub instruction: String,
    pub code: String,
    pub source_category: SourceCategory,
    pub verdict: Verdict,
    pub features: QuantumFeatureSet,
    pub provenance: Provenance,
    pub status: PairStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<String>,
}

impl InstructionPair {
    pub fn indexed(&self) -> IndexedPair {
        IndexedPair {
            id: self.id.clone(),
            instruction: self.instruction.clone(),
            code: self.code.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstructionIssue {
    WordCount(usize),
    NoActionVerb(String),
    Empty,
}

impl std::fmt::Display for InstructionIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::WordCount(n) => write!(f, "word count {n} outside [{MIN_WORDS}, {MAX_WORDS}]"),
            Self::NoActionVerb(w) => write!(f, "first word {w:?} is not an action verb"),
            Self::Empty => f.write_str("empty instruction"),
        }
    }
}

/// Whitespace-separated words.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn starts_with_action_verb(text: &str) -> bool {
    text.split_whitespace()
        .next()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_ascii_lowercase())
        .is_some_and(|w| ACTION_VERBS.contains(&w.as_str()))
}

pub fn validate_instruction(text: &str) -> Vec<InstructionIssue> {
    let n = word_count(text);
    if n == 0 {
        return vec![InstructionIssue::Empty];
    }
    let mut issues = Vec::new();
    if !(MIN_WORDS..=MAX_WORDS).contains(&n) {
        issues.push(InstructionIssue::WordCount(n));
    }
    if !starts_with_action_verb(text) {
        let first = text.split_whitespace().next().unwrap_or("").to_owned();
        issues.push(InstructionIssue::NoActionVerb(first));
    }
    issues
}

/// Strips fences, surrounding quotes and redundant whitespace.
pub fn normalize_instruction(raw: &str) -> String {
    let unfenced = strip_fences(raw);
    let quotes: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];
    let trimmed = unfenced.trim().trim_matches(quotes).trim();
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstructionOutcome {
    pub instruction: Option<String>,
    pub status: PairStatus,
    pub requests: usize,
    pub issues: Vec<String>,
}

/// Asks for an instruction, regenerating once if the first reply fails
/// validation. A second failure keeps the reply but flags it.
pub fn generate_instruction(code: &str, gateway: &Gateway, prompts: &PromptSet, model_id: &str) -> InstructionOutcome {
    let req = ChatRequest::new(model_id).user(prompts.render(prompts::INSTRUCTION, &[("code", code)]));
    let mut requests = 0;
    let mut last = None;
    let mut issues = Vec::new();
    for _ in 0..2 {
        requests += 1;
        match gateway.chat(&req) {
            Ok(raw) => {
                let text = normalize_instruction(&raw);
                let problems = validate_instruction(&text);
                if problems.is_empty() {
                    return InstructionOutcome {
                        instruction: Some(text),
                        status: PairStatus::Valid,
                        requests,
                        issues: Vec::new(),
                    };
                }
                issues = problems.iter().map(ToString::to_string).collect();
                last = Some(text);
            }
            Err(e) => {
                issues = vec![e.to_string()];
                break;
            }
        }
    }
    let status = if last.is_some() {
        PairStatus::Flagged
    } else {
        PairStatus::Unpaired
    };
    InstructionOutcome {
        instruction: last,
        status,
        requests,
        issues,
    }
}

pub fn pair_entry(entry: &VerifiedEntry, gateway: &Gateway, prompts: &PromptSet, model_id: &str) -> InstructionPair {
    let outcome = generate_instruction(&entry.code, gateway, prompts, model_id);
    InstructionPair {
        id: entry.id.clone(),
        instruction: outcome.instruction.unwrap_or_default(),
        code: entry.code.clone(),
        source_category: entry.source_category,
        verdict: entry.verdict,
        features: entry.features.clone(),
        provenance: Provenance {
            origin_url: entry.origin_url.clone(),
            parent_ids: vec![entry.parent_id.clone()],
        },
        status: outcome.status,
        issues: outcome.issues,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub queries: usize,
    pub top1_acc: f64,
    pub top5_acc: f64,
}

/// Queries the index with each pair's instruction and checks where the pair
/// itself ranks.
pub fn consistency_check(
    pairs: &[IndexedPair],
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
) -> Result<ConsistencyReport, RetrievalError> {
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for p in pairs {
        let r = index.query(&p.instruction, provider, 5)?;
        if r.hits.first().is_some_and(|h| h.pair_id == p.id) {
            top1 += 1;
        }
        if r.hits.iter().any(|h| h.pair_id == p.id) {
            top5 += 1;
        }
    }
    let n = pairs.len().max(1) as f64;
    Ok(ConsistencyReport {
        queries: pairs.len(),
        top1_acc: top1 as f64 / n,
        top5_acc: top5 as f64 / n,
    })
}
