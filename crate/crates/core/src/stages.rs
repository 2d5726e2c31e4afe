//! The four corpus stages as batch operations over JSONL-shaped records.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dedup::{dedup, DedupConfig, DuplicateRecord};
use crate::extract::{extract_all, ExtractError, ExtractedFunction, ExtractionStats, SourceRecord};
use crate::gateway::Gateway;
use crate::instruct::{pair_entry, InstructionPair, PairStatus};
use crate::prompts::PromptSet;
use crate::verify::{verify_entry, ModernizeMode, Thresholds, Verdict, VerifiedEntry};

pub struct ExtractStage {
    /// Retained functions only.
    pub functions: Vec<ExtractedFunction>,
    pub stats: ExtractionStats,
    pub errors: Vec<ExtractError>,
}

pub fn run_extract(records: &[SourceRecord]) -> ExtractStage {
    let (extraction, errors) = extract_all(records);
    ExtractStage {
        functions: extraction.functions.into_iter().filter(|f| f.is_retained()).collect(),
        stats: extraction.stats,
        errors,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyStats {
    pub input: usize,
    pub original_valid: usize,
    pub transformed_valid: usize,
    pub rejected: usize,
    pub fallback_applied: usize,
    pub modernize_failures: usize,
}

pub struct Modernizer<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub model: &'a str,
}

/// Verified entries in input order, rejected ones dropped.
pub fn run_verify(
    functions: &[ExtractedFunction],
    modernizer: Option<&Modernizer<'_>>,
    mode: ModernizeMode,
    thresholds: &Thresholds,
) -> (Vec<VerifiedEntry>, VerifyStats) {
    let gw = modernizer.map(|m| (m.gateway, m.prompts, m.model));
    let entries: Vec<VerifiedEntry> = functions
        .par_iter()
        .map(|f| verify_entry(f, gw, mode, thresholds))
        .collect();
    let mut stats = VerifyStats {
        input: entries.len(),
        ..VerifyStats::default()
    };
    for e in &entries {
        match e.verdict {
            Verdict::OriginalValid => stats.original_valid += 1,
            Verdict::TransformedValid => stats.transformed_valid += 1,
            Verdict::Rejected => stats.rejected += 1,
        }
        stats.fallback_applied += usize::from(e.report.fallback_applied);
        stats.modernize_failures += usize::from(e.modernize_error.is_some());
    }
    let kept = entries.into_iter().filter(|e| e.verdict != Verdict::Rejected).collect();
    (kept, stats)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupStats {
    pub input: usize,
    pub retained: usize,
    pub removed: usize,
    pub candidate_pairs: usize,
}

pub fn run_dedup(
    entries: Vec<VerifiedEntry>,
    cfg: &DedupConfig,
) -> (Vec<VerifiedEntry>, Vec<DuplicateRecord>, DedupStats) {
    let outcome = dedup(entries.iter().map(|e| (e.id.as_str(), e.code.as_str())), cfg);
    let stats = DedupStats {
        input: entries.len(),
        retained: outcome.retained.len(),
        removed: outcome.duplicates.len(),
        candidate_pairs: outcome.candidate_pairs,
    };
    let mut keep = vec![false; entries.len()];
    for &i in &outcome.retained {
        keep[i] = true;
    }
    let retained = entries
        .into_iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then_some(e))
        .collect();
    (retained, outcome.duplicates, stats)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructStats {
    pub input: usize,
    pub valid: usize,
    pub flagged: usize,
    pub unpaired: usize,
}

/// Pairs in input order; unpaired entries are dropped.
pub fn run_instruct(
    entries: &[VerifiedEntry],
    gateway: &Gateway,
    prompts: &PromptSet,
    model: &str,
) -> (Vec<InstructionPair>, InstructStats) {
    let pairs: Vec<InstructionPair> = entries
        .par_iter()
        .map(|e| pair_entry(e, gateway, prompts, model))
        .collect();
    let mut stats = InstructStats {
        input: pairs.len(),
        ..InstructStats::default()
    };
    for p in &pairs {
        match p.status {
            PairStatus::Valid => stats.valid += 1,
            PairStatus::Flagged => stats.flagged += 1,
            PairStatus::Unpaired => stats.unpaired += 1,
        }
    }
    let kept = pairs.into_iter().filter(|p| p.status != PairStatus::Unpaired).collect();
    (kept, stats)
}
