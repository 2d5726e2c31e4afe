//! Per-challenge and aggregate evaluation of solve traces.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyzer::Whitelist;
use crate::metrics::{self, partial_credit};
use crate::rag::SolveOutcome;
use crate::sandbox::ErrorCategory;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub token_bleu: f64,
    pub weighted_bleu: f64,
    pub ast_match: f64,
    pub dataflow_match: f64,
    pub codebleu: f64,
    pub rouge_l: f64,
}

impl SimilarityRow {
    /// All metrics of one hypothesis against one reference; an empty token
    /// stream scores 0 throughout.
    pub fn compute(h: &str, r: &str) -> Self {
        match (metrics::codebleu(h, r), metrics::rouge_l(h, r)) {
            (Ok(c), Ok(rouge_l)) => Self {
                token_bleu: c.token_bleu,
                weighted_bleu: c.weighted_bleu,
                ast_match: c.ast_match,
                dataflow_match: c.dataflow_match,
                codebleu: c.codebleu,
                rouge_l,
            },
            _ => Self::default(),
        }
    }

    fn mean(rows: &[SimilarityRow]) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&SimilarityRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let token_bleu = avg(|r| r.token_bleu);
        let weighted_bleu = avg(|r| r.weighted_bleu);
        let ast_match = avg(|r| r.ast_match);
        let dataflow_match = avg(|r| r.dataflow_match);
        Some(Self {
            token_bleu,
            weighted_bleu,
            ast_match,
            dataflow_match,
            codebleu: 0.25 * (token_bleu + weighted_bleu + ast_match + dataflow_match),
            rouge_l: avg(|r| r.rouge_l),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeRow {
    pub challenge_id: String,
    /// Final pass of each run, in run order.
    pub runs: Vec<bool>,
    pub partial_credit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<SimilarityRow>,
    pub categories: BTreeMap<ErrorCategory, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub challenges: usize,
    pub pass_at_1: f64,
    pub k: usize,
    /// `None` when some challenge has fewer than `k` runs.
    pub pass_at_k: Option<f64>,
    pub partial_credit: f64,
    pub hallucination_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<SimilarityRow>,
    pub categories: BTreeMap<ErrorCategory, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<ChallengeRow>,
    pub aggregate: Aggregate,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn final_code(o: &SolveOutcome) -> Option<&str> {
    o.last_attempt().and_then(|a| a.code.as_deref())
}

/// Groups outcomes by challenge (first-appearance order, runs sorted by run
/// number) and scores them. `references` maps challenge ids to known-good
/// solutions.
pub fn evaluate(
    outcomes: &[SolveOutcome],
    references: &HashMap<String, String>,
    wl: &Whitelist,
    k: usize,
) -> EvaluationReport {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&SolveOutcome>> = HashMap::new();
    for o in outcomes {
        let g = groups.entry(&o.challenge_id).or_default();
        if g.is_empty() {
            order.push(&o.challenge_id);
        }
        g.push(o);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|o| o.run);
    }

    let rows: Vec<ChallengeRow> = order
        .par_iter()
        .map(|id| {
            let runs = &groups[id];
            // a run without any executed tests earns no credit
            let credit: Vec<f64> = runs
                .iter()
                .map(|o| {
                    o.last_attempt()
                        .and_then(|a| a.result.as_ref())
                        .and_then(|r| partial_credit(r).ok())
                        .unwrap_or(0.0)
                })
                .collect();
            let similarity = references.get(*id).and_then(|r| {
                let per_run: Vec<SimilarityRow> = runs
                    .iter()
                    .map(|o| final_code(o).map_or_else(SimilarityRow::default, |h| SimilarityRow::compute(h, r)))
                    .collect();
                SimilarityRow::mean(&per_run)
            });
            let mut categories = BTreeMap::new();
            for o in runs {
                if let Some(a) = o.last_attempt().filter(|a| a.category != ErrorCategory::None) {
                    *categories.entry(a.category).or_insert(0) += 1;
                }
            }
            ChallengeRow {
                challenge_id: id.to_string(),
                runs: runs.iter().map(|o| o.final_pass).collect(),
                partial_credit: credit.iter().sum::<f64>() / credit.len() as f64,
                similarity,
                categories,
            }
        })
        .collect();

    let mut warnings = Vec::new();
    let matrix: Vec<Vec<bool>> = rows.iter().map(|r| r.runs.clone()).collect();
    let pass_at_1 = metrics::pass_at_k(&matrix, 1).unwrap_or(0.0);
    let pass_at_k = match metrics::pass_at_k(&matrix, k) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(format!("pass@{k} not reported: {e}"));
            None
        }
    };
    let solutions: Vec<&str> = outcomes.iter().filter_map(final_code).collect();
    if solutions.is_empty() {
        warnings.push("no generated code; hallucination rate reported as 0".into());
    }
    let mut categories = BTreeMap::new();
    for r in &rows {
        for (c, n) in &r.categories {
            *categories.entry(*c).or_insert(0) += n;
        }
    }
    let sims: Vec<SimilarityRow> = rows.iter().filter_map(|r| r.similarity).collect();
    let aggregate = Aggregate {
        challenges: rows.len(),
        pass_at_1,
        k,
        pass_at_k,
        partial_credit: if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| r.partial_credit).sum::<f64>() / rows.len() as f64
        },
        hallucination_rate: metrics::hallucination_rate(&solutions, wl),
        similarity: SimilarityRow::mean(&sims),
        categories,
    };
    EvaluationReport {
        rows,
        aggregate,
        warnings,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

/// Fixed-width text table with CB / RL / AST / DF columns.
pub fn render_table(report: &EvaluationReport) -> String {
    let width = report
        .rows
        .iter()
        .map(|r| r.challenge_id.len())
        .chain(["challenge".len(), "mean".len()])
        .max()
        .unwrap_or(9);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
        "challenge", "CB", "RL", "AST", "DF", "pass", "credit"
    );
    let line = |out: &mut String, id: &str, s: Option<SimilarityRow>, pass: String, credit: f64| {
        let _ = writeln!(
            out,
            "{id:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6.3}",
            cell(s.map(|s| s.codebleu)),
            cell(s.map(|s| s.rouge_l)),
            cell(s.map(|s| s.ast_match)),
            cell(s.map(|s| s.dataflow_match)),
            pass,
            credit
        );
    };
    for r in &report.rows {
        let passes = r.runs.iter().filter(|&&p| p).count();
        line(
            &mut out,
            &r.challenge_id,
            r.similarity,
            format!("{passes}/{}", r.runs.len()),
            r.partial_credit,
        );
    }
    let a = &report.aggregate;
    line(
        &mut out,
        "mean",
        a.similarity,
        format!("{:.2}", a.pass_at_1),
        a.partial_credit,
    );
    let _ = writeln!(
        out,
        "pass@1 {:.3}  pass@{} {}  hallucination {:.3}",
        a.pass_at_1,
        a.k,
        cell(a.pass_at_k),
        a.hallucination_rate
    );
    out
}
