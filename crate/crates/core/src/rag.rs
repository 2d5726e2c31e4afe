//! Retrieval-augmented solving with a bounded execute-and-repair loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::Whitelist;
use crate::challenge::ChallengeTask;
use crate::gateway::{ChatRequest, Gateway, GatewayError, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use crate::prompts::{self, PromptSet};
use crate::pysyntax::parses;
use crate::retrieval::{EmbeddingProvider, RetrievalError, RetrievalResult, VectorIndex};
use crate::sandbox::{classify_error, ErrorCategory, ErrorRules, ExecutionResult, Executor};

pub const DEFAULT_TAU: f64 = 0.60;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_MAX_FIXES: usize = 2;
const FEEDBACK_CAP: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub tau: f64,
    pub k: usize,
    pub max_fixes: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub generator_model: String,
    pub expander_model: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            k: DEFAULT_K,
            max_fixes: DEFAULT_MAX_FIXES,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            generator_model: String::new(),
            expander_model: String::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Base,
    Rag,
}

/// Retrieved context is used only when the best score reaches `tau`. An
/// empty index scores negative infinity and so always yields `Base`.
pub fn prompt_kind(max_score: f64, tau: f64) -> PromptKind {
    if max_score >= tau {
        PromptKind::Rag
    } else {
        PromptKind::Base
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub kind: PromptKind,
    pub text: String,
}

/// Framework-oriented rewrite of the description; the description itself on
/// gateway failure or an empty reply.
pub fn expand_query(
    task: &ChallengeTask,
    gateway: &Gateway,
    prompts: &PromptSet,
    cfg: &PipelineConfig,
) -> (String, bool) {
    let req = request(
        cfg,
        &cfg.expander_model,
        prompts.render(prompts::EXPAND_QUERY, &[("description", &task.description)]),
    );
    match gateway.chat(&req) {
        Ok(reply) if !reply.trim().is_empty() => (reply.trim().to_owned(), false),
        Ok(_) => {
            log::warn!("{}: empty query expansion, using the description", task.id);
            (task.description.clone(), true)
        }
        Err(e) => {
            log::warn!("{}: query expansion failed ({e}), using the description", task.id);
            (task.description.clone(), true)
        }
    }
}

fn request(cfg: &PipelineConfig, model: &str, prompt: String) -> ChatRequest {
    let mut req = ChatRequest::new(model).user(prompt);
    req.temperature = cfg.temperature;
    req.max_tokens = cfg.max_tokens;
    req
}

fn examples_block(retrieval: &RetrievalResult, index: &VectorIndex, prompts: &PromptSet) -> String {
    let mut out = Vec::new();
    for (rank, hit) in retrieval.hits.iter().enumerate() {
        let Some(pair) = index.pair(&hit.pair_id) else {
            continue;
        };
        out.push(prompts.render(
            prompts::RAG_EXAMPLE,
            &[
                ("rank", &(rank + 1).to_string()),
                ("score", &format!("{:.3}", hit.score)),
                ("instruction", &pair.instruction),
                ("code", &pair.code),
            ],
        ));
    }
    out.join("\n")
}

pub fn build_prompt(
    task: &ChallengeTask,
    retrieval: &RetrievalResult,
    index: &VectorIndex,
    cfg: &PipelineConfig,
    prompts: &PromptSet,
) -> Prompt {
    let kind = prompt_kind(retrieval.max_score, cfg.tau);
    let text = match kind {
        PromptKind::Base => prompts.render(
            prompts::BASE,
            &[("description", &task.description), ("template", &task.template_code)],
        ),
        PromptKind::Rag => prompts.render(
            prompts::RAG,
            &[
                ("description", &task.description),
                ("template", &task.template_code),
                ("examples", &examples_block(retrieval, index, prompts)),
            ],
        ),
    };
    Prompt { kind, text }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no parseable code in response")]
pub struct FormatError;

/// First python-tagged fenced block, else the longest fenced block, else the
/// whole response when it parses. An unterminated fence runs to the end.
pub fn extract_code(response: &str) -> Result<String, FormatError> {
    let mut blocks: Vec<(String, String)> = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in response.lines() {
        let trimmed = line.trim_start();
        match open.take() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    let tag = info.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
                    open = Some((tag, Vec::new()));
                }
            }
            Some((tag, mut body)) => {
                if trimmed.starts_with("```") && trimmed.trim_end().trim_start_matches('`').is_empty() {
                    blocks.push((tag, body.join("\n")));
                } else {
                    body.push(line);
                    open = Some((tag, body));
                }
            }
        }
    }
    if let Some((tag, body)) = open {
        blocks.push((tag, body.join("\n")));
    }
    let is_python = |t: &str| matches!(t, "python" | "py" | "python3");
    if let Some((_, body)) = blocks.iter().find(|(t, b)| is_python(t) && !b.trim().is_empty()) {
        return Ok(with_newline(body));
    }
    // max_by_key keeps the last maximum, so scan in reverse to prefer the first
    if let Some((_, body)) = blocks
        .iter()
        .rev()
        .filter(|(_, b)| !b.trim().is_empty())
        .max_by_key(|(_, b)| b.len())
    {
        return Ok(with_newline(body));
    }
    if !response.trim().is_empty() && parses(response) {
        return Ok(with_newline(response.trim_matches('\n')));
    }
    Err(FormatError)
}

fn with_newline(s: &str) -> String {
    let mut out = s.to_owned();
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationAttempt {
    /// 0 for the initial generation, t for the t-th repair.
    pub iteration: usize,
    pub code: Option<String>,
    pub result: Option<ExecutionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_error: Option<String>,
    pub category: ErrorCategory,
}

impl GenerationAttempt {
    pub fn passed(&self) -> bool {
        self.result.as_ref().is_some_and(|r| r.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub challenge_id: String,
    #[serde(default)]
    pub run: usize,
    pub expanded_query: String,
    #[serde(default)]
    pub expansion_fallback: bool,
    pub retrieval: RetrievalResult,
    pub prompt_kind: PromptKind,
    pub attempts: Vec<GenerationAttempt>,
    pub final_pass: bool,
}

impl SolveOutcome {
    pub fn last_attempt(&self) -> Option<&GenerationAttempt> {
        self.attempts.last()
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("{challenge_id}: {error}")]
    Gateway {
        challenge_id: String,
        error: GatewayError,
        partial: Box<SolveOutcome>,
    },
    #[error("{challenge_id}: retrieval failed: {error}")]
    Retrieval {
        challenge_id: String,
        error: RetrievalError,
    },
}

impl SolveError {
    pub fn partial(&self) -> Option<&SolveOutcome> {
        match self {
            Self::Gateway { partial, .. } => Some(partial),
            Self::Retrieval { .. } => None,
        }
    }
}

/// Everything a solve needs besides the task.
pub struct Pipeline<'a> {
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn EmbeddingProvider,
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub executor: &'a dyn Executor,
    pub whitelist: &'a Whitelist,
    pub rules: &'a ErrorRules,
    pub cfg: PipelineConfig,
}

fn feedback(attempt: &GenerationAttempt) -> String {
    let mut s = match (&attempt.result, &attempt.format_error) {
        (_, Some(e)) => format!("The response contained no parseable Python code block ({e})."),
        (Some(r), None) => {
            let mut s = format!("{} of {} tests passed.", r.tests_passed, r.tests_total);
            for t in r.tests.iter().filter(|t| !t.passed) {
                s.push_str(&format!("\n- {}: {}", t.name, t.message.trim()));
            }
            if !r.stderr.trim().is_empty() {
                s.push_str("\nstderr:\n");
                s.push_str(r.stderr.trim());
            }
            s
        }
        (None, None) => String::new(),
    };
    if s.len() > FEEDBACK_CAP {
        let mut cut = FEEDBACK_CAP;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
        s.push_str("\n[truncated]");
    }
    s
}

impl Pipeline<'_> {
    fn attempt(&self, task: &ChallengeTask, iteration: usize, response: &str) -> GenerationAttempt {
        match extract_code(response) {
            Err(e) => GenerationAttempt {
                iteration,
                code: None,
                result: None,
                format_error: Some(e.to_string()),
                category: ErrorCategory::FormattingFailure,
            },
            Ok(code) => {
                let result = self.executor.execute(&code, task);
                let category = classify_error(&result, Some(&code), self.whitelist, self.rules);
                GenerationAttempt {
                    iteration,
                    code: Some(code),
                    result: Some(result),
                    format_error: None,
                    category,
                }
            }
        }
    }

    fn fix_prompt(
        &self,
        task: &ChallengeTask,
        kind: PromptKind,
        examples: &str,
        previous: &GenerationAttempt,
    ) -> String {
        let examples_section = match kind {
            PromptKind::Base => String::new(),
            PromptKind::Rag => format!("\nRetrieved examples:\n{examples}\n\n{}\n", prompts::SELECTIVE_CONTEXT),
        };
        self.prompts.render(
            prompts::FIX,
            &[
                ("description", &task.description),
                ("template", &task.template_code),
                ("previous_code", previous.code.as_deref().unwrap_or("")),
                ("feedback", &feedback(previous)),
                ("examples_section", &examples_section),
            ],
        )
    }

    pub fn solve(&self, task: &ChallengeTask) -> Result<SolveOutcome, SolveError> {
        self.solve_run(task, 0)
    }

    /// One independent run: expand, retrieve, generate, then repair up to
    /// `max_fixes` times, stopping at the first passing attempt.
    pub fn solve_run(&self, task: &ChallengeTask, run: usize) -> Result<SolveOutcome, SolveError> {
        let cfg = &self.cfg;
        let (expanded_query, expansion_fallback) = expand_query(task, self.gateway, self.prompts, cfg);
        let retrieval = if self.index.is_empty() {
            RetrievalResult::empty(cfg.k)
        } else {
            self.index
                .query(&expanded_query, self.embedder, cfg.k)
                .map_err(|error| SolveError::Retrieval {
                    challenge_id: task.id.clone(),
                    error,
                })?
        };
        let prompt = build_prompt(task, &retrieval, self.index, cfg, self.prompts);
        let examples = match prompt.kind {
            PromptKind::Rag => examples_block(&retrieval, self.index, self.prompts),
            PromptKind::Base => String::new(),
        };
        let mut outcome = SolveOutcome {
            challenge_id: task.id.clone(),
            run,
            expanded_query,
            expansion_fallback,
            retrieval,
            prompt_kind: prompt.kind,
            attempts: Vec::new(),
            final_pass: false,
        };
        for iteration in 0..=cfg.max_fixes {
            let text = match outcome.attempts.last() {
                None => prompt.text.clone(),
                Some(prev) => self.fix_prompt(task, prompt.kind, &examples, prev),
            };
            let response = match self.gateway.chat(&request(cfg, &cfg.generator_model, text)) {
                Ok(r) => r,
                Err(error) => {
                    return Err(SolveError::Gateway {
                        challenge_id: task.id.clone(),
                        error,
                        partial: Box::new(outcome),
                    })
                }
            };
            let attempt = self.attempt(task, iteration, &response);
            let passed = attempt.passed();
            outcome.attempts.push(attempt);
            if passed {
                outcome.final_pass = true;
                break;
            }
        }
        Ok(outcome)
    }
}
