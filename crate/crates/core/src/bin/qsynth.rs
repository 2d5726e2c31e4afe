use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use qsynth::challenge::load_bundles;
use qsynth::config::{composition, Config, RunManifest};
use qsynth::dedup::DedupConfig;
use qsynth::evaluate::{evaluate, render_table};
use qsynth::extract::{load_directory, load_manifest, ExtractedFunction, SourceCategory, SourceRecord};
use qsynth::fsutil::{read_jsonl, write_atomic, write_jsonl};
use qsynth::instruct::{consistency_check, InstructionPair};
use qsynth::rag::{Pipeline, SolveError, SolveOutcome};
use qsynth::retrieval::{IndexedPair, VectorIndex};
use qsynth::stages::{run_dedup, run_extract, run_instruct, run_verify, Modernizer};
use qsynth::verify::VerifiedEntry;

#[derive(Parser)]
#[command(
    name = "qsynth",
    version,
    about = "PennyLane corpus synthesis, retrieval and evaluation"
)]
struct Cli {
    /// JSON config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every seeded component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Chat provider name from the config's gateway.providers.
    #[arg(long, global = true)]
    provider: Option<String>,
    /// Retrieval relevance threshold.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Retrieved examples per query.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Repair rounds after the first generation.
    #[arg(long = "max-fixes", global = true)]
    max_fixes: Option<usize>,
    /// Near-duplicate Jaccard threshold.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run manifest path; derived from the output path by default.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: enumerate functions and keep the quantum-relevant ones.
    Extract {
        /// Source directory or TSV manifest (id, category, url, path).
        #[arg(short, long)]
        input: PathBuf,
        /// Category for every file of a source directory.
        #[arg(long, default_value = "community")]
        category: SourceCategory,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Stage 2: modernize and verify extracted functions.
    Verify {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Stage 3: remove near-duplicates.
    Dedup {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Also write the removed entries and their survivors.
        #[arg(long)]
        duplicates: Option<PathBuf>,
    },
    /// Stage 4: generate instructions.
    Instruct {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Stages 1 to 4 in sequence.
    Build {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, default_value = "community")]
        category: SourceCategory,
        #[arg(short, long)]
        out_dir: PathBuf,
    },
    /// Embed instruction pairs into a vector index.
    Index {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Query an index.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(short, long)]
        query: String,
    },
    /// Solve challenges with retrieval and repair.
    Solve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        challenges: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Independent runs per challenge.
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Score solve traces.
    Eval {
        #[arg(long)]
        outcomes: PathBuf,
        /// Challenge bundles providing reference solutions.
        #[arg(long)]
        challenges: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        pass_k: Option<usize>,
    },
    /// Source composition of a JSONL corpus.
    Profile {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Extract { .. } => "extract",
            Self::Verify { .. } => "verify",
            Self::Dedup { .. } => "dedup",
            Self::Instruct { .. } => "instruct",
            Self::Build { .. } => "build",
            Self::Index { .. } => "index",
            Self::Retrieve { .. } => "retrieve",
            Self::Solve { .. } => "solve",
            Self::Eval { .. } => "eval",
            Self::Profile { .. } => "profile",
        }
    }
}

enum Failure {
    /// Bad arguments, config or input: exit 1.
    Invalid(String),
    /// Failure while running: exit 2.
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn read_input<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    read_jsonl(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn write_output<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), Failure> {
    write_jsonl(path, items).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(runtime)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn manifest_beside(out: &Path) -> PathBuf {
    let name = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{name}.manifest.json"))
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(invalid)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = &cli.provider {
        cfg.gateway.provider = p.clone();
    }
    if let Some(t) = cli.tau {
        cfg.pipeline.tau = t;
    }
    if let Some(k) = cli.k {
        cfg.pipeline.k = k;
    }
    if let Some(t) = cli.max_fixes {
        cfg.pipeline.max_fixes = t;
    }
    if let Some(t) = cli.threshold {
        cfg.dedup.threshold = t;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Command::Eval { pass_k: Some(k), .. } = &cli.command {
        cfg.eval.pass_k = *k;
    }
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

fn load_sources(input: &Path, category: SourceCategory) -> Result<Vec<SourceRecord>, Failure> {
    let records = if input.is_dir() {
        load_directory(input, category)
    } else {
        load_manifest(input)
    };
    records.map_err(invalid)
}

struct Run<'a> {
    cfg: &'a Config,
    manifest: RunManifest,
}

impl Run<'_> {
    fn extract(&mut self, input: &Path, category: SourceCategory) -> Result<Vec<ExtractedFunction>, Failure> {
        let records = load_sources(input, category)?;
        let stage = run_extract(&records);
        for e in &stage.errors {
            log::warn!("{e}");
        }
        if !stage.errors.is_empty() {
            self.manifest
                .warn(format!("{} source files could not be parsed", stage.errors.len()));
        }
        self.manifest.stat("extract", stage.stats);
        Ok(stage.functions)
    }

    fn verify(&mut self, functions: &[ExtractedFunction]) -> Result<Vec<VerifiedEntry>, Failure> {
        let gateway = self.cfg.gateway().map_err(invalid)?;
        let prompts = self.cfg.prompts().map_err(invalid)?;
        let modernizer = gateway.as_ref().map(|gateway| Modernizer {
            gateway,
            prompts: &prompts,
            model: &self.cfg.verify.model,
        });
        let (entries, stats) = run_verify(
            functions,
            modernizer.as_ref(),
            self.cfg.verify.modernize,
            &self.cfg.verify.thresholds,
        );
        if stats.modernize_failures > 0 {
            self.manifest.warn(format!(
                "{} modernization requests failed; originals kept",
                stats.modernize_failures
            ));
            self.manifest.partial = true;
        }
        self.manifest.stat("verify", stats);
        Ok(entries)
    }

    fn dedup(&mut self, entries: Vec<VerifiedEntry>, duplicates: Option<&Path>) -> Result<Vec<VerifiedEntry>, Failure> {
        let cfg = DedupConfig {
            threshold: self.cfg.dedup.threshold,
            seed: self.cfg.dedup_seed(),
        };
        let (kept, dups, stats) = run_dedup(entries, &cfg);
        if let Some(p) = duplicates {
            write_output(p, &dups)?;
            self.manifest.outputs.push(p.to_owned());
        }
        self.manifest.stat("dedup", stats);
        Ok(kept)
    }

    fn instruct(&mut self, entries: &[VerifiedEntry]) -> Result<Vec<InstructionPair>, Failure> {
        let gateway = self
            .cfg
            .gateway()
            .map_err(invalid)?
            .ok_or_else(|| Failure::Invalid("instruction generation needs a chat provider (--provider)".into()))?;
        let prompts = self.cfg.prompts().map_err(invalid)?;
        let (pairs, stats) = run_instruct(entries, &gateway, &prompts, &self.cfg.instruct.model);
        if stats.unpaired > 0 {
            self.manifest.warn(format!("{} entries left unpaired", stats.unpaired));
            self.manifest.partial = true;
        }
        self.manifest.stat("instruct", stats);
        Ok(pairs)
    }

    fn compose(&mut self, cats: impl IntoIterator<Item = SourceCategory>) {
        self.manifest.composition = Some(composition(cats));
    }
}

fn execute(cli: &Cli, args: Vec<String>) -> Outcome {
    let cfg = load_config(cli)?;
    if let Some(n) = cfg.workers {
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let mut run = Run {
        cfg: &cfg,
        manifest: RunManifest::start(cli.command.name(), args, &cfg),
    };
    let manifest_path: Option<PathBuf>;
    let mut failure = None;

    match &cli.command {
        Command::Extract { input, category, out } => {
            run.manifest.inputs.push(input.clone());
            let functions = run.extract(input, *category)?;
            write_output(out, &functions)?;
            run.compose(functions.iter().map(|f| f.source_category));
            run.manifest.outputs.push(out.clone());
            manifest_path = Some(manifest_beside(out));
        }
        Command::Verify { input, out } => {
            run.manifest.inputs.push(input.clone());
            let functions: Vec<ExtractedFunction> = read_input(input)?;
            let entries = run.verify(&functions)?;
            write_output(out, &entries)?;
            run.compose(entries.iter().map(|e| e.source_category));
            run.manifest.outputs.push(out.clone());
            manifest_path = Some(manifest_beside(out));
        }
        Command::Dedup { input, out, duplicates } => {
            run.manifest.inputs.push(input.clone());
            let entries: Vec<VerifiedEntry> = read_input(input)?;
            let kept = run.dedup(entries, duplicates.as_deref())?;
            write_output(out, &kept)?;
            run.compose(kept.iter().map(|e| e.source_category));
            run.manifest.outputs.push(out.clone());
            manifest_path = Some(manifest_beside(out));
        }
        Command::Instruct { input, out } => {
            run.manifest.inputs.push(input.clone());
            let entries: Vec<VerifiedEntry> = read_input(input)?;
            let pairs = run.instruct(&entries)?;
            write_output(out, &pairs)?;
            run.compose(pairs.iter().map(|p| p.source_category));
            run.manifest.outputs.push(out.clone());
            manifest_path = Some(manifest_beside(out));
        }
        Command::Build {
            input,
            category,
            out_dir,
        } => {
            fs::create_dir_all(out_dir).map_err(|e| runtime(format!("{}: {e}", out_dir.display())))?;
            run.manifest.inputs.push(input.clone());
            let functions = run.extract(input, *category)?;
            let path = out_dir.join("functions.jsonl");
            write_output(&path, &functions)?;
            run.manifest.outputs.push(path);
            let entries = run.verify(&functions)?;
            let path = out_dir.join("verified.jsonl");
            write_output(&path, &entries)?;
            run.manifest.outputs.push(path);
            let kept = run.dedup(entries, None)?;
            let path = out_dir.join("deduped.jsonl");
            write_output(&path, &kept)?;
            run.manifest.outputs.push(path);
            let pairs = run.instruct(&kept)?;
            let path = out_dir.join("pairs.jsonl");
            write_output(&path, &pairs)?;
            run.manifest.outputs.push(path);
            run.compose(pairs.iter().map(|p| p.source_category));
            manifest_path = Some(out_dir.join("build.manifest.json"));
        }
        Command::Index { input, out } => {
            run.manifest.inputs.push(input.clone());
            let pairs: Vec<InstructionPair> = read_input(input)?;
            let indexed: Vec<IndexedPair> = pairs.iter().map(InstructionPair::indexed).collect();
            let embedder = cfg.embedder().map_err(invalid)?;
            let index =
                VectorIndex::build(indexed.clone(), embedder.as_ref(), cfg.embedding_seed()).map_err(runtime)?;
            index.save(out).map_err(runtime)?;
            let report = consistency_check(&indexed, &index, embedder.as_ref()).map_err(runtime)?;
            run.manifest.stat("index", index.manifest());
            run.manifest.stat("consistency", report);
            run.compose(pairs.iter().map(|p| p.source_category));
            run.manifest.outputs.push(out.clone());
            manifest_path = Some(out.join("run.manifest.json"));
        }
        Command::Retrieve { index, query } => {
            let index = VectorIndex::load(index).map_err(invalid)?;
            let embedder = cfg.embedder_for(index.manifest()).map_err(invalid)?;
            let result = index.query(query, embedder.as_ref(), cfg.pipeline.k).map_err(runtime)?;
            let hits: Vec<_> = result
                .hits
                .iter()
                .map(|h| {
                    let pair = index.pair(&h.pair_id);
                    serde_json::json!({
                        "pair_id": h.pair_id,
                        "score": h.score,
                        "instruction": pair.map(|p| p.instruction.as_str()),
                    })
                })
                .collect();
            let out =
                serde_json::json!({"k": result.k, "max_score": result.hits.first().map(|h| h.score), "hits": hits});
            println!("{}", serde_json::to_string_pretty(&out).map_err(runtime)?);
            manifest_path = None;
        }
        Command::Solve {
            index,
            challenges,
            out,
            runs,
        } => {
            run.manifest.inputs.extend([index.clone(), challenges.clone()]);
            let idx = VectorIndex::load(index).map_err(invalid)?;
            let tasks = load_bundles(challenges).map_err(invalid)?;
            let embedder = cfg.embedder_for(idx.manifest()).map_err(invalid)?;
            let gateway = cfg
                .gateway()
                .map_err(invalid)?
                .ok_or_else(|| Failure::Invalid("solving needs a chat provider (--provider)".into()))?;
            let prompts = cfg.prompts().map_err(invalid)?;
            let executor = cfg.executor();
            let whitelist = cfg.whitelist().map_err(invalid)?;
            let rules = cfg.error_rules().map_err(invalid)?;
            let pipeline = Pipeline {
                index: &idx,
                embedder: embedder.as_ref(),
                gateway: &gateway,
                prompts: &prompts,
                executor: &executor,
                whitelist: &whitelist,
                rules: &rules,
                cfg: cfg.pipeline.clone(),
            };
            let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|t| (0..*runs).map(move |r| (t, r))).collect();
            let results: Vec<Result<SolveOutcome, SolveError>> = jobs
                .par_iter()
                .map(|&(t, r)| pipeline.solve_run(&tasks[t], r))
                .collect();
            let mut outcomes = Vec::new();
            let mut errors = 0;
            for r in results {
                match r {
                    Ok(o) => outcomes.push(o),
                    Err(e) => {
                        errors += 1;
                        run.manifest.warn(e.to_string());
                        if let SolveError::Gateway { partial, .. } = e {
                            outcomes.push(*partial);
                        }
                    }
                }
            }
            write_output(out, &outcomes)?;
            run.manifest.stat("challenges", tasks.len());
            run.manifest.stat("runs", runs);
            run.manifest
                .stat("passed", outcomes.iter().filter(|o| o.final_pass).count());
            run.manifest.outputs.push(out.clone());
            if errors > 0 {
                run.manifest.partial = true;
                failure = Some(Failure::Runtime(format!(
                    "{errors} solve runs aborted; partial traces written to {}",
                    out.display()
                )));
            }
            manifest_path = Some(manifest_beside(out));
        }
        Command::Eval {
            outcomes,
            challenges,
            out,
            ..
        } => {
            run.manifest.inputs.push(outcomes.clone());
            let traces: Vec<SolveOutcome> = read_input(outcomes)?;
            let mut references = HashMap::new();
            if let Some(dir) = challenges {
                run.manifest.inputs.push(dir.clone());
                for t in load_bundles(dir).map_err(invalid)? {
                    if let Some(r) = t.reference_code {
                        references.insert(t.id, r);
                    }
                }
            }
            let whitelist = cfg.whitelist().map_err(invalid)?;
            let report = evaluate(&traces, &references, &whitelist, cfg.eval.pass_k);
            for w in &report.warnings {
                run.manifest.warn(w.clone());
            }
            write_json(out, &report)?;
            let table = render_table(&report);
            let table_path = out.with_extension("txt");
            write_atomic(&table_path, table.as_bytes()).map_err(runtime)?;
            print!("{table}");
            run.manifest.stat("aggregate", &report.aggregate);
            run.manifest.outputs.extend([out.clone(), table_path]);
            manifest_path = Some(manifest_beside(out));
        }
        Command::Profile { input, out } => {
            run.manifest.inputs.push(input.clone());
            let rows: Vec<serde_json::Value> = read_input(input)?;
            let mut cats = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                let c = row.get("source_category").and_then(|v| v.as_str()).ok_or_else(|| {
                    Failure::Invalid(format!("{}:{}: missing source_category", input.display(), i + 1))
                })?;
                cats.push(
                    c.parse::<SourceCategory>()
                        .map_err(|e| Failure::Invalid(format!("{}:{}: {e}", input.display(), i + 1)))?,
                );
            }
            let comp = composition(cats);
            println!("{:<10} {:>8} {:>7}", "source", "samples", "%");
            for (c, share) in &comp.categories {
                println!("{:<10} {:>8} {:>6.1}%", c.as_str(), share.count, share.percent);
            }
            println!("{:<10} {:>8}", "total", comp.total);
            if let Some(o) = out {
                write_json(o, &comp)?;
                run.manifest.outputs.push(o.clone());
            }
            run.manifest.composition = Some(comp);
            manifest_path = out.as_deref().map(manifest_beside);
        }
    }

    if let Some(path) = cli.manifest.clone().or(manifest_path) {
        run.manifest
            .finish(&path)
            .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    failure.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli, args.into_iter().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
