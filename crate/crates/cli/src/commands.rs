//! Subcommand implementations. Each command resolves its settings (flags
//! over config file over defaults), snapshots them into a manifest, runs the
//! pipeline stage, and writes artifacts into the per-manifest folder.
//!
//! Terminal output follows a small protocol: `manifest <hash>` first, one
//! `wrote <path>` line per artifact, then free-form summary lines.

use std::io::BufWriter;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use genbias::backends::replay::RecordingBackend;
use genbias::backends::{
    run_generation, score_attributes, AttributeDistribution, GenerationRecord, PromptJob,
};
use genbias::hashing::sha256_hex;
use genbias::lexicon::AttributeLexicon;
use genbias::metrics::{build_report, MetricConfig};
use genbias::mitigation::{self, guide_instruction, SweepError};
use genbias::probes::{
    build_llm_generated, build_naturally_sourced, build_template, parse_corpus_tsv, ProbeError,
    ProbeSet, TemplateSpec, Topic, DEFAULT_OVERLAP_THRESHOLD,
};
use genbias::tuning::{
    pretrained_demo_model, AblationRow, ExperimentError, LossSet, ToyExperiment, ToyLm, TrainError,
};
use serde_json::{json, Value};

use crate::backend::{resolve_backend, BackendOpts, BackendSpec, DEFAULT_MODEL_SEED};
use crate::config::{
    resolve_decode, resolve_grid, resolve_tune, DecodeOpts, FileConfig, SweepOpts, TuneOpts,
};
use crate::errors::{io_error, request_error, AppError};
use crate::manifest::{
    canonical_probe_bytes, read_jsonl_records, read_probe_file, tool_stamp, ArtifactDir,
    RunManifest,
};
use crate::render;

/// Settings shared by every command, resolved from global flags + config.
pub struct Ctx {
    pub file: FileConfig,
    pub out_dir: PathBuf,
    pub lexicon: AttributeLexicon,
    pub lexicon_sha256: String,
    pub seed: u64,
    pub workers: usize,
}

/// Prints the manifest hash and the manifest file itself; artifact `wrote`
/// lines follow.
fn announce(dir: &ArtifactDir) {
    println!("manifest {}", dir.hash());
    println!("wrote {}", dir.root().join("manifest.json").display());
}

impl Ctx {
    pub fn resolve(
        file: FileConfig,
        out_dir: Option<PathBuf>,
        lexicon: Option<PathBuf>,
        seed: Option<u64>,
        workers: Option<usize>,
    ) -> Result<Self, AppError> {
        let lexicon_path = lexicon.or_else(|| file.lexicon.clone());
        let lexicon = match &lexicon_path {
            Some(path) => AttributeLexicon::load(path)
                .map_err(|e| AppError::data(format!("{}: {e}", path.display())))?,
            None => AttributeLexicon::default_pairs(),
        };
        let lexicon_sha256 = sha256_hex(lexicon.to_tsv().as_bytes());
        Ok(Ctx {
            out_dir: out_dir.or_else(|| file.out_dir.clone()).unwrap_or_else(|| "artifacts".into()),
            seed: seed.or(file.seed).unwrap_or(0),
            workers: workers.or(file.workers).unwrap_or(4).max(1),
            file,
            lexicon,
            lexicon_sha256,
        })
    }
}

// ---------------------------------------------------------------------------
// build-probes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyChoice {
    /// Fixed templates over the four built-in topic word lists.
    Template,
    /// Rewrite corpus sentences that mention one neutral human term.
    Natural,
    /// Ask a backend to generate statements, then dedup.
    Llm,
}

#[derive(Debug, Args)]
pub struct BuildProbesArgs {
    /// Probe construction strategy.
    #[arg(long, value_enum)]
    pub strategy: StrategyChoice,
    /// Name for the probe set (defaults to the strategy name).
    #[arg(long)]
    pub set_name: Option<String>,
    /// Corpus TSV (`id<TAB>sentence`) for --strategy natural.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Example statement for --strategy llm.
    #[arg(long)]
    pub seed_statement: Option<String>,
    /// Number of probes to collect for --strategy llm.
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    /// Near-duplicate Jaccard threshold for --strategy llm.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub backend: BackendOpts,
    #[command(flatten)]
    pub decode: DecodeOpts,
}

/// Classifies llm-builder failures: the backend not cooperating is a backend
/// error, a bad threshold is the caller's, anything else is data.
fn llm_probe_error(e: ProbeError) -> AppError {
    match e {
        ProbeError::Backend(inner) => request_error(inner),
        ProbeError::InsufficientGenerated { .. } => AppError::Backend(e.to_string()),
        ProbeError::BadThreshold(_) | ProbeError::EmptySeedStatement => {
            AppError::config(e.to_string())
        }
        other => AppError::data(other.to_string()),
    }
}

pub fn build_probes(ctx: &Ctx, args: &BuildProbesArgs) -> Result<(), AppError> {
    let mut decode_used = None;
    let mut backend_desc = None;
    let (set, options) = match args.strategy {
        StrategyChoice::Template => {
            let name = args.set_name.as_deref().unwrap_or("template");
            let specs: Vec<TemplateSpec> =
                Topic::ALL.iter().map(|&t| TemplateSpec::default_for(t)).collect();
            let set = build_template(&ctx.lexicon, name, &specs)
                .map_err(|e| AppError::data(e.to_string()))?;
            (set, json!({ "strategy": "template" }))
        }
        StrategyChoice::Natural => {
            let corpus_path = args
                .corpus
                .as_ref()
                .ok_or_else(|| AppError::config("--corpus is required with --strategy natural"))?;
            let content = std::fs::read_to_string(corpus_path)
                .map_err(|e| io_error(corpus_path, e))?;
            let rows = parse_corpus_tsv(&content)
                .map_err(|e| AppError::data(format!("{}: {e}", corpus_path.display())))?;
            let name = args.set_name.as_deref().unwrap_or("natural");
            let set = build_naturally_sourced(&ctx.lexicon, name, &rows)
                .map_err(|e| AppError::data(format!("{}: {e}", corpus_path.display())))?;
            (set, json!({ "strategy": "natural", "corpus": corpus_path.display().to_string() }))
        }
        StrategyChoice::Llm => {
            let statement = args.seed_statement.as_deref().ok_or_else(|| {
                AppError::config("--seed-statement is required with --strategy llm")
            })?;
            let threshold = args.threshold.unwrap_or(DEFAULT_OVERLAP_THRESHOLD);
            let spec = resolve_backend(&args.backend, &ctx.file.backend)?;
            let backend = spec.build()?;
            let decode = resolve_decode(&args.decode, &ctx.file.decode, ctx.seed);
            let name = args.set_name.as_deref().unwrap_or("llm");
            let set = build_llm_generated(
                backend.as_ref(),
                &ctx.lexicon,
                name,
                statement,
                args.count,
                threshold,
                &decode,
            )
            .map_err(llm_probe_error)?;
            backend_desc = Some(spec.descriptor());
            decode_used = Some(decode);
            (
                set,
                json!({
                    "strategy": "llm",
                    "seed_statement": statement,
                    "count": args.count,
                    "threshold": threshold,
                }),
            )
        }
    };

    let bytes = canonical_probe_bytes(&set)?;
    let mut manifest = RunManifest::new("build-probes", ctx.seed, ctx.lexicon_sha256.clone())
        .with_probes(&set.name, sha256_hex(&bytes))
        .with_options(options);
    if let Some(decode) = &decode_used {
        manifest = manifest.with_decode(decode);
    }
    if let Some(desc) = backend_desc {
        manifest = manifest.with_backend(desc);
    }
    let dir = ArtifactDir::create(&ctx.out_dir, &manifest)?;
    let path = dir.write_jsonl_body("probes", &format!("{}.jsonl", set.name), &bytes)?;
    announce(&dir);
    println!("wrote {}", path.display());
    println!("{} probes in set {:?}", set.len(), set.name);
    Ok(())
}

// ---------------------------------------------------------------------------
// run / guide-run
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Probe set JSONL.
    #[arg(long, value_name = "FILE")]
    pub probes: PathBuf,
    /// Append ", and" to each probe at prompt time (skipped when already
    /// present), nudging the model to continue the clause.
    #[arg(long)]
    pub append_and: bool,
    /// Method label stamped into the report.
    #[arg(long)]
    pub method: Option<String>,
    /// Report set name (defaults to the probe set's own name).
    #[arg(long)]
    pub set_name: Option<String>,
    /// Record live responses into a replay JSONL file for offline reruns.
    #[arg(long, value_name = "FILE")]
    pub record: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendOpts,
    #[command(flatten)]
    pub decode: DecodeOpts,
}

fn make_jobs(set: &ProbeSet, append_and: bool, guided: bool) -> Result<Vec<PromptJob>, AppError> {
    set.probes
        .iter()
        .map(|p| {
            let mut prompt = p.text.clone();
            if append_and && !prompt.ends_with(", and") {
                prompt.push_str(", and");
            }
            if guided {
                prompt = guide_instruction(&prompt)
                    .map_err(|e| AppError::data(format!("probe {}: {e}", p.id)))?;
            }
            Ok(PromptJob { probe_id: p.id.clone(), prompt })
        })
        .collect()
}

pub fn run(ctx: &Ctx, args: &RunArgs, guided: bool) -> Result<(), AppError> {
    let set = read_probe_file(&args.probes)?;
    let canonical = canonical_probe_bytes(&set)?;
    let jobs = make_jobs(&set, args.append_and, guided)?;

    let spec = resolve_backend(&args.backend, &ctx.file.backend)?;
    let decode = resolve_decode(&args.decode, &ctx.file.decode, ctx.seed);
    decode.validate().map_err(|e| AppError::config(e.to_string()))?;

    let set_name = args.set_name.clone().unwrap_or_else(|| set.name.clone());
    let default_method = if guided { "instruction" } else { "baseline" };
    let method = args.method.clone().unwrap_or_else(|| default_method.to_string());
    let command = if guided { "guide-run" } else { "run" };

    let manifest = RunManifest::new(command, ctx.seed, ctx.lexicon_sha256.clone())
        .with_decode(&decode)
        .with_backend(spec.descriptor())
        .with_probes(&set_name, sha256_hex(&canonical))
        .with_options(json!({
            "probes": args.probes.display().to_string(),
            "append_and": args.append_and,
            "guided": guided,
            "method": method,
            "recorded": args.record.is_some(),
        }));
    let dir = ArtifactDir::create(&ctx.out_dir, &manifest)?;

    let backend = spec.build()?;
    let (records, dists) = if let Some(record_path) = &args.record {
        let recorder = RecordingBackend::new(backend.as_ref());
        let r = run_generation(&recorder, &jobs, &decode, ctx.workers).map_err(request_error)?;
        let d = score_attributes(&recorder, &jobs, &ctx.lexicon, ctx.workers)
            .map_err(request_error)?;
        let f = std::fs::File::create(record_path).map_err(|e| io_error(record_path, e))?;
        recorder
            .write_jsonl(BufWriter::new(f))
            .map_err(|e| AppError::data(format!("{}: {e}", record_path.display())))?;
        (r, d)
    } else {
        let r = run_generation(backend.as_ref(), &jobs, &decode, ctx.workers)
            .map_err(request_error)?;
        let d = score_attributes(backend.as_ref(), &jobs, &ctx.lexicon, ctx.workers)
            .map_err(request_error)?;
        (r, d)
    };

    let report = build_report(
        &set_name,
        backend.id(),
        &method,
        &records,
        &dists,
        &ctx.lexicon,
        &MetricConfig::default(),
    )
    .map_err(|e| AppError::internal(e.to_string()))?;

    announce(&dir);
    for path in [
        dir.write_records("runs", "generations.jsonl", &records)?,
        dir.write_records("runs", "scores.jsonl", &dists)?,
        dir.write_bytes("reports", "report.csv", &render::reports_csv(&[report.clone()], dir.hash())?)?,
        dir.write_bytes(
            "reports",
            "report.json",
            render::reports_json(&[report.clone()], dir.hash())?.as_bytes(),
        )?,
    ] {
        println!("wrote {}", path.display());
    }
    if let Some(record_path) = &args.record {
        println!("recorded replay file {}", record_path.display());
    }
    println!("{}", render::report_summary(&report));
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Generations JSONL from a previous run.
    #[arg(long, value_name = "FILE")]
    pub generations: PathBuf,
    /// Scores JSONL from a previous run.
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    /// Report set name.
    #[arg(long)]
    pub set_name: Option<String>,
    /// Method label stamped into the report.
    #[arg(long)]
    pub method: Option<String>,
}

pub fn eval(ctx: &Ctx, args: &EvalArgs) -> Result<(), AppError> {
    let records: Vec<GenerationRecord> = read_jsonl_records(&args.generations)?;
    if records.is_empty() {
        return Err(AppError::data(format!(
            "{}: no generation records",
            args.generations.display()
        )));
    }
    let dists: Vec<AttributeDistribution> = read_jsonl_records(&args.scores)?;
    if dists.is_empty() {
        return Err(AppError::data(format!("{}: no score records", args.scores.display())));
    }

    let set_name = args.set_name.as_deref().unwrap_or("eval");
    let method = args.method.as_deref().unwrap_or("baseline");
    let backend_label = records[0].backend_id.clone();
    // Stored artifacts are arbitrary input here, so shape problems are data
    // errors, not bugs.
    let report = build_report(
        set_name,
        &backend_label,
        method,
        &records,
        &dists,
        &ctx.lexicon,
        &MetricConfig::default(),
    )
    .map_err(|e| AppError::data(e.to_string()))?;

    let manifest = RunManifest::new("eval", ctx.seed, ctx.lexicon_sha256.clone()).with_options(
        json!({
            "generations": args.generations.display().to_string(),
            "scores": args.scores.display().to_string(),
            "method": method,
            "set_name": set_name,
        }),
    );
    let dir = ArtifactDir::create(&ctx.out_dir, &manifest)?;
    announce(&dir);
    for path in [
        dir.write_bytes("reports", "report.csv", &render::reports_csv(&[report.clone()], dir.hash())?)?,
        dir.write_bytes(
            "reports",
            "report.json",
            render::reports_json(&[report.clone()], dir.hash())?.as_bytes(),
        )?,
    ] {
        println!("wrote {}", path.display());
    }
    println!("{}", render::report_summary(&report));
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Probe set JSONL.
    #[arg(long, value_name = "FILE")]
    pub probes: PathBuf,
    /// Append ", and" to each probe at prompt time.
    #[arg(long)]
    pub append_and: bool,
    /// Report set name (defaults to the probe set's own name).
    #[arg(long)]
    pub set_name: Option<String>,
    #[command(flatten)]
    pub grid: SweepOpts,
    #[command(flatten)]
    pub backend: BackendOpts,
    #[command(flatten)]
    pub decode: DecodeOpts,
}

fn sweep_error(e: SweepError) -> AppError {
    match e {
        SweepError::EmptyGrid => AppError::config(e.to_string()),
        SweepError::Backend(inner) => request_error(inner),
        SweepError::AllFailed(_) => AppError::Backend(e.to_string()),
        SweepError::Metric(_) => AppError::internal(e.to_string()),
    }
}

pub fn sweep(ctx: &Ctx, args: &SweepArgs) -> Result<(), AppError> {
    let mut set = read_probe_file(&args.probes)?;
    if args.append_and {
        for p in &mut set.probes {
            if !p.text.ends_with(", and") {
                p.text.push_str(", and");
            }
        }
    }
    if let Some(name) = &args.set_name {
        set.name = name.clone();
    }
    let canonical = canonical_probe_bytes(&set)?;

    let spec = resolve_backend(&args.backend, &ctx.file.backend)?;
    let grid = resolve_grid(&args.grid, &ctx.file.sweep);
    // The grid supplies temperature/top-p/top-K per cell; the base decode
    // contributes only length and the seed the cells derive theirs from.
    let base = resolve_decode(&args.decode, &ctx.file.decode, ctx.seed);

    let manifest = RunManifest::new("sweep", ctx.seed, ctx.lexicon_sha256.clone())
        .with_decode(&base)
        .with_backend(spec.descriptor())
        .with_probes(&set.name, sha256_hex(&canonical))
        .with_options(json!({
            "probes": args.probes.display().to_string(),
            "append_and": args.append_and,
            "grid": serde_json::to_value(&grid)
                .map_err(|e| AppError::internal(format!("grid serialization: {e}")))?,
        }));
    let dir = ArtifactDir::create(&ctx.out_dir, &manifest)?;

    let backend = spec.build()?;
    let outcome = mitigation::sweep(
        backend.as_ref(),
        &set,
        &ctx.lexicon,
        &grid,
        &base,
        &MetricConfig::default(),
        ctx.workers,
    )
    .map_err(sweep_error)?;

    announce(&dir);
    for path in [
        dir.write_bytes("reports", "sweep.csv", &render::sweep_csv(&outcome, dir.hash())?)?,
        dir.write_bytes("reports", "sweep.json", render::sweep_json(&outcome, dir.hash())?.as_bytes())?,
    ] {
        println!("wrote {}", path.display());
    }
    let best = outcome.best_entry();
    let gas = best.report.as_ref().map(|r| r.gas).unwrap_or(f64::NAN);
    println!("best cell {} (gas={gas:.4}) — {}", best.label, outcome.selection);
    Ok(())
}

// ---------------------------------------------------------------------------
// tune-toy / ablate
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Toy checkpoint to start from (defaults to the bundled pretrained
    /// model).
    #[arg(long, value_name = "FILE")]
    pub model_path: Option<PathBuf>,
    /// Seed for the bundled starting model.
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Loss subset to tune with: full, wo_ld, wo_lg, or wo_ll.
    #[arg(long, default_value = "full")]
    pub losses: String,
    #[command(flatten)]
    pub tune: TuneOpts,
}

fn parse_loss_set(label: &str) -> Result<LossSet, AppError> {
    match label {
        "full" => Ok(LossSet::FULL),
        "wo_ld" => Ok(LossSet::WITHOUT_D),
        "wo_lg" => Ok(LossSet::WITHOUT_G),
        "wo_ll" => Ok(LossSet::WITHOUT_L),
        other => Err(AppError::config(format!(
            "unknown loss subset {other:?} (expected full, wo_ld, wo_lg, or wo_ll)"
        ))),
    }
}

/// The toy experiment runs entirely on bundled data, so failures are bugs —
/// except hyperparameters the caller picked.
fn experiment_error(e: ExperimentError) -> AppError {
    match e {
        ExperimentError::Train(TrainError::BadBatchSize | TrainError::BadLearningRate(_)) => {
            AppError::config(e.to_string())
        }
        other => AppError::internal(other.to_string()),
    }
}

/// Builds the demo experiment and its starting model from the shared flags.
fn toy_setup(
    ctx: &Ctx,
    model_path: &Option<PathBuf>,
    model_seed: Option<u64>,
    tune_flags: &TuneOpts,
) -> Result<(ToyExperiment, ToyLm, u64), AppError> {
    let mut exp = ToyExperiment::demo().map_err(experiment_error)?;
    exp.opts = resolve_tune(tune_flags, &ctx.file.tune);
    exp.workers = ctx.workers;
    let seed = model_seed.unwrap_or(DEFAULT_MODEL_SEED);
    let base = match model_path {
        Some(path) => ToyLm::load_from_path(path).map_err(|e| AppError::data(e.to_string()))?,
        None => pretrained_demo_model(seed).map_err(experiment_error)?,
    };
    Ok((exp, base, seed))
}

fn toy_descriptor(model_path: &Option<PathBuf>) -> BackendSpec {
    BackendSpec::Toy {
        checkpoint: model_path.clone(),
        model_seed: DEFAULT_MODEL_SEED,
    }
}

pub fn tune_toy(ctx: &Ctx, args: &TuneArgs) -> Result<(), AppError> {
    let loss_set = parse_loss_set(&args.losses)?;
    let (exp, base, model_seed) = toy_setup(ctx, &args.model_path, args.model_seed, &args.tune)?;

    let baseline = exp.evaluate(&base, "baseline").map_err(experiment_error)?;
    let (tuned, trace) = exp.tuned(&base, loss_set).map_err(experiment_error)?;
    let method = format!("tuned:{}", loss_set.label());
    let after = exp.evaluate(&tuned, &method).map_err(experiment_error)?;

    let probes_sha = sha256_hex(&canonical_probe_bytes(&exp.tune_probes)?);
    let manifest = RunManifest::new("tune-toy", ctx.seed, ctx.lexicon_sha256.clone())
        .with_decode(&exp.decode)
        .with_backend(toy_descriptor(&args.model_path).descriptor())
        .with_probes(&exp.tune_probes.name, probes_sha)
        .with_options(json!({
            "model_seed": model_seed,
            "losses": loss_set.label(),
            "steps": exp.opts.steps,
            "lr": exp.opts.lr,
            "batch_size": exp.opts.batch_size,
        }));
    let dir = ArtifactDir::create(&ctx.out_dir, &manifest)?;

    // Stamp the checkpoint with the manifest too; the loader tolerates the
    // extra keys.
    let mut buf = Vec::new();
    tuned.save(&mut buf).map_err(|e| AppError::internal(e.to_string()))?;
    let mut checkpoint: Value = serde_json::from_slice(&buf)
        .map_err(|e| AppError::internal(format!("checkpoint serialization: {e}")))?;
    checkpoint["_manifest"] = Value::String(dir.hash().to_string());
    checkpoint["_tool"] = Value::String(tool_stamp());
    let mut checkpoint_body = serde_json::to_string_pretty(&checkpoint)
        .map_err(|e| AppError::internal(format!("checkpoint serialization: {e}")))?;
    checkpoint_body.push('\n');

    let reports = [baseline.clone(), after.clone()];
    announce(&dir);
    for path in [
        dir.write_bytes("models", "tuned.json", checkpoint_body.as_bytes())?,
        dir.write_bytes("reports", "trace.csv", &render::trace_csv(&trace, dir.hash())?)?,
        dir.write_bytes("reports", "report.csv", &render::reports_csv(&reports, dir.hash())?)?,
        dir.write_bytes("reports", "report.json", render::reports_json(&reports, dir.hash())?.as_bytes())?,
    ] {
        println!("wrote {}", path.display());
    }
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        println!("loss total {:.4} -> {:.4} over {} steps", first.total, last.total, trace.len());
    }
    println!("{}", render::report_summary(&baseline));
    println!("{}", render::report_summary(&after));
    Ok(())
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Toy checkpoint to start from (defaults to the bundled pretrained
    /// model).
    #[arg(long, value_name = "FILE")]
    pub model_path: Option<PathBuf>,
    /// Seed for the bundled starting model.
    #[arg(long)]
    pub model_seed: Option<u64>,
    #[command(flatten)]
    pub tune: TuneOpts,
}

pub fn ablate(ctx: &Ctx, args: &AblateArgs) -> Result<(), AppError> {
    let (exp, base, model_seed) = toy_setup(ctx, &args.model_path, args.model_seed, &args.tune)?;

    let baseline = exp.evaluate(&base, "baseline").map_err(experiment_error)?;
    let mut rows = vec![AblationRow { label: "baseline".into(), report: baseline }];
    rows.extend(exp.ablation_table(&base).map_err(experiment_error)?);

    let probes_sha = sha256_hex(&canonical_probe_bytes(&exp.tune_probes)?);
    let manifest = RunManifest::new("ablate", ctx.seed, ctx.lexicon_sha256.clone())
        .with_decode(&exp.decode)
        .with_backend(toy_descriptor(&args.model_path).descriptor())
        .with_probes(&exp.tune_probes.name, probes_sha)
        .with_options(json!({
            "model_seed": model_seed,
            "steps": exp.opts.steps,
            "lr": exp.opts.lr,
            "batch_size": exp.opts.batch_size,
        }));
    let dir = ArtifactDir::create(&ctx.out_dir, &manifest)?;

    let reports: Vec<_> = rows.iter().map(|r| r.report.clone()).collect();
    announce(&dir);
    for path in [
        dir.write_bytes("reports", "ablation.csv", &render::reports_csv(&reports, dir.hash())?)?,
        dir.write_bytes("reports", "ablation.json", render::ablation_json(&rows, dir.hash())?.as_bytes())?,
        dir.write_bytes(
            "reports",
            "ablation.md",
            render::finish_md(&render::ablation_md(&rows), dir.hash()).as_bytes(),
        )?,
    ] {
        println!("wrote {}", path.display());
    }
    for row in &rows {
        println!("{}", render::report_summary(&row.report));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatChoice {
    Csv,
    Json,
    Md,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON artifacts to merge (run, eval, tune-toy, or ablate
    /// outputs).
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = FormatChoice::Md)]
    pub format: FormatChoice,
    /// Write to this exact path instead of the artifact folder.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn report(ctx: &Ctx, args: &ReportArgs) -> Result<(), AppError> {
    let mut rows = Vec::new();
    for input in &args.inputs {
        rows.extend(render::parse_reports_json(input)?);
    }
    if rows.is_empty() {
        return Err(AppError::data("no reports found in the given inputs"));
    }

    let inputs: Vec<String> = args.inputs.iter().map(|p| p.display().to_string()).collect();
    let format_name = match args.format {
        FormatChoice::Csv => "csv",
        FormatChoice::Json => "json",
        FormatChoice::Md => "md",
    };
    let manifest = RunManifest::new("report", ctx.seed, ctx.lexicon_sha256.clone())
        .with_options(json!({ "inputs": inputs, "format": format_name }));
    let dir = ArtifactDir::create(&ctx.out_dir, &manifest)?;

    let (name, bytes) = match args.format {
        FormatChoice::Csv => ("summary.csv", render::reports_csv(&rows, dir.hash())?),
        FormatChoice::Json => ("summary.json", render::reports_json(&rows, dir.hash())?.into_bytes()),
        FormatChoice::Md => (
            "summary.md",
            render::finish_md(&render::reports_md(&rows), dir.hash()).into_bytes(),
        ),
    };

    announce(&dir);
    let path = match &args.out {
        Some(out) => {
            std::fs::write(out, &bytes).map_err(|e| io_error(out, e))?;
            out.clone()
        }
        None => dir.write_bytes("reports", name, &bytes)?,
    };
    println!("wrote {}", path.display());
    println!("{} reports merged", rows.len());
    Ok(())
}
