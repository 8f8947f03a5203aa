use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use grounding_core::baselines::{
    complete_predictions, random_baseline_reports, random_predictions, threshold_baseline,
    ScoreSeries, DEFAULT_EPSILON, DEFAULT_REPETITIONS,
};
use grounding_core::evaluation::{
    evaluate_default, mean_report, read_predictions, write_predictions, write_report,
    MetricsReport, Outcome, PredictionRecord,
};
use grounding_core::ingest::{
    build_benchmark, load_manifest, parse_chapters_json, write_dataset, BenchmarkOptions, Dataset,
    IngestError,
};
use grounding_core::llm::{
    Bounded, Gateway, HttpGateway, MockGateway, MockScript, UreqTransport, API_KEY_ENV,
    DEFAULT_API_BASE, DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL,
};
use grounding_core::pipeline::{prompt_for, run_dataset, PipelineConfig};
use grounding_core::prompting::{IclExample, PromptConfig, DEFAULT_TOKEN_BUDGET};
use grounding_core::textualize::{
    plan_frame_times, FramePlanFile, ModalityFlags, DEFAULT_MIN_FRAMES,
};

#[derive(Parser)]
#[command(
    name = "grounding",
    version,
    about = "Training-free temporal sentence grounding with a text-only LLM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a query manifest from chapter annotations.
    BuildDataset(BuildDatasetArgs),
    /// Write the frame times to caption for every video.
    PlanFrames(PlanFramesArgs),
    /// Print the prompt for one query.
    PromptDump(PromptDumpArgs),
    /// Run the model over every query in a manifest.
    Run(RunArgs),
    /// Score a predictions log against a manifest.
    Eval(EvalArgs),
    /// Run a rule-based baseline.
    Baseline(BaselineArgs),
}

#[derive(Args)]
struct BuildDatasetArgs {
    #[arg(long)]
    chapters: PathBuf,
    /// Manifest to write; sidecar files go next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 780.0)]
    duration_lo: f64,
    #[arg(long, default_value_t = 900.0)]
    duration_hi: f64,
    #[arg(long, default_value_t = 3)]
    per_video: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PlanFramesArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_FRAMES)]
    min_frames: usize,
}

#[derive(Args, Clone)]
struct PromptFlags {
    /// Drop the reasoning steps and ask for the answer only.
    #[arg(long)]
    no_cot: bool,
    /// Drop the worked example.
    #[arg(long)]
    no_icl: bool,
    /// Leave speech transcriptions out of the prompt.
    #[arg(long)]
    no_speech: bool,
    /// Leave visual captions out of the prompt.
    #[arg(long)]
    no_visual: bool,
    /// Replace the bundled worked example.
    #[arg(long)]
    icl_example: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOKEN_BUDGET)]
    token_budget: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_FRAMES)]
    min_frames: usize,
}

#[derive(Args)]
struct PromptDumpArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    query_index: usize,
    #[command(flatten)]
    flags: PromptFlags,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
    #[arg(long, env = "GP_API_BASE", default_value = DEFAULT_API_BASE)]
    api_base: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_OUTPUT_TOKENS)]
    max_output_tokens: u32,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Answer from a mock script instead of a live endpoint.
    #[arg(long)]
    mock: Option<PathBuf>,
    /// Also write every rendered prompt under `<out-dir>/prompts/`.
    #[arg(long)]
    dump_prompts: bool,
    #[command(flatten)]
    flags: PromptFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Where to write the report; defaults to metrics.json next to the log.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Random,
    Complete,
    Threshold,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    kind: BaselineKind,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
    repetitions: usize,
    /// Directory of score-series files, one per query (threshold only).
    #[arg(long)]
    scores_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

/// Bad flags or environment; exits with status 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildDataset(a) => cmd_build_dataset(a),
        Command::PlanFrames(a) => cmd_plan_frames(a),
        Command::PromptDump(a) => cmd_prompt_dump(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Baseline(a) => cmd_baseline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn cmd_build_dataset(a: BuildDatasetArgs) -> Result<()> {
    let text = fs::read_to_string(&a.chapters)
        .with_context(|| format!("reading {}", a.chapters.display()))?;
    let sources = parse_chapters_json(&text)?;
    let options = BenchmarkOptions {
        duration_range_s: (a.duration_lo, a.duration_hi),
        per_video: a.per_video,
        seed: a.seed,
    };
    let dataset = match build_benchmark(&sources, &options) {
        Err(IngestError::EmptySelection) => bail!("no videos in duration range"),
        other => other?,
    };
    write_dataset(&dataset, &a.out)?;
    println!(
        "{} queries from {} videos",
        dataset.queries.len(),
        dataset.videos.len()
    );
    Ok(())
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_plan_frames(a: PlanFramesArgs) -> Result<()> {
    let dataset = load_manifest(&a.manifest)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for video in dataset.videos.values() {
        let plan = plan_frame_times(
            &video.transcripts,
            &video.scenes,
            video.duration_s,
            a.min_frames,
        )
        .with_context(|| format!("video {:?}", video.id))?;
        let file = FramePlanFile {
            video_id: video.id.clone(),
            times_s: plan.times_s,
        };
        let path = a.out_dir.join(format!("{}.json", file_stem(&video.id)));
        fs::write(&path, serde_json::to_string_pretty(&file)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {} frame plans", dataset.videos.len());
    Ok(())
}

fn pipeline_config(flags: &PromptFlags) -> Result<PipelineConfig> {
    let icl_example = match &flags.icl_example {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            IclExample::from_json_str(&text)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => IclExample::default(),
    };
    let config = PipelineConfig {
        prompt: PromptConfig {
            enable_cot: !flags.no_cot,
            enable_icl: !flags.no_icl,
            icl_example,
            token_budget: flags.token_budget,
            min_frames: flags.min_frames,
        },
        modalities: ModalityFlags {
            speech: !flags.no_speech,
            visual: !flags.no_visual,
        },
        ..PipelineConfig::default()
    };
    config.validate().map_err(|e| config_error(e.to_string()))?;
    if flags.token_budget == 0 {
        return Err(config_error("token budget must be positive"));
    }
    Ok(config)
}

fn cmd_prompt_dump(a: PromptDumpArgs) -> Result<()> {
    let config = pipeline_config(&a.flags)?;
    let dataset = load_manifest(&a.manifest)?;
    let n = dataset.queries.len();
    let query = dataset
        .queries
        .get(a.query_index)
        .ok_or_else(|| anyhow!("query index {} out of range ({n} queries)", a.query_index))?;
    let video = dataset
        .video(&query.video_id)
        .expect("manifest resolves every query");
    let bundle = prompt_for(video, &query.query, &config).map_err(|e| anyhow!(e))?;
    print!("{}", bundle.rendered_prompt);
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut config = pipeline_config(&a.flags)?;
    config.model_name = a.model.clone();
    config.temperature = a.temperature;
    config.max_output_tokens = a.max_output_tokens;
    if a.concurrency == 0 {
        return Err(config_error("concurrency must be at least 1"));
    }
    config.concurrency = a.concurrency;

    let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
    let gateway: Box<dyn Gateway> = match (&a.mock, api_key) {
        (Some(_), Some(_)) => {
            return Err(config_error(format!(
                "both {API_KEY_ENV} and --mock are set; use one"
            )))
        }
        (None, None) => return Err(config_error(format!("set {API_KEY_ENV} or pass --mock"))),
        (Some(path), None) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let script = MockScript::from_json_str(&text)
                .map_err(|e| config_error(format!("mock script {}: {e}", path.display())))?;
            Box::new(MockGateway::new(script))
        }
        (None, Some(key)) => Box::new(HttpGateway::new(UreqTransport::default(), &a.api_base, key)),
    };
    let gateway = Bounded::new(gateway, a.concurrency);

    let dataset = load_manifest(&a.manifest)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let prompt_dir = a.out_dir.join("prompts");
    if a.dump_prompts {
        fs::create_dir_all(&prompt_dir)?;
    }
    let log_path = a.out_dir.join("predictions.jsonl");
    let log =
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log = BufWriter::new(log);
    let mut write_error: Option<anyhow::Error> = None;
    let total = dataset.queries.len();
    let mut done = 0usize;

    let records = run_dataset(&dataset, &gateway, &config, |run| {
        done += 1;
        log::info!(
            "[{done}/{total}] {} / {:?}",
            run.record.video_id,
            run.record.query
        );
        let res = writeln!(log, "{}", run.record.to_json_line())
            .and_then(|_| log.flush())
            .with_context(|| format!("appending to {}", log_path.display()))
            .and_then(|_| match (&run.prompt, a.dump_prompts) {
                (Some(p), true) => {
                    let path = prompt_dir.join(format!("{:05}.txt", run.index));
                    fs::write(&path, &p.rendered_prompt)
                        .with_context(|| format!("writing {}", path.display()))
                }
                _ => Ok(()),
            });
        if let Err(e) = res {
            write_error.get_or_insert(e);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }

    let collapsed = records.iter().filter(|r| r.outcome.is_collapsed()).count();
    println!(
        "{} queries, {collapsed} collapsed; log at {}",
        records.len(),
        log_path.display()
    );
    if let Some(gts) = dataset.ground_truths() {
        let report = evaluate_default(&records, &gts)?;
        finish_report(&report, &a.out_dir.join("metrics.json"))?;
    }
    Ok(())
}

fn finish_report(report: &MetricsReport, path: &Path) -> Result<()> {
    write_report(report, path)?;
    print!("{}", report.to_canonical_json());
    Ok(())
}

/// Order the log to match the manifest's queries, keyed by (video id, query).
fn align(records: Vec<PredictionRecord>, dataset: &Dataset) -> Result<Vec<PredictionRecord>> {
    let mut slots: HashMap<(String, String), Vec<usize>> = HashMap::new();
    for (i, q) in dataset.queries.iter().enumerate() {
        slots
            .entry((q.video_id.clone(), q.query.clone()))
            .or_default()
            .push(i);
    }
    // duplicate keys in the manifest are filled in order
    for v in slots.values_mut() {
        v.reverse();
    }
    let mut aligned: Vec<Option<PredictionRecord>> = vec![None; dataset.queries.len()];
    for (line, r) in records.into_iter().enumerate() {
        let slot = slots
            .get_mut(&(r.video_id.clone(), r.query.clone()))
            .and_then(|v| v.pop())
            .ok_or_else(|| {
                anyhow!(
                    "record {} ({} / {:?}) matches no remaining query",
                    line + 1,
                    r.video_id,
                    r.query
                )
            })?;
        aligned[slot] = Some(r);
    }
    let missing: Vec<String> = aligned
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| {
            format!(
                "{} / {:?}",
                dataset.queries[i].video_id, dataset.queries[i].query
            )
        })
        .collect();
    if !missing.is_empty() {
        bail!(
            "{} queries have no record, first: {}",
            missing.len(),
            missing[0]
        );
    }
    Ok(aligned.into_iter().map(Option::unwrap).collect())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let dataset = load_manifest(&a.manifest)?;
    let records = read_predictions(&a.predictions)?;
    let records = align(records, &dataset)?;
    let gts = dataset
        .ground_truths()
        .ok_or_else(|| anyhow!("manifest has queries without ground truth"))?;
    let report = evaluate_default(&records, &gts)?;
    let out = a.out.unwrap_or_else(|| {
        a.predictions
            .parent()
            .unwrap_or(Path::new("."))
            .join("metrics.json")
    });
    finish_report(&report, &out)
}

fn load_score_series(dir: &Path) -> Result<HashMap<(String, String), ScoreSeries>> {
    let mut out = HashMap::new();
    let entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let series =
            ScoreSeries::from_json_str(&text).with_context(|| path.display().to_string())?;
        let key = (series.video_id.clone(), series.query.clone());
        if out.insert(key, series).is_some() {
            bail!(
                "{}: duplicate score series for the same query",
                path.display()
            );
        }
    }
    Ok(out)
}

fn cmd_baseline(a: BaselineArgs) -> Result<()> {
    let dataset = load_manifest(&a.manifest)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let metrics_path = a.out_dir.join("metrics.json");

    let records = match a.kind {
        BaselineKind::Random => {
            if a.repetitions == 0 {
                return Err(config_error("repetitions must be at least 1"));
            }
            for rep in 0..a.repetitions {
                let preds = random_predictions(&dataset, a.seed, rep)?;
                write_predictions(
                    &a.out_dir.join(format!("predictions_rep{rep:02}.jsonl")),
                    &preds,
                )?;
            }
            if dataset.ground_truths().is_some() {
                let reports = random_baseline_reports(&dataset, a.repetitions, a.seed)?;
                finish_report(&mean_report(&reports)?, &metrics_path)?;
            }
            return Ok(());
        }
        BaselineKind::Complete => complete_predictions(&dataset)?,
        BaselineKind::Threshold => {
            let dir = a.scores_dir.as_deref().ok_or_else(|| {
                config_error("--scores-dir is required for the threshold baseline")
            })?;
            if a.epsilon.is_nan() || a.epsilon <= 0.0 {
                return Err(config_error("epsilon must be positive"));
            }
            let series = load_score_series(dir)?;
            dataset
                .queries
                .iter()
                .map(|q| {
                    let s = series
                        .get(&(q.video_id.clone(), q.query.clone()))
                        .ok_or_else(|| {
                            anyhow!("missing score series for {} / {:?}", q.video_id, q.query)
                        })?;
                    let span =
                        threshold_baseline(s, a.epsilon, dataset.videos[&q.video_id].duration_s)?;
                    Ok(PredictionRecord::new(
                        &q.video_id,
                        &q.query,
                        Outcome::Answer(span),
                    ))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    write_predictions(&a.out_dir.join("predictions.jsonl"), &records)?;
    if let Some(gts) = dataset.ground_truths() {
        finish_report(&evaluate_default(&records, &gts)?, &metrics_path)?;
    }
    Ok(())
}
