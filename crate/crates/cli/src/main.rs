//! Command-line surface for the graphreview engine.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on domain errors with the
//! originating error name preserved on a single stderr line.

use std::collections::HashMap;
use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use graphreview_core::aggregate::{Decision, RankingResult};
use graphreview_core::corpus::{load_corpus_with, Corpus, LoadOptions, PaperId};
use graphreview_core::driver::{
    compute_eta, run_pipeline, RunConfig, RunMode, DEFAULT_EPSILON_IMPROVE, DEFAULT_FIXED_T,
    DEFAULT_IN_FLIGHT, DEFAULT_PATIENCE_MAX,
};
use graphreview_core::graph::{EdgePolicy, MatchState, SolverMode};
use graphreview_core::metrics::{EvalInput, MetricName, MetricReport};
use graphreview_core::report::{build_bundle, consolidate};
use graphreview_core::riml::{export_training_set, ExportParams};
use graphreview_core::signals::{
    AnchorScale, BackendConfig, BackendKind, NoiseParams, PromptSet, SignalEngine, SignalStore,
};

const API_KEY_ENV: &str = "GRAPHREVIEW_API_KEY";

#[derive(Parser)]
#[command(
    name = "graphreview",
    version,
    about = "Graph-based ranking engine for paper review corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a corpus, printing a summary.
    Ingest(CorpusArgs),
    /// Run the full pipeline and write rankings (and optionally reports).
    Run(RunArgs),
    /// Score a prediction table against ground-truth labels.
    Evaluate(EvaluateArgs),
    /// Export scoring and comparison training files.
    RimlExport(RimlExportArgs),
    /// Generate consolidated review reports from a finished run directory.
    Report(ReportArgs),
    /// Evaluate one parameter over a list of values.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct CorpusArgs {
    #[arg(long)]
    papers: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long = "truncation-limit")]
    truncation_limit: Option<usize>,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// oracle | remote | replay
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "cache-dir")]
    cache_dir: Option<PathBuf>,
    #[arg(long = "replay-dir")]
    replay_dir: Option<PathBuf>,
    #[arg(long = "prompts-dir")]
    prompts_dir: Option<PathBuf>,
    /// Oracle comparison flip probability.
    #[arg(long = "noise-flip")]
    noise_flip: Option<f64>,
    /// Oracle score noise standard deviation.
    #[arg(long = "noise-sigma")]
    noise_sigma: Option<f64>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Flat key=value config file; flags override file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// evaluation | deployment
    #[arg(long)]
    mode: Option<String>,
    #[arg(long = "fixed-t")]
    fixed_t: Option<usize>,
    #[arg(long = "epsilon-improve")]
    epsilon_improve: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// both | synchronic | diachronic
    #[arg(long = "edge-policy")]
    edge_policy: Option<String>,
    /// greedy | exact
    #[arg(long)]
    solver: Option<String>,
    #[arg(long = "in-flight")]
    in_flight: Option<usize>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write consolidated review reports.
    #[arg(long)]
    reports: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// rank,paper_id,pi,decision table.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Line-delimited {paper_id, score} records.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory of `<name>.pred.csv` / `<name>.truth.jsonl` pairs.
    #[arg(long)]
    batch: Option<PathBuf>,
}

#[derive(Args)]
struct RimlExportArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[arg(long = "prompts-dir")]
    prompts_dir: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long = "run-dir")]
    run_dir: PathBuf,
    /// Report output directory (default: <run-dir>/reports).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// lambda | gamma | t
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long)]
    values: String,
}

enum CliError {
    Usage(String),
    Domain(Box<dyn Error>),
}

impl<E: Error + 'static> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Domain(Box::new(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest(args) => ingest(args),
        Command::Run(args) => run(args).map(|_| ()),
        Command::Evaluate(args) => evaluate(args),
        Command::RimlExport(args) => riml_export(args),
        Command::Report(args) => report(args),
        Command::Sweep(args) => sweep(args),
    }
}

/// Key=value lines; '#' starts a comment. Keys use flag spelling with '-' or
/// '_' interchangeable.
fn read_config_file(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}:{}: expected key=value",
                path.display(),
                no + 1
            )));
        };
        map.insert(
            key.trim().replace('_', "-").to_string(),
            value.trim().to_string(),
        );
    }
    Ok(map)
}

struct Resolver {
    file: HashMap<String, String>,
}

impl Resolver {
    fn none() -> Self {
        Self {
            file: HashMap::new(),
        }
    }

    fn get<T: std::str::FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::Usage(format!("config key {key}: bad value {raw:?}"))),
            None => Ok(default),
        }
    }

    fn get_opt<T: std::str::FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
    ) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key {key}: bad value {raw:?}"))),
            None => Ok(None),
        }
    }
}

fn load_corpus_from(args: &CorpusArgs, resolver: &Resolver) -> Result<Corpus, CliError> {
    let papers = resolver
        .get_opt(args.papers.clone(), "papers")?
        .ok_or_else(|| CliError::Usage("--papers is required".into()))?;
    let embeddings = resolver
        .get_opt(args.embeddings.clone(), "embeddings")?
        .ok_or_else(|| CliError::Usage("--embeddings is required".into()))?;
    let labels = resolver.get_opt(args.labels.clone(), "labels")?;
    let truncation_limit = resolver.get(
        args.truncation_limit,
        "truncation-limit",
        LoadOptions::default().truncation_limit,
    )?;
    let corpus = load_corpus_with(
        &papers,
        &embeddings,
        labels.as_deref(),
        &LoadOptions { truncation_limit },
    )?;
    Ok(corpus)
}

fn build_engine(
    args: &BackendArgs,
    resolver: &Resolver,
    corpus: &Corpus,
    seed: u64,
) -> Result<SignalEngine, CliError> {
    let kind: BackendKind = resolver
        .get(args.backend.clone(), "backend", "oracle".to_string())?
        .parse()?;
    let prompts = match resolver.get_opt(args.prompts_dir.clone(), "prompts-dir")? {
        Some(dir) => PromptSet::from_dir(&dir)?,
        None => PromptSet::default(),
    };
    let noise = NoiseParams {
        flip_probability: resolver.get(args.noise_flip, "noise-flip", 0.0)?,
        score_sigma: resolver.get(args.noise_sigma, "noise-sigma", 0.0)?,
        seed,
        ..NoiseParams::default()
    };
    let config = BackendConfig {
        kind,
        endpoint: resolver.get_opt(args.endpoint.clone(), "endpoint")?,
        model: resolver.get(args.model.clone(), "model", "default".to_string())?,
        api_key: std::env::var(API_KEY_ENV).ok(),
        noise,
        cache_dir: resolver.get_opt(args.cache_dir.clone(), "cache-dir")?,
        replay_dir: resolver.get_opt(args.replay_dir.clone(), "replay-dir")?,
        timeout: Duration::from_secs(120),
        ..BackendConfig::default()
    };
    let engine = SignalEngine::from_config(&config, corpus, prompts, AnchorScale::default(), seed)?;
    Ok(engine)
}

fn parse_edge_policy(raw: &str, solver: SolverMode) -> Result<EdgePolicy, CliError> {
    let (synchronic, diachronic) = match raw {
        "both" => (true, true),
        "synchronic" => (true, false),
        "diachronic" => (false, true),
        other => {
            return Err(CliError::Usage(format!(
                "--edge-policy must be both|synchronic|diachronic, got {other:?}"
            )))
        }
    };
    Ok(EdgePolicy {
        synchronic,
        diachronic,
        mode: solver,
    })
}

fn resolve_run(args: &RunArgs) -> Result<(Corpus, SignalEngine, RunConfig, PathBuf), CliError> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => HashMap::new(),
    };
    let resolver = Resolver { file };
    let corpus = load_corpus_from(&args.corpus, &resolver)?;
    let seed = resolver.get(args.seed, "seed", 0)?;
    let engine = build_engine(&args.backend, &resolver, &corpus, seed)?;

    let mode: RunMode = resolver
        .get(args.mode.clone(), "mode", "deployment".to_string())?
        .parse()?;
    let metric: MetricName = resolver
        .get(args.metric.clone(), "metric", "spearman".to_string())?
        .parse()?;
    let solver = match resolver
        .get(args.solver.clone(), "solver", "greedy".to_string())?
        .as_str()
    {
        "greedy" => SolverMode::Greedy,
        "exact" => SolverMode::Exact,
        other => {
            return Err(CliError::Usage(format!(
                "--solver must be greedy|exact, got {other:?}"
            )))
        }
    };
    let edge_policy = parse_edge_policy(
        &resolver.get(args.edge_policy.clone(), "edge-policy", "both".to_string())?,
        solver,
    )?;
    let out = resolver.get(args.out.clone(), "out", PathBuf::from("graphreview-out"))?;
    let config = RunConfig {
        mode,
        epsilon_improve: resolver.get(
            args.epsilon_improve,
            "epsilon-improve",
            DEFAULT_EPSILON_IMPROVE,
        )?,
        patience_max: resolver.get(args.patience, "patience", DEFAULT_PATIENCE_MAX)?,
        fixed_t: resolver.get(args.fixed_t, "fixed-t", DEFAULT_FIXED_T)?,
        gamma: resolver.get(args.gamma, "gamma", 0.314)?,
        lambda: resolver.get(args.lambda, "lambda", 0.2)?,
        metric,
        seed,
        edge_policy,
        in_flight_limit: resolver.get(args.in_flight, "in-flight", DEFAULT_IN_FLIGHT)?,
        run_dir: Some(out.clone()),
        ..RunConfig::default()
    };
    Ok((corpus, engine, config, out))
}

fn ingest(args: CorpusArgs) -> Result<(), CliError> {
    let corpus = load_corpus_from(&args, &Resolver::none())?;
    let labeled = (0..corpus.len())
        .filter(|&i| corpus.label(i).is_some())
        .count();
    println!(
        "papers={} submissions={} historical={} dim={} labeled={}",
        corpus.len(),
        corpus.n_submissions(),
        corpus.len() - corpus.n_submissions(),
        corpus.dim().unwrap_or(0),
        labeled
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<f64, CliError> {
    let (corpus, engine, config, out) = resolve_run(&args)?;
    let outcome = run_pipeline(&corpus, &config, &engine)?;
    let eta = outcome
        .trace
        .get(outcome.best_t - 1)
        .and_then(|r| r.eta)
        .unwrap_or(f64::NAN);
    println!(
        "run complete: rounds={} best_t={} eta={} accepts={} out={}",
        outcome.trace.len(),
        outcome.best_t,
        if eta.is_nan() {
            "n/a".to_string()
        } else {
            format!("{eta:.6}")
        },
        outcome.best_ranking.accept_count,
        out.display()
    );
    if args.reports {
        let dir = out.join("reports");
        write_reports(
            &corpus,
            &outcome.state,
            &outcome.store,
            &outcome.best_ranking,
            &engine,
            &dir,
        )?;
        println!("reports written to {}", dir.display());
    }
    Ok(eta)
}

fn write_reports(
    corpus: &Corpus,
    state: &MatchState,
    store: &SignalStore,
    ranking: &RankingResult,
    engine: &SignalEngine,
    dir: &Path,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    for id in &ranking.order {
        let bundle = build_bundle(id, corpus, state, store, ranking)?;
        let outcome = consolidate(&bundle, engine)?;
        std::fs::write(dir.join(format!("{id}.md")), outcome.report.render())?;
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    match (&args.pred, &args.truth, &args.batch) {
        (Some(pred), Some(truth), None) => {
            let report = evaluate_pair(pred, truth)?;
            print!("{}", report.to_kv_lines());
            Ok(())
        }
        (None, None, Some(dir)) => evaluate_batch(dir),
        _ => Err(CliError::Usage(
            "evaluate needs either --pred and --truth, or --batch".into(),
        )),
    }
}

fn evaluate_batch(dir: &Path) -> Result<(), CliError> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|entry| {
            let name = entry.ok()?.file_name().into_string().ok()?;
            name.strip_suffix(".pred.csv").map(|s| s.to_string())
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Usage(format!(
            "no <name>.pred.csv files found in {}",
            dir.display()
        )));
    }
    for name in names {
        let pred = dir.join(format!("{name}.pred.csv"));
        let truth = dir.join(format!("{name}.truth.jsonl"));
        let report = evaluate_pair(&pred, &truth)?;
        println!("[{name}]");
        print!("{}", report.to_kv_lines());
    }
    Ok(())
}

fn evaluate_pair(pred: &Path, truth: &Path) -> Result<MetricReport, CliError> {
    let (ids, pred_scores, pred_decisions, accepts) = read_prediction_csv(pred)?;
    let labels = read_labels(truth)?;
    let mut true_scores = Vec::with_capacity(ids.len());
    for id in &ids {
        let score = labels.get(id).ok_or_else(|| {
            CliError::Domain(format!("LabelRequired: no label for {id:?}").into())
        })?;
        true_scores.push(*score);
    }
    // ground-truth decisions by the same top-k rule the predictions used
    let mut by_label: Vec<usize> = (0..ids.len()).collect();
    by_label.sort_by(|&a, &b| {
        true_scores[b]
            .partial_cmp(&true_scores[a])
            .unwrap()
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    let mut true_decisions = vec![false; ids.len()];
    for &i in by_label.iter().take(accepts) {
        true_decisions[i] = true;
    }
    let input = EvalInput::new(
        ids,
        pred_scores,
        pred_decisions,
        true_scores,
        true_decisions,
    )?;
    Ok(MetricReport::compute(&input)?)
}

/// ids, scores, decisions, and the accept count of a prediction table.
type PredictionTable = (Vec<String>, Vec<f64>, Vec<bool>, usize);

fn read_prediction_csv(path: &Path) -> Result<PredictionTable, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    let mut decisions = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if no == 0 && line.starts_with("rank,") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::Domain(
                format!(
                    "ParseError: {}:{}: expected 4 fields",
                    path.display(),
                    no + 1
                )
                .into(),
            ));
        }
        ids.push(fields[1].to_string());
        scores.push(fields[2].parse().map_err(|_| {
            CliError::Domain(
                format!("ParseError: {}:{}: bad pi value", path.display(), no + 1).into(),
            )
        })?);
        decisions.push(fields[3].trim() == "accept");
    }
    let accepts = decisions.iter().filter(|d| **d).count();
    Ok((ids, scores, decisions, accepts))
}

fn read_labels(path: &Path) -> Result<HashMap<PaperId, f64>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| {
            CliError::Domain(format!("ParseError: {}:{}: {msg}", path.display(), no + 1).into())
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let id = value
            .get("paper_id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| bad("missing paper_id".into()))?;
        let score = value
            .get("score")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| bad("missing score".into()))?;
        map.insert(id.to_string(), score);
    }
    Ok(map)
}

fn riml_export(args: RimlExportArgs) -> Result<(), CliError> {
    let corpus = load_corpus_from(&args.corpus, &Resolver::none())?;
    let prompts = match &args.prompts_dir {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::default(),
    };
    let params = ExportParams {
        sigma: args.sigma.unwrap_or(1.0),
        tau: args.tau.unwrap_or(1.0),
        delta: args.delta.unwrap_or(1.5),
        seed: args.seed.unwrap_or(0),
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let scoring_path = args.out_dir.join("scoring.jsonl");
    let comparison_path = args.out_dir.join("comparison.jsonl");
    let (scoring, comparisons) = export_training_set(
        &corpus,
        &AnchorScale::default(),
        &params,
        &prompts,
        None,
        &scoring_path,
        &comparison_path,
    )?;
    println!(
        "scoring_records={scoring} comparison_records={comparisons} out={}",
        args.out_dir.display()
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let resolver = Resolver::none();
    let corpus = load_corpus_from(&args.corpus, &resolver)?;
    let seed = args.seed.unwrap_or(0);
    let engine = build_engine(&args.backend, &resolver, &corpus, seed)?;

    let edges = std::fs::File::open(args.run_dir.join("edges.txt"))?;
    let state = MatchState::read_edge_list(
        std::io::BufReader::new(edges),
        |id| corpus.index_of(id),
        corpus.len(),
    )?;
    let signals = std::fs::File::open(args.run_dir.join("signals.jsonl"))?;
    let store = SignalStore::read_jsonl(std::io::BufReader::new(signals))?;
    let ranking = read_ranking_csv(&args.run_dir.join("ranking.csv"))?;

    let dir = args.out.unwrap_or_else(|| args.run_dir.join("reports"));
    write_reports(&corpus, &state, &store, &ranking, &engine, &dir)?;
    println!("reports written to {}", dir.display());
    Ok(())
}

fn read_ranking_csv(path: &Path) -> Result<RankingResult, CliError> {
    let (ids, scores, decisions, accepts) = read_prediction_csv(path)?;
    let mut decision_map = std::collections::BTreeMap::new();
    let mut score_map = std::collections::BTreeMap::new();
    for ((id, score), accept) in ids.iter().zip(&scores).zip(&decisions) {
        decision_map.insert(
            id.clone(),
            if *accept {
                Decision::Accept
            } else {
                Decision::Reject
            },
        );
        score_map.insert(id.clone(), *score);
    }
    Ok(RankingResult {
        order: ids,
        decisions: decision_map,
        accept_count: accepts,
        scores: score_map,
    })
}

fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let values: Vec<f64> = args
        .values
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad sweep value {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage(
            "--values must list at least one value".into(),
        ));
    }
    let base_out = args
        .run
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("graphreview-out"));
    println!("{}\teta", args.param);
    for value in values {
        let mut run_args = args.run.clone();
        run_args.out = Some(base_out.join(format!("sweep_{}_{value}", args.param)));
        let eta = match args.param.as_str() {
            "lambda" => {
                run_args.lambda = Some(value);
                run_args.mode = Some("evaluation".into());
                run(run_args)?
            }
            "gamma" => {
                run_args.gamma = Some(value);
                run_args.mode = Some("evaluation".into());
                run(run_args)?
            }
            "t" => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(CliError::Usage(format!(
                        "t values must be positive integers, got {value}"
                    )));
                }
                run_args.fixed_t = Some(value as usize);
                run_args.mode = Some("deployment".into());
                // deployment reports no eta; compute it from the final ranking
                let (corpus, engine, config, _) = resolve_run(&run_args)?;
                let outcome = run_pipeline(&corpus, &config, &engine)?;
                let labels: HashMap<PaperId, f64> = (0..corpus.len())
                    .filter_map(|i| corpus.label(i).map(|s| (corpus.paper(i).id.clone(), s)))
                    .collect();
                compute_eta(&outcome.best_ranking, &labels, config.metric)?
            }
            other => {
                return Err(CliError::Usage(format!(
                    "--param must be lambda|gamma|t, got {other:?}"
                )))
            }
        };
        println!("{value}\t{eta:.6}");
    }
    Ok(())
}
