use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use kcqa_core::complexity::{
    stopping_turn, ComplexityScore, ComplexityScorer, CompositeScorer, PerplexityCache, PerplexityClient,
    PerplexityScorer, PerplexitySource, ScoreBasis, TokenLengthScorer, TransitionModel,
};
use kcqa_core::data::{adapters, bucket_by_length, load_dataset, sample_stratified, write_dataset};
use kcqa_core::engine::EngineConfig;
use kcqa_core::eval::{self, PriceTable};
use kcqa_core::parallel::Execution;
use kcqa_core::prompts::PromptSet;
use kcqa_core::provider::{CompletionParams, HttpConfig, HttpProvider, LanguageModel, ScriptedProvider, ScriptedReply};
use kcqa_core::runner::{read_trajectories, run_batch, write_trajectories, BatchSpec, Method, DEFAULT_WIDTH};
use kcqa_core::DatasetRecord;

#[derive(Parser)]
#[command(name = "kcqa", version, about = "Knowledge-conflict QA runner and evaluator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a method over a dataset and write trajectories plus a report.
    Run(RunCommand),
    /// Score an existing trajectory file.
    Eval(EvalArgs),
    /// Decomposition statistics and length-bucket tables.
    Analyze(AnalyzeArgs),
    /// Iterate a knowledge-state transition model.
    Simulate(SimulateArgs),
    /// Convert an upstream benchmark export into the dataset format.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct RunCommand {
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    options: RunOptions,
}

#[derive(Args, Deserialize, Default, Debug, Clone)]
#[serde(default, deny_unknown_fields)]
struct RunOptions {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// micro_act, end_to_end, few_shot, cot, self_ask, comparative or gkp.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Chat-completions URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    credential_env: Option<String>,
    #[arg(long)]
    max_turns: Option<u32>,
    #[arg(long)]
    max_depth: Option<u32>,
    #[arg(long)]
    tau: Option<f64>,
    /// token_length, perplexity or composite.
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    n_per_type: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory output (JSON Lines). The report goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    /// Per-token price table (JSON).
    #[arg(long)]
    prices: Option<PathBuf>,
    #[arg(long)]
    ppl_endpoint: Option<String>,
    /// Perplexity cache (JSON Lines); loaded if present and saved after the run.
    #[arg(long)]
    ppl_cache: Option<PathBuf>,
    /// Replay a scripted reply file instead of calling an endpoint.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Directory of template overrides.
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
    #[arg(long)]
    self_ask_cap: Option<usize>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    timeout_ms: Option<u64>,
}

macro_rules! prefer {
    ($a:expr, $b:expr, $($f:ident),*) => {
        RunOptions { $($f: $a.$f.or($b.$f),)* }
    };
}

impl RunOptions {
    fn over(self, file: RunOptions) -> RunOptions {
        prefer!(
            self, file, dataset, method, model, endpoint, credential_env, max_turns, max_depth, tau, scorer,
            n_per_type, seed, out, width, prices, ppl_endpoint, ppl_cache, script, prompts_dir, self_ask_cap,
            max_retries, timeout_ms
        )
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "unknown")]
    model: String,
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Chat-completions URL of an over-rationalization judge.
    #[arg(long)]
    judge_endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4o")]
    judge_model: String,
    #[arg(long, default_value = "OPENAI_API_KEY")]
    credential_env: String,
    #[arg(long, default_value_t = DEFAULT_WIDTH)]
    width: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Transition model (JSON).
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Complexity threshold for the stopping turn.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct IngestArgs {
    /// conflictbank or kre.
    #[arg(long)]
    format: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ppl_endpoint: Option<String>,
    #[arg(long)]
    ppl_cache: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptEntry {
    Text(String),
    Reply(ScriptedReply),
}

fn load_script(path: &Path) -> Result<ScriptedProvider> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading script {}", path.display()))?;
    let entries: Vec<ScriptEntry> = serde_json::from_str(&text).with_context(|| format!("parsing script {}", path.display()))?;
    Ok(ScriptedProvider::new(entries.into_iter().map(|e| match e {
        ScriptEntry::Text(t) => ScriptedReply::text(t),
        ScriptEntry::Reply(r) => r,
    })))
}

fn http_provider(endpoint: Option<String>, credential_env: Option<String>, opts: &RunOptions) -> Result<HttpProvider> {
    let defaults = HttpConfig::default();
    let config = HttpConfig {
        endpoint: endpoint.unwrap_or(defaults.endpoint),
        credential_env: credential_env.unwrap_or(defaults.credential_env),
        max_retries: opts.max_retries.unwrap_or(defaults.max_retries),
        timeout_ms: opts.timeout_ms.unwrap_or(defaults.timeout_ms),
        backoff_base_ms: defaults.backoff_base_ms,
    };
    HttpProvider::from_env(config).context("configuring the completion provider")
}

fn load_cache(path: Option<&Path>) -> Result<PerplexityCache> {
    match path {
        Some(p) if p.exists() => PerplexityCache::load(p).with_context(|| format!("loading {}", p.display())),
        _ => Ok(PerplexityCache::default()),
    }
}

enum Scorer {
    Tokens(TokenLengthScorer),
    Perplexity(PerplexityScorer),
    Composite(CompositeScorer),
}

impl Scorer {
    fn as_dyn(&self) -> &dyn ComplexityScorer {
        match self {
            Scorer::Tokens(s) => s,
            Scorer::Perplexity(s) => s,
            Scorer::Composite(s) => s,
        }
    }

    fn cache(&self) -> Option<&PerplexityCache> {
        match self {
            Scorer::Tokens(_) => None,
            Scorer::Perplexity(s) => Some(s.cache()),
            Scorer::Composite(s) => Some(s.perplexity.cache()),
        }
    }
}

fn build_scorer(basis: ScoreBasis, opts: &RunOptions, records: &[DatasetRecord]) -> Result<Scorer> {
    if basis == ScoreBasis::TokenLength {
        return Ok(Scorer::Tokens(TokenLengthScorer));
    }
    let cache = load_cache(opts.ppl_cache.as_deref())?;
    let service: Option<Box<dyn PerplexitySource>> = opts
        .ppl_endpoint
        .as_deref()
        .map(|url| Box::new(PerplexityClient::new(url, Duration::from_secs(30))) as Box<dyn PerplexitySource>);
    if service.is_none() && cache.is_empty() {
        log::warn!("no perplexity service or cache configured; falling back to token length");
        return Ok(Scorer::Tokens(TokenLengthScorer));
    }
    let ppl = PerplexityScorer::new(cache, service);
    if basis == ScoreBasis::Perplexity {
        return Ok(Scorer::Perplexity(ppl));
    }
    let corpus: Vec<String> = records.iter().map(DatasetRecord::evidence_text).filter(|t| !t.is_empty()).collect();
    let composite = CompositeScorer::fit(ppl, corpus.iter().map(String::as_str)).context("fitting composite scorer")?;
    Ok(Scorer::Composite(composite))
}

fn report_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cmd: RunCommand) -> Result<()> {
    let file = match &cmd.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => RunOptions::default(),
    };
    let opts = cmd.options.over(file);
    let dataset = opts.dataset.clone().context("--dataset is required")?;
    let method: Method = opts.method.as_deref().unwrap_or("micro_act").parse().map_err(anyhow::Error::msg)?;
    let basis: ScoreBasis = opts.scorer.as_deref().unwrap_or("token_length").parse().map_err(anyhow::Error::msg)?;

    let provider: Box<dyn LanguageModel> = match &opts.script {
        Some(path) => Box::new(load_script(path)?),
        None => Box::new(http_provider(opts.endpoint.clone(), opts.credential_env.clone(), &opts)?),
    };

    let (records, manifest) = load_dataset(&dataset).with_context(|| format!("loading {}", dataset.display()))?;
    log::info!("loaded {} records from {}", manifest.record_count, manifest.path);
    let records = match opts.n_per_type {
        Some(n) => sample_stratified(&records, n, opts.seed.unwrap_or(0))?,
        None => records,
    };

    let scorer = build_scorer(basis, &opts, &records)?;
    let basis = scorer.as_dyn().basis();
    let tau = opts.tau.unwrap_or_else(|| basis.default_threshold());
    let defaults = EngineConfig::default();
    let engine = EngineConfig {
        turn_budget: opts.max_turns.unwrap_or(defaults.turn_budget),
        max_depth: opts.max_depth.unwrap_or(defaults.max_depth),
        threshold: ComplexityScore::new(tau, basis),
        ..defaults
    };
    engine.validate()?;
    let prompts = match &opts.prompts_dir {
        Some(dir) => PromptSet::from_dir(dir).with_context(|| format!("loading prompts from {}", dir.display()))?,
        None => PromptSet::builtin(),
    };
    let model_name = opts.model.clone().unwrap_or_else(|| CompletionParams::default().model_name);
    let params = CompletionParams { model_name: model_name.clone(), ..Default::default() };
    let mut spec = BatchSpec::new(method, engine, &prompts, &params);
    if let Some(cap) = opts.self_ask_cap {
        spec.self_ask_cap = cap;
    }

    let width = opts.width.unwrap_or(if opts.script.is_some() { 1 } else { DEFAULT_WIDTH });
    let trajectories = run_batch(&spec, &records, provider.as_ref(), scorer.as_dyn(), width);
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from("trajectories.jsonl"));
    write_trajectories(&out, &trajectories).with_context(|| format!("writing {}", out.display()))?;

    let prices = opts.prices.as_deref().map(PriceTable::load).transpose()?;
    let report = eval::evaluate(&trajectories, &records, &model_name, prices.as_ref())?;
    write_json(&report_path(&out), &report)?;
    if let (Some(cache), Some(path)) = (scorer.cache(), opts.ppl_cache.as_deref()) {
        cache.save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", eval::render_report_table(std::slice::from_ref(&report)));
    if let Some(row) = &report.cost_row {
        print!("{}", eval::render_cost_table(std::slice::from_ref(row)));
    }
    if report.failed > 0 {
        log::warn!("{} of {} trajectories failed", report.failed, report.n);
    }
    println!("wrote {} trajectories to {}", trajectories.len(), out.display());
    Ok(())
}

fn load_pair(trajectories: &Path, dataset: &Path) -> Result<(Vec<kcqa_core::Trajectory>, Vec<DatasetRecord>)> {
    let t = read_trajectories(trajectories).with_context(|| format!("reading {}", trajectories.display()))?;
    let (records, _) = load_dataset(dataset).with_context(|| format!("loading {}", dataset.display()))?;
    Ok((t, records))
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let (trajectories, records) = load_pair(&args.trajectories, &args.dataset)?;
    let prices = args.prices.as_deref().map(PriceTable::load).transpose()?;
    let mut report = eval::evaluate(&trajectories, &records, &args.model, prices.as_ref())?;
    if let Some(endpoint) = args.judge_endpoint {
        let judge = HttpProvider::from_env(HttpConfig {
            endpoint,
            credential_env: args.credential_env.clone(),
            ..Default::default()
        })
        .context("configuring the judge")?;
        let params = CompletionParams { model_name: args.judge_model.clone(), ..Default::default() };
        let ratio = eval::judge_run(
            &trajectories,
            &records,
            &judge,
            &PromptSet::builtin(),
            &params,
            Execution::with_width(args.width),
        )?;
        report.over_rationalization_ratio = Some(ratio);
    }
    print!("{}", eval::render_report_table(std::slice::from_ref(&report)));
    if let Some(row) = &report.cost_row {
        print!("{}", eval::render_cost_table(std::slice::from_ref(row)));
    }
    if let Some(r) = report.over_rationalization_ratio {
        println!("over-rationalization ratio: {:.3}", r);
    }
    match &args.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let (trajectories, records) = load_pair(&args.trajectories, &args.dataset)?;
    let stats = eval::decomposition_stats(&trajectories, &records)?;
    let by_domain = eval::decomposition_rate_by_domain(&trajectories, &records)?;
    let buckets: std::collections::BTreeMap<String, usize> =
        bucket_by_length(&records).into_iter().map(|(k, ids)| (k.label().to_string(), ids.len())).collect();
    print!("{}", eval::render_rate_table("Evidence tokens", &stats.rate_by_bucket));
    print!("{}", eval::render_rate_table("Domain", &by_domain));
    println!("average turns: {:.2}", stats.avg_turns);
    for (ct, v) in &stats.avg_steps_by_conflict {
        println!("avg DECOMPOSE steps [{ct}]: {v:.2}");
    }
    let json = serde_json::json!({
        "decomposition": stats,
        "rate_by_domain": by_domain,
        "bucket_sizes": buckets,
    });
    match &args.out {
        Some(p) => write_json(p, &json)?,
        None => println!("{}", serde_json::to_string_pretty(&json)?),
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let model = TransitionModel::from_json_file(&args.model_file)?;
    let dists = model.iterate(args.steps)?;
    let mut header = format!("{:>5}", "step");
    for s in &model.states {
        header.push_str(&format!("  {s:>12}"));
    }
    header.push_str(&format!("  {:>18}", "sum"));
    if model.complexity.is_some() {
        header.push_str(&format!("  {:>12}", "E[complexity]"));
    }
    println!("{header}");
    let mut schedule = Vec::new();
    for (t, d) in dists.iter().enumerate() {
        let mut line = format!("{t:>5}");
        for p in d {
            line.push_str(&format!("  {p:>12.9}"));
        }
        line.push_str(&format!("  {:>18.15}", d.iter().sum::<f64>()));
        if let Some(c) = model.expected_complexity(d) {
            line.push_str(&format!("  {c:>12.4}"));
            schedule.push(c);
        }
        println!("{line}");
    }
    if let Some(tau) = args.tau {
        if schedule.is_empty() {
            bail!("--tau needs per-state complexity values in the model file");
        }
        let end = schedule.iter().position(|&c| c <= tau).map_or(schedule.len(), |i| i + 1);
        match stopping_turn(&schedule[..end], tau) {
            Ok(t) => println!("stopping turn: {t} (expected complexity {:.4} <= {tau})", schedule[t]),
            Err(e) => println!("stopping turn: none ({e})"),
        }
    }
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    let format: adapters::Upstream = args.format.parse().map_err(anyhow::Error::msg)?;
    let records = adapters::convert_file(format, &args.input)?;
    write_dataset(&args.out, &records)?;
    let manifest = kcqa_core::data::DatasetManifest::of(&args.out, &records);
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    if let Some(url) = args.ppl_endpoint {
        let cache_path = args.ppl_cache.context("--ppl-endpoint needs --ppl-cache to store the scores")?;
        let cache = load_cache(Some(&cache_path))?;
        let client = PerplexityClient::new(&url, Duration::from_secs(120));
        let texts: Vec<String> = records.iter().map(DatasetRecord::evidence_text).filter(|t| !t.is_empty()).collect();
        let scored = client.warm_cache(&cache, &texts)?;
        cache.save(&cache_path).with_context(|| format!("writing {}", cache_path.display()))?;
        println!("scored {scored} new texts into {}", cache_path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(c) => run(c),
        Command::Eval(a) => eval_cmd(a),
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Ingest(a) => ingest(a),
    }
}
