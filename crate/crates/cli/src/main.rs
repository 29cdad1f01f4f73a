//! `volcast`: command-line front end for ingesting tweets, building features,
//! training forecasters, running ablations and searches, and writing reports.
//!
//! Exit codes: 0 on success, 1 for invalid arguments or configuration,
//! 2 when a run fails at runtime.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use volcast::experiment::{
    self, ExperimentConfig, ExperimentError, ReportOptions, RunManifest, SearchSpace, Settings,
};
use volcast::features::{self, FeatureError};
use volcast::ingest::{self, Diagnostics, IngestOptions, RelevanceRules, StoredTweet, VaderLexicon};
use volcast::synth::{Coupling, SynthConfig};

#[derive(Parser)]
#[command(name = "volcast", version, about = "Realized-volatility forecasting from prices and tweets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Flatten raw tweet JSON Lines into a sorted, scored tweet table.
    Ingest(IngestArgs),
    /// Join candles and tweets into the 15-minute feature table.
    Featurize(FeaturizeArgs),
    /// Train repeated seeded runs of one model.
    Train(ExperimentArgs),
    /// Compare D-TCN feature subsets against the TCN baseline.
    Ablate(AblateArgs),
    /// Random hyperparameter search on the train/validation split.
    Hpo(HpoArgs),
    /// Tables and plots from run manifests.
    Report(ReportArgs),
    /// Write a synthetic candle and tweet dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Raw JSON Lines files; each is read on its own thread.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
    /// Tab-separated token/valence lexicon; the bundled one by default.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Keep tweets that do not mention BTC, $BTC or Bitcoin.
    #[arg(long)]
    no_filter: bool,
}

#[derive(Args)]
struct FeaturizeArgs {
    /// `timestamp,close` CSV of 15-minute bars keyed by open time.
    #[arg(long)]
    candles: PathBuf,
    /// Tweet table written by `ingest`.
    #[arg(long)]
    tweets: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set epochs=10`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Feature table (the `data` key).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (the `output` key).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// tcn, dtcn, lstm, gru, arrv, garch or constant.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Semicolon-separated subsets such as `User;Count,VADER`, or `all`.
    #[arg(long)]
    subsets: Option<String>,
    /// Evaluate each D-TCN as its TCN with a zeroed lower pipeline.
    #[arg(long)]
    zero_lower: bool,
}

#[derive(Args)]
struct HpoArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Number of sampled configurations.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of run manifests.
    #[arg(long, required = true)]
    manifests: Vec<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
    /// Row the others are tested against; AR-RV when present.
    #[arg(long)]
    baseline: Option<String>,
    /// student (one-sample against a deterministic baseline) or welch.
    #[arg(long, default_value = "student")]
    ttest: String,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 144)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tweet groups tied to next-day volatility: none, user, or a
    /// comma-separated list of count, vader, tweet, user.
    #[arg(long, default_value = "none")]
    coupling: String,
    /// Coupling strength applied to each listed group.
    #[arg(long, default_value_t = 1.5)]
    strength: f64,
    #[arg(long)]
    tweets_per_bin: Option<f64>,
}

/// An error tagged with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure { code: 1, error: anyhow::anyhow!(msg.into()) }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error: anyhow::Error = e.into();
        let validation = error.chain().any(|c| {
            c.downcast_ref::<ExperimentError>().is_some_and(ExperimentError::is_validation)
                || matches!(
                    c.downcast_ref::<FeatureError>(),
                    Some(FeatureError::EmptySelector | FeatureError::UnknownGroup(_))
                )
        });
        Failure { code: if validation { 1 } else { 2 }, error }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Featurize(a) => cmd_featurize(a),
        Command::Train(a) => cmd_train(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Hpo(a) => cmd_hpo(a),
        Command::Report(a) => cmd_report(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_ingest(a: IngestArgs) -> Result<(), Failure> {
    let lexicon = match &a.lexicon {
        Some(p) => VaderLexicon::from_file(p).with_context(|| format!("lexicon {}", p.display()))?,
        None => VaderLexicon::builtin(),
    };
    let options = IngestOptions { relevance: (!a.no_filter).then(RelevanceRules::default) };
    for p in &a.inputs {
        if !p.is_file() {
            return Err(invalid(format!("input {} does not exist", p.display())));
        }
    }
    let results: Vec<Result<(Vec<StoredTweet>, Diagnostics)>> = std::thread::scope(|s| {
        let handles: Vec<_> = a
            .inputs
            .iter()
            .map(|p| {
                let (lexicon, options) = (&lexicon, &options);
                s.spawn(move || {
                    ingest::ingest_file(p, lexicon, options).with_context(|| format!("reading {}", p.display()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ingest worker panicked")).collect()
    });
    let mut rows = Vec::new();
    let mut diag = Diagnostics::default();
    for r in results {
        let (mut part, d) = r?;
        rows.append(&mut part);
        diag.merge(&d);
    }
    let n = rows.len();
    ingest::write_sorted(rows, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("{diag}");
    info!("wrote {n} tweets to {}", a.out.display());
    Ok(())
}

fn cmd_featurize(a: FeaturizeArgs) -> Result<(), Failure> {
    let candles = features::read_candles(&a.candles).with_context(|| format!("candles {}", a.candles.display()))?;
    let tweets = ingest::read_stored(&a.tweets).with_context(|| format!("tweets {}", a.tweets.display()))?;
    let mut tweets = tweets;
    tweets.sort_by_key(|t| t.record.created_at);
    let price = features::daily_returns(&candles)?;
    let days = features::assemble_days(&price, &tweets);
    features::write_feature_csv(&a.out, &days)?;
    eprintln!("days={} dropped={}", days.len(), price.dropped.len());
    Ok(())
}

fn settings(a: &ExperimentArgs, extra: &[(&str, String)]) -> Result<Settings, Failure> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::new(),
    };
    let flags = [
        ("data", a.data.as_ref().map(|p| p.display().to_string())),
        ("output", a.out.as_ref().map(|p| p.display().to_string())),
        ("seed", a.seed.map(|s| s.to_string())),
        ("runs", a.runs.map(|r| r.to_string())),
        ("model", a.model.clone()),
    ];
    for (k, v) in flags.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))) {
        cfg.set(k, &v)?;
    }
    for (k, v) in extra {
        cfg.set(k, v)?;
    }
    for o in &a.overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg.resolve()?)
}

fn write_runs(s: &Settings, runs: &mut [RunManifest]) -> Result<(), Failure> {
    let dir = s.output.join("manifests");
    experiment::write_manifests(&dir, runs)?;
    std::fs::write(s.output.join("config.txt"), format!("config_hash = {}\n{:#?}\n", s.hash(), s))?;
    let failed = runs.iter().filter(|r| !r.succeeded()).count();
    for r in runs.iter() {
        match (&r.failure, r.metrics.and_then(|m| m.mape)) {
            (None, Some(m)) => println!("{} run {} seed {}: MAPE {m:.4}", r.label, r.run_index, r.seed),
            (None, None) => println!("{} run {} seed {}: MAPE undefined", r.label, r.run_index, r.seed),
            (Some(e), _) => println!("{} run {} seed {}: failed: {e}", r.label, r.run_index, r.seed),
        }
    }
    if failed > 0 {
        eprintln!("{failed} of {} runs failed; see the manifests", runs.len());
    }
    Ok(())
}

fn cmd_train(a: ExperimentArgs) -> Result<(), Failure> {
    let s = settings(&a, &[])?;
    let days = experiment::load_days(&s)?;
    let mut runs = experiment::train(&s, &days)?;
    write_runs(&s, &mut runs)?;
    if runs.iter().all(|r| !r.succeeded()) {
        return Err(Failure { code: 2, error: anyhow::anyhow!("every run failed") });
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), Failure> {
    let mut extra = Vec::new();
    if let Some(sub) = &a.subsets {
        extra.push(("subsets", sub.clone()));
    }
    if a.zero_lower {
        extra.push(("zero_lower", "true".to_string()));
    }
    let s = settings(&a.exp, &extra)?;
    let subsets = s.ablation_subsets()?;
    let days = experiment::load_days(&s)?;
    let mut ab = experiment::ablate(&s, &days, &subsets)?;
    write_runs(&s, &mut ab.manifests)?;
    std::fs::write(s.output.join("ablation.csv"), ab.table_csv())?;
    std::fs::write(s.output.join("ablation.txt"), ab.table_text())?;
    print!("{}", ab.table_text());
    Ok(())
}

fn config_lines(c: &volcast::models::ModelConfig) -> String {
    format!(
        "width = {}\nkernel_size = {}\ndilation_base = {}\nskip_connections = {}\nnormalization = {}\ndropout = {}\nepsilon = {}\nlearning_rate = {}\nweight_decay = {}\nepochs = {}\n",
        c.width,
        c.kernel_size,
        c.dilation_base,
        c.skip_connections,
        c.normalization,
        c.dropout,
        c.epsilon,
        c.learning_rate,
        c.weight_decay,
        c.epochs
    )
}

fn cmd_hpo(a: HpoArgs) -> Result<(), Failure> {
    let extra: Vec<(&str, String)> = a.budget.map(|b| ("hpo_budget", b.to_string())).into_iter().collect();
    let s = settings(&a.exp, &extra)?;
    let kind = match s.model {
        experiment::Forecaster::Deep(k) => k,
        other => return Err(invalid(format!("{other} has no hyperparameters to search"))),
    };
    let space: SearchSpace = SearchSpace { kind, ..s.space };
    let days = experiment::load_days(&s)?;
    let horizon = &days[..s.horizon().min(days.len())];
    let result = experiment::random_search(
        horizon,
        &space,
        &s.network,
        s.train_days,
        s.validation_days,
        s.hpo_budget,
        s.seed,
    )?;
    std::fs::create_dir_all(&s.output)?;
    std::fs::write(s.output.join("hpo_trials.csv"), result.trial_log_csv())?;
    let best = result.best_trial();
    let text = format!(
        "# best of {} trials: validation MAPE {}\nmodel = {}\n{}",
        result.trials.len(),
        result.best_mape(),
        s.model.to_string().to_lowercase().replace('-', ""),
        config_lines(&best.config)
    );
    std::fs::write(s.output.join("best_config.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let ttest = match a.ttest.to_ascii_lowercase().as_str() {
        "student" => volcast::eval::TTestKind::Student,
        "welch" => volcast::eval::TTestKind::Welch,
        other => return Err(invalid(format!("unknown t-test {other:?}"))),
    };
    let mut manifests = Vec::new();
    for dir in &a.manifests {
        if !dir.is_dir() {
            return Err(invalid(format!("{} is not a directory", dir.display())));
        }
        manifests.extend(experiment::read_manifests(dir)?);
    }
    if manifests.is_empty() {
        return Err(invalid("no manifests found"));
    }
    let opts = ReportOptions { baseline: a.baseline, ttest, bootstrap_samples: a.bootstrap, seed: a.seed, buckets: 4 };
    let files = experiment::write_report(&manifests, &a.out, &opts)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn parse_coupling(spec: &str, strength: f64) -> Result<Coupling, Failure> {
    let mut c = Coupling::none();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.to_ascii_lowercase().as_str() {
            "none" => {}
            "count" => c.count = strength,
            "vader" => c.vader = strength,
            "tweet" => c.tweet = strength,
            "user" => c.user = strength,
            other => return Err(invalid(format!("unknown coupling group {other:?}"))),
        }
    }
    Ok(c)
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    if a.days == 0 {
        return Err(invalid("days must be positive"));
    }
    let mut cfg = SynthConfig {
        days: a.days,
        seed: a.seed,
        coupling: parse_coupling(&a.coupling, a.strength)?,
        ..SynthConfig::default()
    };
    if let Some(t) = a.tweets_per_bin {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid("tweets-per-bin must be a non-negative number"));
        }
        cfg.tweets_per_bin = t;
    }
    let data = cfg.generate();
    std::fs::create_dir_all(&a.out)?;
    let out = |name: &str| -> PathBuf { Path::new(&a.out).join(name) };
    features::write_candles(&out("candles.csv"), &data.candles)?;
    std::fs::write(out("tweets.jsonl"), data.tweet_jsonl())?;
    features::write_feature_csv(&out("features.csv"), &data.days()?)?;
    eprintln!("candles={} tweets={} days={}", data.candles.len(), data.tweets.len(), a.days);
    Ok(())
}
