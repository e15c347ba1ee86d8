use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lmturk_core::harness::experiment::write_outputs;
use lmturk_core::harness::offline::{aggregate_dump, read_dump, read_profiles};
use lmturk_core::harness::{emit_curves, load_dataset, run_experiment, summarize, CommitteeSource, ExperimentConfig, RunLog};
use lmturk_core::student::{evaluate, load_model};
use lmturk_core::{AggregationStrategy, Metric};

/// Active learning with committees of few-shot annotators.
#[derive(Parser)]
#[command(name = "lmturk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment with a simulated committee.
    Simulate(ExperimentArgs),
    /// Run an experiment against remote workers.
    Run(ExperimentArgs),
    /// Aggregate an annotation dump offline.
    Aggregate(AggregateArgs),
    /// Score a saved student on a labeled dataset.
    Eval(EvalArgs),
    /// Write learning-curve tables from a run log.
    Curves(CurvesArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    /// NDJSON lines of `{id, worker_id, logits, label_index?}`.
    #[arg(long)]
    dump: PathBuf,
    #[arg(long, default_value = "majority_voting")]
    strategy: AggregationStrategy,
    /// JSON array of worker profiles, needed by the weighted strategies.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Directory for `aggregated.ndjson`; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled TSV dataset.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "accuracy")]
    metric: Metric,
}

#[derive(Args)]
struct CurvesArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate(args) => experiment(args, CommitteeSource::Simulated),
        Command::Run(args) => experiment(args, CommitteeSource::Remote),
        Command::Aggregate(args) => aggregate(args).map(|()| ExitCode::SUCCESS),
        Command::Eval(args) => eval(args).map(|()| ExitCode::SUCCESS),
        Command::Curves(args) => curves(args).map(|()| ExitCode::SUCCESS),
    }
}

fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir.clone_from(out);
    }
    config.validate()?;
    Ok(config)
}

fn experiment(args: ExperimentArgs, source: CommitteeSource) -> Result<ExitCode> {
    let config = load_config(&args)?;
    let output = run_experiment(&config, source)?;
    let written = write_outputs(&output, &config.output_dir)
        .with_context(|| format!("writing outputs to {}", config.output_dir.display()))?;

    let stdout = io::stdout();
    let mut out = stdout.lock();
    for rep in &output.log.repetitions {
        match (&rep.error, rep.final_test_metric) {
            (Some(error), _) => {
                let kind = if rep.retryable { "retryable" } else { "fatal" };
                writeln!(out, "repetition {}: failed ({kind}): {error}", rep.repetition)?;
            }
            (None, Some(metric)) => {
                let note = if rep.exhausted { " (pool exhausted)" } else { "" };
                writeln!(out, "repetition {}: final {} {metric:.4}{note}", rep.repetition, config.loop_config.metric.as_str())?;
            }
            (None, None) => writeln!(out, "repetition {}: completed", rep.repetition)?,
        }
    }
    if let Some(last) = summarize(&output.log).last() {
        writeln!(out, "iteration {}: mean {:.4} stddev {:.4} over {}", last.iteration, last.mean, last.stddev, last.count)?;
    }
    for path in written {
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(if output.log.all_completed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn aggregate(args: AggregateArgs) -> Result<()> {
    let groups = read_dump(File::open(&args.dump).with_context(|| format!("opening {}", args.dump.display()))?)
        .with_context(|| format!("reading {}", args.dump.display()))?;
    let profiles = args
        .profiles
        .as_deref()
        .map(|p| -> Result<_> { Ok(read_profiles(File::open(p).with_context(|| format!("opening {}", p.display()))?)?) })
        .transpose()?;
    let records = aggregate_dump(&groups, args.strategy, profiles.as_deref())?;

    let mut sink: Box<dyn Write> = match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Box::new(File::create(dir.join("aggregated.ndjson"))?)
        }
        None => Box::new(io::stdout().lock()),
    };
    let mut sink = BufWriter::new(&mut sink);
    for record in &records {
        serde_json::to_writer(&mut sink, record)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model).with_context(|| format!("loading model {}", args.model.display()))?;
    let dataset = load_dataset(&args.data, Some(model.label_set()))
        .with_context(|| format!("loading dataset {}", args.data.display()))?;
    let featurizer = model.featurizer_config().featurizer()?;
    let (labeled, unlabeled) = dataset.featurize(&featurizer);
    if !unlabeled.is_empty() {
        bail!("{} records in {} have no label", unlabeled.len(), args.data.display());
    }
    if labeled.is_empty() {
        bail!("{} has no records", args.data.display());
    }
    let score = evaluate(&model, &labeled, args.metric)?;
    println!("{} {score:.6} n={}", args.metric.as_str(), labeled.len());
    Ok(())
}

fn curves(args: CurvesArgs) -> Result<()> {
    let log = RunLog::load(&args.log).with_context(|| format!("loading run log {}", args.log.display()))?;
    for path in emit_curves(&log, Path::new(&args.out))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
