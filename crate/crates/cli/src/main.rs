use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prop_probe::corpus::SplitName;
use prop_probe::prompting::PromptPattern;
use prop_probe::runner::{
    cmd_classify, cmd_evaluate, cmd_export_finetune, cmd_preview_prompt, cmd_replay, cmd_split, cmd_validate,
    EvaluateOptions, ExportOptions, ReplayOptions, RunConfig, RunnerError, Settings,
};

/// Propaganda technique detection over news articles with prompted or
/// fine-tuned language models.
#[derive(Parser)]
#[command(name = "prop-probe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check corpus and label invariants and print statistics.
    Validate(CorpusArgs),
    /// Write a seeded train/validation(/test) split manifest.
    Split(SplitArgs),
    /// Print the rendered instruction and its token estimate.
    PreviewPrompt(PreviewArgs),
    /// Classify every article of a split.
    Classify(Box<ClassifyArgs>),
    /// Write prompt/completion JSONL for fine-tuning.
    ExportFinetune(ExportArgs),
    /// Score a finished run and render tables.
    Evaluate(EvaluateArgs),
    /// Re-run a recorded run from fixtures and score it.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Key/value settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Article directory (repeatable).
    #[arg(long)]
    corpus: Vec<PathBuf>,
    /// Span label file or directory of `.labels` files.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    common: CorpusArgs,
    /// Held-out test article directory.
    #[arg(long)]
    test_corpus: Option<PathBuf>,
    #[arg(long)]
    fraction: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Manifest file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreviewArgs {
    /// base, cot or noinstr.
    #[arg(long, default_value = "base")]
    pattern: PromptPattern,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    common: CorpusArgs,
    #[arg(long)]
    split_manifest: Option<String>,
    #[arg(long)]
    split_name: Option<String>,
    /// gpt4-base, gpt4-cot, gpt3-base, gpt3-cot or gpt3-noinstr.
    #[arg(long)]
    model_preset: Option<String>,
    /// Endpoint model name, e.g. a fine-tuned model id.
    #[arg(long)]
    model_name: Option<String>,
    #[arg(long)]
    pattern: Option<String>,
    /// live, replay or mock.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    fixtures: Option<String>,
    #[arg(long)]
    mock_rules: Option<String>,
    /// Record every successful response as a fixture in this directory.
    #[arg(long)]
    record: Option<String>,
    #[arg(long)]
    overwrite_fixtures: bool,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    fraction: Option<String>,
    #[arg(long)]
    concurrency: Option<String>,
    #[arg(long)]
    completion_reserve: Option<String>,
    /// Fraction of failed articles that fails the run.
    #[arg(long)]
    failure_threshold: Option<String>,
    /// Run directory.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: CorpusArgs,
    #[arg(long)]
    split_manifest: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    split_name: SplitName,
    /// Repeatable; defaults to every pattern.
    #[arg(long)]
    pattern: Vec<PromptPattern>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CorpusArgs,
    /// Run directory written by `classify`.
    #[arg(long)]
    run: PathBuf,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    common: CorpusArgs,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Expected `metrics.json`; any byte difference fails.
    #[arg(long)]
    golden: Option<PathBuf>,
}

fn base_settings(common: &CorpusArgs) -> Result<Settings, RunnerError> {
    let file = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
            Settings::from_file_text(&text)?
        }
        None => Settings::default(),
    };
    let flags = Settings {
        corpus: common.corpus.clone(),
        labels: common.labels.clone(),
        ..Settings::default()
    };
    Ok(file.overlay(flags))
}

fn flag_settings(pairs: &[(&str, Option<&String>)]) -> Result<Settings, RunnerError> {
    let mut s = Settings::default();
    for (key, value) in pairs {
        if let Some(v) = value {
            s.set(key, v)?;
        }
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), RunnerError> {
    match cli.command {
        Command::Validate(args) => {
            let s = base_settings(&args)?;
            let report = cmd_validate(s.require_corpus()?, s.require_labels()?)?;
            print!("{}", report.render());
            if !report.is_clean() {
                return Err(RunnerError::Validation(report.findings.len()));
            }
        }
        Command::Split(args) => {
            let flags = flag_settings(&[
                ("fraction", args.fraction.as_ref()),
                ("seed", args.seed.as_ref()),
            ])?;
            let mut s = base_settings(&args.common)?.overlay(flags);
            if args.test_corpus.is_some() {
                s.test_corpus = args.test_corpus;
            }
            let a = cmd_split(&s, &args.out)?;
            println!(
                "train {}  validation {}  test {}  -> {}",
                a.train.len(),
                a.validation.len(),
                a.test.len(),
                args.out.display()
            );
        }
        Command::PreviewPrompt(args) => print!("{}", cmd_preview_prompt(args.pattern)?),
        Command::Classify(args) => {
            let mut flags = flag_settings(&[
                ("split-manifest", args.split_manifest.as_ref()),
                ("split-name", args.split_name.as_ref()),
                ("model-preset", args.model_preset.as_ref()),
                ("model-name", args.model_name.as_ref()),
                ("pattern", args.pattern.as_ref()),
                ("backend", args.backend.as_ref()),
                ("fixtures", args.fixtures.as_ref()),
                ("mock-rules", args.mock_rules.as_ref()),
                ("record", args.record.as_ref()),
                ("base-url", args.base_url.as_ref()),
                ("seed", args.seed.as_ref()),
                ("fraction", args.fraction.as_ref()),
                ("concurrency", args.concurrency.as_ref()),
                ("completion-reserve", args.completion_reserve.as_ref()),
                ("failure-threshold", args.failure_threshold.as_ref()),
                ("out", args.out.as_ref()),
            ])?;
            if args.overwrite_fixtures {
                flags.overwrite_fixtures = Some(true);
            }
            let cfg = RunConfig::from_settings(&base_settings(&args.common)?.overlay(flags))?;
            let m = cmd_classify(&cfg)?;
            let anomalies: usize = m.articles.iter().map(|a| a.anomalies.len()).sum();
            println!(
                "classified {} article(s) of split {}: {} failed, {} anomalies -> {}",
                m.articles.len(),
                m.split_name.as_str(),
                m.failed,
                anomalies,
                cfg.out.display()
            );
        }
        Command::ExportFinetune(args) => {
            let s = base_settings(&args.common)?;
            let patterns = if args.pattern.is_empty() {
                PromptPattern::ALL.to_vec()
            } else {
                args.pattern
            };
            let written = cmd_export_finetune(&ExportOptions {
                corpus: s.require_corpus()?.to_vec(),
                labels: s.require_labels()?.clone(),
                split_manifest: args.split_manifest.or(s.split_manifest),
                split_name: args.split_name,
                patterns,
                out: args.out,
            })?;
            for (path, n) in written {
                println!("{n} records -> {}", path.display());
            }
        }
        Command::Evaluate(args) => {
            let s = base_settings(&args.common)?;
            let m = cmd_evaluate(&EvaluateOptions {
                run_dir: args.run.clone(),
                corpus: s.corpus.clone(),
                labels: s.require_labels()?.clone(),
                out: args.out,
            })?;
            println!(
                "{}: precision {:.4}  recall {:.4}  F1 {:.4} over {} article(s); above baseline on {} of 14",
                m.model_tag,
                m.report.precision,
                m.report.recall,
                m.report.f1,
                m.articles,
                m.comparison.above_baseline
            );
        }
        Command::Replay(args) => {
            let s = base_settings(&args.common)?;
            let outcome = cmd_replay(&ReplayOptions {
                run_dir: args.run,
                fixtures: args.fixtures,
                corpus: s.corpus.clone(),
                labels: s.require_labels()?.clone(),
                out: args.out.clone(),
                golden: args.golden,
            })?;
            println!(
                "replayed {} article(s): F1 {:.4}{} -> {}",
                outcome.manifest.articles.len(),
                outcome.metrics.report.f1,
                if outcome.golden_match == Some(true) { ", matches golden" } else { "" },
                args.out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
