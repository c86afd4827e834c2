use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hunkmark::LabelerMode;
use hunkmark_cli::commands;
use hunkmark_cli::config::{BackendKind, ConfigLayer, RunConfig};

#[derive(Parser)]
#[command(name = "hunkmark", version, about = "Label the hunks of a unified diff with change types")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the labeler only.
    Label(Opts),
    /// Refine an existing labeler output.
    Refine(Opts),
    /// Label, refine and (with --ground-truth) evaluate.
    Run(Opts),
    /// Score predictions against ground truth.
    Evaluate(Opts),
    /// Run every case directory under ROOT and pool the scores.
    Benchmark {
        root: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Args, Default)]
struct Opts {
    /// TOML file with the same keys as these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prompt granularity: hunk, file or patch.
    #[arg(long)]
    mode: Option<LabelerMode>,
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    /// Name of the environment variable holding the API token.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    context_lines: Option<usize>,
    /// Concurrent labeler requests.
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    diff: Option<PathBuf>,
    /// Directory with old/ and new/ trees for surrounding context.
    #[arg(long)]
    files_dir: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reply script for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Labeling to score (default: OUT/refined.json).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Labeler output to refine (default: OUT/labeler.json).
    #[arg(long)]
    labeler_output: Option<PathBuf>,
    #[arg(long)]
    templates_dir: Option<PathBuf>,
    /// Write prompts instead of calling the model.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    skip_refiner: bool,
}

impl Opts {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let flags = ConfigLayer {
            mode: self.mode,
            backend: self.backend,
            model: self.model,
            endpoint: self.endpoint,
            api_key_env: self.api_key_env,
            context_lines: self.context_lines,
            parallel: self.parallel,
            diff: self.diff,
            files_dir: self.files_dir,
            ground_truth: self.ground_truth,
            out: self.out,
            script: self.script,
            predictions: self.predictions,
            labeler_output: self.labeler_output,
            templates_dir: self.templates_dir,
            dry_run: self.dry_run.then_some(true),
            skip_refiner: self.skip_refiner.then_some(true),
            ..Default::default()
        };
        RunConfig::resolve(flags, self.config.as_deref(), |k| std::env::var(k).ok())
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Label(o) => commands::cmd_label(&o.resolve()?),
        Command::Refine(o) => commands::cmd_refine(&o.resolve()?),
        Command::Run(o) => commands::cmd_run(&o.resolve()?),
        Command::Evaluate(o) => commands::cmd_evaluate(&o.resolve()?),
        Command::Benchmark { root, opts } => commands::cmd_benchmark(&opts.resolve()?, &root),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
