//! `vlmadapt`: run the adaptation experiment pipeline stage by stage or end
//! to end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vlmadapt::experiment::{Experiment, ExperimentConfig, RunReport, Stage, StageOutcome};

#[derive(Parser)]
#[command(name = "vlmadapt", version, about = "Retrieval-driven adaptation of a toy dual encoder")]
struct Cli {
    /// Experiment config (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rerun stages even when their stamps are current.
    #[arg(long, global = true)]
    force: bool,
    /// Log at debug level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world's corpora, keyword specs, prompts and datasets.
    Synth,
    /// Train the base dual encoder on the pretraining corpus.
    Pretrain,
    /// Keyword retrieval (domain and task) per task.
    Retrieve,
    /// Rank retrieved pairs by base-model alignment.
    Rank,
    /// Continued pretraining sweeps (DAPT and TAPT) with zero-shot evaluation.
    Adapt,
    /// Zero-shot evaluation of the base model.
    Zeroshot,
    /// CoOp prompt learning on the base and TAPT models.
    Coop,
    /// Collect results into fig2.csv, fig3.csv and manifest.json.
    Report,
    /// Run every stage in order, or up to and including `--stage`.
    Run {
        #[arg(long)]
        stage: Option<String>,
    },
    /// Print the default config as JSON.
    DefaultConfig,
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Synth => Stage::Synth,
        Command::Pretrain => Stage::Pretrain,
        Command::Retrieve => Stage::Retrieve,
        Command::Rank => Stage::Rank,
        Command::Adapt => Stage::Adapt,
        Command::Zeroshot => Stage::Zeroshot,
        Command::Coop => Stage::Coop,
        Command::Report => Stage::Report,
        Command::Run { .. } | Command::DefaultConfig => return None,
    })
}

fn print_summary(report: &RunReport) {
    println!("{:<10} {:<24} {:>6} {:>8} {:>8} {:>8}", "task", "method", "shots", "median", "min", "max");
    for a in &report.aggregates {
        println!(
            "{:<10} {:<24} {:>6} {:>8.4} {:>8.4} {:>8.4}{}",
            a.task,
            a.method,
            a.shots,
            a.median,
            a.min,
            a.max,
            if a.truncated { "  (truncated)" } else { "" }
        );
    }
    println!("config hash {}", report.provenance.config_hash);
}

fn run(cli: Cli) -> Result<(), String> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| format!("config: {e}"))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    if let Command::DefaultConfig = cli.command {
        println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
        return Ok(());
    }
    let exp = Experiment::new(config, cli.force).map_err(|e| format!("config: {e}"))?;
    let stages: Vec<Stage> = match (&cli.command, stage_of(&cli.command)) {
        (_, Some(stage)) => vec![stage],
        (Command::Run { stage: Some(last) }, _) => {
            let last: Stage = last.parse().map_err(|e| format!("{e}"))?;
            Stage::ALL.into_iter().take_while(|s| *s <= last).collect()
        }
        _ => Stage::ALL.to_vec(),
    };
    for &stage in &stages {
        let outcome = exp.run_stage(stage).map_err(|e| e.to_string())?;
        let verb = match outcome {
            StageOutcome::Ran => "done",
            StageOutcome::Skipped => "up to date",
        };
        eprintln!("{stage}: {verb}");
    }
    if stages.last() == Some(&Stage::Report) {
        let report = exp.load_report().map_err(|e| format!("report: {e}"))?;
        print_summary(&report);
        eprintln!("wrote {} and {}", exp.layout().fig2().display(), exp.layout().fig3().display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
