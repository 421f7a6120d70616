use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;
use twitsent::pipeline::{Pipeline, PipelineConfig, Stage, StageOutcome};
use twitsent::synth::{self, Signal, SynthParams};
use twitsent::Result;

/// Predict daily stock movements from message sentiment.
#[derive(Parser)]
#[command(name = "twitsent", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "twitsent.toml")]
    config: PathBuf,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Re-run stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean messages under both profiles and write the dedup audit.
    Clean,
    /// Score cleaned messages with the configured provider.
    Score,
    /// Aggregate daily features and build the stacked designs.
    Featurize,
    /// Fit both regressor sets on the full sample.
    Fit,
    /// Run the split plans and McNemar comparisons.
    Evaluate,
    /// Write the results tables and exploratory data files.
    Report,
    /// Run every stage in order.
    Run,
    /// Write a synthetic corpus and a config for it.
    Synth {
        /// Directory for the corpus, config and (later) outputs.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        messages_per_day: usize,
        /// Labels independent of the features.
        #[arg(long)]
        null: bool,
    },
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Clean => Stage::Clean,
        Command::Score => Stage::Score,
        Command::Featurize => Stage::Featurize,
        Command::Fit => Stage::Fit,
        Command::Evaluate => Stage::Evaluate,
        Command::Report => Stage::Report,
        Command::Run | Command::Synth { .. } => return None,
    })
}

fn print_outcome(o: &StageOutcome) {
    let state = if o.skipped { "up to date" } else { "done" };
    println!("{:<10} {state}", o.stage.as_str());
    if let Some(l) = &o.ledger {
        println!("  requests: {}  estimated cost: ${:.2}", l.requests, l.total_usd());
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Command::Synth {
        out,
        messages_per_day,
        null,
    } = &cli.command
    {
        let mut params = SynthParams::new(cli.seed.unwrap_or(7));
        params.messages_per_day = *messages_per_day;
        if *null {
            params.signal = Signal::Null;
        }
        let corpus = synth::generate(&params);
        let cfg = synth::write_fixture(out, &params, &corpus)?;
        println!("wrote {} messages; config at {}", corpus.messages.len(), cfg.display());
        return Ok(());
    }

    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let pipeline = Pipeline::new(config).with_force(cli.force);
    match stage_of(&cli.command) {
        Some(stage) => print_outcome(&pipeline.run_stage(stage)?),
        None => {
            for o in pipeline.run()? {
                print_outcome(&o);
            }
            let table = pipeline.out("report/results.txt");
            if let Ok(text) = std::fs::read_to_string(&table) {
                print!("\n{text}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
