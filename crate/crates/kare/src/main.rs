use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kare::config::Config;
use kare::pipeline::{Pipeline, Stage};
use kare::synth_world::{generate_world, write_world};

#[derive(Parser)]
#[command(name = "kare", version, about = "Knowledge-graph retrieval and training-data pipeline for clinical prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the configured global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Re-run stages even when their recorded outputs are current.
    #[arg(long)]
    force: bool,
    /// Overrides one configuration value, e.g. `--set retrieval.n=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build per-concept knowledge graphs from the external graph, corpus and LLM.
    BuildKg(Common),
    /// Cluster entities and relations and write the refined graph.
    Cluster(Common),
    /// Detect communities, summarise them and write the index.
    Index(Common),
    /// Build augmented contexts for every patient-task pair.
    Augment(Common),
    /// Generate and select reasoning chains.
    GenTrain(Common),
    /// Write the multitask fine-tune dataset.
    Emit(Common),
    /// Score a prediction file against cohort labels.
    Evaluate(Common),
    /// Run every stage in order.
    Run(Common),
    /// Write a seeded synthetic cohort and its companion inputs.
    Synth(Common),
    /// Print the default configuration.
    DefaultConfig,
}

fn load(common: &Common) -> Result<Config> {
    let mut cfg = Config::load_with_overrides(&common.config, &common.overrides)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_stages(common: &Common, stages: &[Stage]) -> Result<()> {
    let pipeline = Pipeline::new(load(common)?)?;
    let report = pipeline.run(stages, common.force)?;
    for s in &report.executed {
        println!("ran      {s}");
    }
    for s in &report.skipped {
        println!("skipped  {s} (up to date)");
    }
    let g = &report.gateway;
    println!(
        "llm calls {} ({} cached), embed calls {} ({} cached), retries {}",
        g.chat_calls, g.chat_cache_hits, g.embed_calls, g.embed_cache_hits, g.retries
    );
    println!("manifest {} sha256 {}", pipeline.manifest_path().display(), report.manifest_hash);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::BuildKg(c) => run_stages(c, &[Stage::BuildKg]),
        Command::Cluster(c) => run_stages(c, &[Stage::Cluster]),
        Command::Index(c) => run_stages(c, &[Stage::Index]),
        Command::Augment(c) => run_stages(c, &[Stage::Augment]),
        Command::GenTrain(c) => run_stages(c, &[Stage::GenTrain]),
        Command::Emit(c) => run_stages(c, &[Stage::Emit]),
        Command::Evaluate(c) => run_stages(c, &[Stage::Evaluate]),
        Command::Run(c) => run_stages(c, &Stage::ALL),
        Command::Synth(c) => {
            let cfg = load(c)?;
            let world = generate_world(&cfg)?;
            for p in write_world(&cfg, &world)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::DefaultConfig => {
            print!("{}", Config::default().to_toml());
            Ok(())
        }
    }
}
