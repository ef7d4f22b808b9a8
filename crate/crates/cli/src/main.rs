use std::path::PathBuf;
use std::process::ExitCode;

use cgrpo::config::RunConfig;
use cgrpo::run::{self, pretty, OutputPaths};
use cgrpo::CliError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cgrpo", version, about = "Curriculum GRPO on a synthetic QA world")]
struct Cli {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Metrics log path (default: OUT_DIR/metrics.jsonl).
    #[arg(long, global = true)]
    metrics: Option<PathBuf>,
    /// Checkpoint path (default: OUT_DIR/checkpoint.bin).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warm up, train with the configured strategy and write all outputs.
    Train,
    /// Evaluate a checkpoint on held-out pairs.
    Eval {
        /// JSONL pairs to evaluate instead of the configured test split.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run all strategies with and without refinement over the configured seeds.
    Compare,
    /// Audit open-ended pairs and write the refined set.
    Refine {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Recompute rewards for a JSONL fixture and compare them to the stored values.
    RewardCheck { fixture: PathBuf },
    /// Write the generated train and test splits as JSONL.
    GenData,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let cfg = load_config(cli)?;
    Ok(match &cli.command {
        Command::Train => {
            let paths = OutputPaths::new(&cfg.out_dir, cli.metrics.as_deref(), cli.checkpoint.as_deref());
            pretty(&run::cmd_train(&cfg, &paths)?)
        }
        Command::Eval { data } => {
            let paths = OutputPaths::new(&cfg.out_dir, cli.metrics.as_deref(), cli.checkpoint.as_deref());
            pretty(&run::cmd_eval(&cfg, &paths.checkpoint, data.as_deref())?)
        }
        Command::Compare => {
            let report = run::cmd_compare(&cfg)?;
            cgrpo::data::write_atomic(&cfg.out_dir.join("compare.md"), report.table.as_bytes())?;
            cgrpo::data::write_atomic(&cfg.out_dir.join("compare.json"), pretty(&report).as_bytes())?;
            report.table
        }
        Command::Refine { input, output, report } => {
            pretty(&run::cmd_refine(&cfg, input, output, report.as_deref())?)
        }
        Command::RewardCheck { fixture } => pretty(&run::cmd_reward_check(&cfg, fixture)?),
        Command::GenData => pretty(&run::cmd_gen_data(&cfg, &cfg.out_dir)?),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cgrpo: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
