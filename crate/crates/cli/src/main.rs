use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrinn_cli::commands;
use mrinn_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "mrinn", version, about = "Imbalance settlement pricing and market-rule-informed quantile forecasting")]
struct Cli {
    /// Root under which experiment commands create their output directory.
    #[arg(long, global = true, env = "MRINN_OUTPUT_ROOT", default_value = "results")]
    output_root: PathBuf,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.max_epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[String]) -> anyhow::Result<ExperimentConfig> {
        let mut sets = self.sets.clone();
        sets.extend_from_slice(extra);
        Ok(ExperimentConfig::from_sources(self.config.as_deref(), &sets)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Price every row of a market-data CSV.
    Price {
        /// Market-data CSV.
        #[arg(long)]
        input: PathBuf,
        /// Constant overrides, one `cN = value` per line.
        #[arg(long)]
        constants: Option<PathBuf>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Drop invalid rows and forward-fill gaps instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Generate a synthetic market-data CSV.
    Synth {
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train one model family on every selected fold and seed.
    Train(ConfigArgs),
    /// Rescore the models of an earlier output directory.
    Evaluate(ConfigArgs),
    /// Run the naive, linear and MLP baselines.
    Baseline(ConfigArgs),
    /// Train each component-removal variant and rank them.
    Ablate(ConfigArgs),
    /// Train one model per (look-back, horizon) cell.
    Sweep(ConfigArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let root = cli.output_root;
    let done = |path: PathBuf| log::info!("wrote {}", path.display());
    match cli.command {
        Command::Price {
            input,
            constants,
            output,
            lenient,
        } => commands::price(&input, constants.as_deref(), output.as_deref(), lenient)?,
        Command::Synth {
            days,
            seed,
            output,
            config,
        } => {
            let mut extra = Vec::new();
            if let Some(d) = days {
                extra.push(format!("synth.days={d}"));
            }
            if let Some(s) = seed {
                extra.push(format!("synth.seed={s}"));
            }
            commands::synth(&config.resolve(&extra)?, output.as_deref())?
        }
        Command::Train(c) => done(commands::train(&root, c.resolve(&[])?)?),
        Command::Evaluate(c) => done(commands::evaluate(&root, c.resolve(&[])?)?),
        Command::Baseline(c) => done(commands::baseline(&root, c.resolve(&[])?)?),
        Command::Ablate(c) => done(commands::ablate(&root, c.resolve(&[])?)?),
        Command::Sweep(c) => done(commands::sweep(&root, c.resolve(&[])?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { mrinn_cli::EXIT_INPUT as u8 } else { 0 });
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(mrinn_cli::EXIT_INPUT as u8);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(mrinn_cli::exit_code(&e) as u8)
        }
    }
}
