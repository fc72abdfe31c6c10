use std::path::PathBuf;
use std::process::ExitCode;

use bdsde_lab::runner::{list_bank, run_and_write, validate, ExperimentConfig, EXIT_CONFIG};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bdsde", version, about = "BDSDE / SPDE stationary-solution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline named in the config.
    Run(RunArgs),
    /// Print the built-in problems.
    ListBank,
    /// Check the config and the problem conditions without solving.
    Validate(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    base: ConfigArgs,
    /// Overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Downgrade condition failures to warnings.
    #[arg(long)]
    force: bool,
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::from_file(&args.config).map_err(|e| e.to_string())?;
    if let Some(s) = args.seed {
        cfg.mc.seed = s;
    }
    Ok(cfg)
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c.clamp(0, 255) as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ListBank => {
            for line in list_bank() {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate(args) => {
            let cfg = match load(&args) {
                Ok(c) => c,
                Err(e) => {
                    log::error!("{e}");
                    return code(EXIT_CONFIG);
                }
            };
            let (c, report) = validate(&cfg);
            match serde_json::to_string_pretty(&report.conditions) {
                Ok(s) => println!("{s}"),
                Err(e) => log::error!("{e}"),
            }
            if let Some(e) = &report.error {
                log::error!("{e}");
            }
            code(c)
        }
        Command::Run(args) => {
            let cfg = match load(&args.base) {
                Ok(c) => c,
                Err(e) => {
                    log::error!("{e}");
                    return code(EXIT_CONFIG);
                }
            };
            let outcome = run_and_write(&cfg, args.force, args.out.as_deref());
            let passed = outcome.report.assertions.iter().filter(|a| a.passed).count();
            log::info!(
                "{} assertions passed of {}; exit {}",
                passed,
                outcome.report.assertions.len(),
                outcome.exit_code
            );
            code(outcome.exit_code)
        }
    }
}
