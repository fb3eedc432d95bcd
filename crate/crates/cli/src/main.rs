use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fsu_demand::{GridPreset, PriceStrategy};
use fsu_demand_cli::commands::{self, Context};
use fsu_demand_cli::{CliError, Overrides, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "fsu-demand",
    version,
    about = "Demand-system pipeline on household survey data"
)]
struct Cli {
    /// TOML pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Raw survey CSV, overriding `input` in the config.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Seed for fold assignment and permutation draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Significance level of the KS and Cramér decisions.
    #[arg(long, global = true)]
    level: Option<f64>,
    /// Representative FSU price.
    #[arg(long, global = true, value_enum)]
    strategy: Option<StrategyArg>,
    /// Cross-validation folds.
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Built-in theta grid; replaces any explicit grid in the config.
    #[arg(long, global = true, value_enum)]
    grid_preset: Option<GridArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic survey from the [simulate] section.
    Simulate,
    /// Parse the survey and build the original demand dataset.
    Ingest,
    /// Replace prices by one representative per FSU and item.
    Uniformize,
    /// Fit LA-AIDS to each dataset.
    Fit,
    /// Estimate per-state share shifters from the fits.
    StateEffects,
    /// KS and Cramér tests on predicted shares, original vs uniform.
    CompareShares,
    /// Cross-validated grid search over measurement-error models.
    MecorCv,
    /// Lorenz curves and Gini comparison of item expenditure.
    Inequality,
    /// Elasticities of both fits and their differences.
    Elasticities,
    /// Every stage in order.
    Run,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => commands::SIMULATE,
            Command::Ingest => commands::INGEST,
            Command::Uniformize => commands::UNIFORMIZE,
            Command::Fit => commands::FIT,
            Command::StateEffects => commands::STATE_EFFECTS,
            Command::CompareShares => commands::COMPARE_SHARES,
            Command::MecorCv => commands::MECOR_CV,
            Command::Inequality => commands::INEQUALITY,
            Command::Elasticities => commands::ELASTICITIES,
            Command::Run => "run",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    FirstHousehold,
    Median,
    WeightedMedian,
}

impl From<StrategyArg> for PriceStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::FirstHousehold => PriceStrategy::FirstHousehold,
            StrategyArg::Median => PriceStrategy::Median,
            StrategyArg::WeightedMedian => PriceStrategy::WeightedMedian,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    ExpenditureOnly,
    JointTheta,
}

impl From<GridArg> for GridPreset {
    fn from(g: GridArg) -> Self {
        match g {
            GridArg::ExpenditureOnly => GridPreset::ExpenditureOnly,
            GridArg::JointTheta => GridPreset::JointTheta,
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    config.apply(&Overrides {
        input: cli.input.clone(),
        output_dir: cli.output_dir.clone(),
        seed: cli.seed,
        level: cli.level,
        strategy: cli.strategy.map(Into::into),
        folds: cli.folds,
        grid_preset: cli.grid_preset.map(Into::into),
    });
    let ctx = Context::new(config)?;
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&ctx),
        Command::Ingest => commands::cmd_ingest(&ctx),
        Command::Uniformize => commands::cmd_uniformize(&ctx),
        Command::Fit => commands::cmd_fit(&ctx),
        Command::StateEffects => commands::cmd_state_effects(&ctx),
        Command::CompareShares => commands::cmd_compare_shares(&ctx),
        Command::MecorCv => commands::cmd_mecor_cv(&ctx),
        Command::Inequality => commands::cmd_inequality(&ctx),
        Command::Elasticities => commands::cmd_elasticities(&ctx),
        Command::Run => commands::cmd_run(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = e.report(cli.command.name());
            eprintln!(
                "{}",
                serde_json::to_string(&report).expect("error report serializes")
            );
            ExitCode::from(report.exit_code as u8)
        }
    }
}
