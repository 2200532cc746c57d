use std::path::PathBuf;
use std::process::ExitCode;

use bss_twin::experiments::{
    cmd_build_dataset, cmd_eval_forecast, cmd_fleet_sweep, cmd_simulate, ExperimentConfig,
    ExperimentError,
};
use clap::{Args, Parser, Subcommand};

const CONFIG_HELP: &str = "\
CONFIG FILE (TOML; relative paths resolve against the config file's directory)

  output_dir = \"out\"          seed = 0
  [synthetic]   seed = 2018, n_stations = 20, first_year = 2015, years = 4,
                demand_scale = 1.0, area_km = 6.0
  [data]        layout, travel_time, travel_distance, trips, weather, calendar
                (set exactly one of [synthetic] or [data])
  [split]       <year> = \"train\" | \"validation\" | \"test\" | \"unused\"
                default: last year test, the one before validation, rest train
  [[models]]    name, and one of: family = \"historical_shifted\" | \"reference_day\" |
                \"cart\" | \"random_forest\" | \"gradient_boosting\"; forecast_csv = path;
                perfect = true. Optional: approach = \"global\" | \"local\" (global),
                grid = {...}, params = {...}, reference_fallback (false),
                noise_sd (0.0), reference (false; default CM is the first reference_day)
  [fleet]       capacity = 14, morning_vehicles = 2, afternoon_vehicles = 1,
                saturday_vehicles = 1, morning = {start=\"07:00\", end=\"15:00\"},
                afternoon = {start=\"11:30\", end=\"19:30\"},
                saturday = {start=\"07:00\", end=\"13:00\"}
  [policy]      lookahead_slots = 4, deadband_bikes = 2, per_bike_service_s = 30
  [simulate]    role = \"test\", max_days (all), relocation_days_only = true,
                perfect_information = true, baseline = true, audit = false,
                per_slot = false
  [sweep]       max_fleet = 4, models = [] (all)

EXIT CODES
  0 success, 2 validation failure, 1 runtime error";

#[derive(Parser)]
#[command(
    name = "bss-twin",
    version,
    about = "Bike-sharing digital twin: forecasting and relocation experiments",
    after_help = CONFIG_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the half-hour net-demand dataset and print its summary.
    BuildDataset(Common),
    /// Fit and score every model on the validation and test years.
    EvalForecast(Common),
    /// Run the daily simulation campaign for every model.
    Simulate(Common),
    /// Simulate every morning/afternoon fleet combination.
    FleetSweep(Common),
}

#[derive(Args)]
#[command(after_help = CONFIG_HELP)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(cli: Cli) -> Result<String, ExperimentError> {
    let (Command::BuildDataset(common)
    | Command::EvalForecast(common)
    | Command::Simulate(common)
    | Command::FleetSweep(common)) = &cli.command;
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(ExperimentError::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
    }
    Ok(match cli.command {
        Command::BuildDataset(_) => cmd_build_dataset(&cfg)?.to_text(),
        Command::EvalForecast(_) => {
            cmd_eval_forecast(&cfg)?;
            std::fs::read_to_string(cfg.output_dir.join("eval.txt")).unwrap_or_default()
        }
        Command::Simulate(_) => {
            cmd_simulate(&cfg)?;
            std::fs::read_to_string(cfg.output_dir.join("simulate").join("report.txt"))
                .unwrap_or_default()
        }
        Command::FleetSweep(_) => cmd_fleet_sweep(&cfg)?
            .iter()
            .map(|m| m.to_text())
            .collect::<Vec<_>>()
            .join("\n"),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
