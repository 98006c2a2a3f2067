use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uegroup::experiment::{self, ExperimentConfig, Profile};
use uegroup::scene::Scenario;

#[derive(Parser)]
#[command(
    name = "uegroup",
    version,
    about = "Synthetic SRS positioning and UE grouping testbed"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate trajectories for all mobility patterns
    Simulate(Common),
    /// Build CTFs and SRS snapshots
    Preprocess(Common),
    /// Train the positioning network on the training split
    Train(Common),
    /// Predict positions and headings, raw and smoothed
    Predict(Common),
    /// Group users with DBSCAN and Ward clustering
    Cluster(Common),
    /// Compute RMSE / R² tables and error CDFs
    Evaluate(Common),
    /// Run every stage end to end
    Run(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Los,
    Nlos,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config. Defaults to <out>/config.json when present,
    /// otherwise the built-in profile.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    profile: ProfileArg,
    #[arg(long, value_enum, default_value = "los")]
    scenario: ScenarioArg,
}

impl Common {
    fn resolve(&self) -> uegroup::Result<ExperimentConfig> {
        let saved = self.out.join(experiment::CONFIG_JSON);
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None if saved.exists() => ExperimentConfig::from_json_file(&saved)?,
            None => {
                let scenario = match self.scenario {
                    ScenarioArg::Los => Scenario::Los,
                    ScenarioArg::Nlos => Scenario::Nlos,
                };
                let profile = match self.profile {
                    ProfileArg::Desk => Profile::Desk,
                    ProfileArg::Full => Profile::Full,
                };
                ExperimentConfig::for_profile(scenario, profile)
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(command: &Command) -> uegroup::Result<()> {
    let (Command::Simulate(c)
    | Command::Preprocess(c)
    | Command::Train(c)
    | Command::Predict(c)
    | Command::Cluster(c)
    | Command::Evaluate(c)
    | Command::Run(c)) = command;
    let cfg = c.resolve()?;
    let out: &Path = &c.out;
    match command {
        Command::Simulate(_) => {
            let users = experiment::stage_simulate(&cfg, out)?;
            eprintln!("simulated {} virtual users", users.len());
        }
        Command::Preprocess(_) => {
            experiment::write_config(&cfg, out)?;
            let users = experiment::simulate(&cfg)?;
            let samples = experiment::stage_preprocess(&cfg, &users, out)?;
            eprintln!("wrote {} snapshots", samples.len());
        }
        Command::Train(_) => {
            let samples = experiment::load_snapshots(out)?;
            let trained = experiment::stage_train(&cfg, &samples, out)?;
            if let Some(last) = trained.loss_curve.last() {
                eprintln!("epoch {} loss {:.6}", last.epoch, last.loss);
            }
        }
        Command::Predict(_) => {
            let samples = experiment::load_snapshots(out)?;
            let (model, scaler) = experiment::load_model(out)?;
            let rows = experiment::stage_predict(&cfg, &model, &scaler, &samples, out)?;
            eprintln!("wrote {} prediction rows", rows.len());
        }
        Command::Cluster(_) => {
            let rows = experiment::load_predictions(out)?;
            for f in experiment::stage_cluster(&cfg, &rows, out)? {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::Evaluate(_) => {
            let rows = experiment::load_predictions(out)?;
            let (metrics, _) = experiment::stage_evaluate(&cfg, &rows, out)?;
            print_pooled(&metrics);
        }
        Command::Run(_) => {
            let summary = experiment::run_experiment(&cfg, out)?;
            print_pooled(&summary.metrics);
            eprintln!("manifest: {}", out.join(experiment::MANIFEST_JSON).display());
        }
    }
    Ok(())
}

fn print_pooled(report: &uegroup::evaluation::MetricsReport) {
    if let Some(m) = report.pooled() {
        println!(
            "n={} rmse_x={:.3} rmse_y={:.3} rmse_dist={:.3} rmse_heading={:.2}",
            m.n, m.rmse_x, m.rmse_y, m.rmse_dist, m.rmse_heading
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
