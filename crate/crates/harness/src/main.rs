use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bayesnav::experiments::{self, SummaryRow};
use bayesnav::models::{self, control_holdout, generate_datasets};
use bayesnav::{io, ExperimentConfig, HarnessError, Result};
use bayesnav_core::env::{split, PERCEPTION_TRAIN_FRACTION};
use bayesnav_core::perception::train_cmvae;
use bayesnav_core::seed;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bayesnav", version, about = "Uncertainty-aware gate-racing experiments")]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the perception, control and scene datasets.
    GenData,
    /// Train the variational encoder only.
    TrainPerception,
    /// Train (or load) every model and store them.
    TrainControl,
    /// Closed-loop benchmark: results.csv, summary.csv, manifest.json.
    Benchmark,
    /// Per-scene-class uncertainty report.
    Scenes,
    /// Risk-guarded flight starting away from the track.
    GuardedRun,
    /// Print the summary of a previous benchmark.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.training_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let out: &Path = &cfg.output_dir;
    match cli.command {
        Command::GenData => {
            let data = generate_datasets(cfg)?;
            let scenes = experiments::scene_subsets(cfg)?;
            io::write_json(&out.join("perception_dataset.json"), &data.perception)?;
            io::write_json(&out.join("control_dataset.json"), &data.control)?;
            io::write_json(&out.join("scene_subsets.json"), &scenes)?;
            println!("wrote datasets to {}", out.display());
        }
        Command::TrainPerception => {
            let data = generate_datasets(cfg)?;
            let (train, eval) = split(&data.perception, PERCEPTION_TRAIN_FRACTION);
            let (model, report) = train_cmvae(&train, &eval, &cfg.perception, seed::derive(cfg.training_seed, &[0x6d76]))?;
            io::write_json(&out.join("perception.json"), &model)?;
            io::write_json(&out.join("perception_report.json"), &report)?;
            println!("pose rmse (eval): {:.4}", model.pose_rmse(&eval)?);
        }
        Command::TrainControl => {
            let m = models::load_or_train(cfg, None)?;
            io::write_json(&out.join("models.json"), &m)?;
            println!("models stored in {}", out.join("models.json").display());
        }
        Command::Benchmark => {
            let data = generate_datasets(cfg)?;
            let m = models::load_or_train(cfg, Some(&data))?;
            let table = experiments::run_benchmark(cfg, &m, &control_holdout(&data))?;
            table.write(out)?;
            print_summary(&table.summary);
        }
        Command::Scenes => {
            let m = models::load_or_train(cfg, None)?;
            let report = experiments::run_scene_report(cfg, &m)?;
            report.write(out)?;
            println!("scene report written to {}", out.display());
        }
        Command::GuardedRun => {
            let m = models::load_or_train(cfg, None)?;
            let monitors = match &cfg.guarded.monitors {
                Some(mc) => mc.clone(),
                None => {
                    let scenes: Vec<_> = experiments::scene_subsets(cfg)?.into_iter().flatten().collect();
                    let m0 = bayesnav::ModelVariant::matrix(cfg.ensemble_size, cfg.latent_samples)?[0];
                    experiments::calibrate_monitors(&experiments::scene_stats(cfg, &m, &m0, &scenes)?)?
                }
            };
            let log = experiments::run_guarded_episode(cfg, &m, &monitors, true)?;
            io::write_csv(&out.join("guarded_log.csv"), &log)?;
            io::write_json(&out.join("guarded_monitors.json"), &monitors)?;
            println!("{} steps logged", log.len());
        }
        Command::Report => {
            let path = out.join("summary.csv");
            let mut r = csv::Reader::from_path(&path).map_err(|e| HarnessError::io(&path, e))?;
            let rows = r
                .deserialize::<SummaryRow>()
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| HarnessError::Format(e.to_string()))?;
            print_summary(&rows);
        }
    }
    Ok(())
}

fn print_summary(rows: &[SummaryRow]) {
    println!("{:<8} {:<8} {:>8} {:>12} {:>10}", "pilot", "noise", "episodes", "mean gates", "ece");
    for r in rows {
        let ece = r.ece.map_or("-".to_string(), |e| format!("{e:.5}"));
        println!(
            "{:<8} {:<8} {:>8} {:>12.2} {:>10}",
            r.variant, r.noise_level, r.episodes, r.mean_gates_passed, ece
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(p) = &cli.config {
        if !p.is_file() {
            eprintln!("error: config file '{}' not found\n\nFor more information, try '--help'.", p.display());
            return ExitCode::from(2);
        }
    }
    let result = load_config(&cli).and_then(|cfg| run(&cli, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::FAILURE
        }
    }
}
