use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oapsense::assign::Metric;
use oapsense::experiment::{
    emit_outputs, run_calibration, run_simulation, run_sweep, write_simulation, CountMode,
    ExperimentConfig,
};
use oapsense::sensor::export_dataset;
use oapsense::Error;

#[derive(Parser)]
#[command(
    name = "oapsense",
    version,
    about = "Optical access point monitoring simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one scene and write its frame, overlay and anomaly table.
    Simulate(Common),
    /// Monte Carlo sweep of localization error over array sizes.
    Sweep(Common),
    /// Fit a centroid calibration and score it on held-out frames.
    Calibrate(Common),
    /// Export frames and ground truth in bulk.
    Dataset(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Trials per array size (sweep), training frames (calibrate) or frames (dataset).
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    array_sizes: Option<Vec<usize>>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    emit_frames: bool,
    /// Tell the detector how many transmitters each frame holds.
    #[arg(long, conflicts_with = "estimate_count")]
    known_count: bool,
    /// Let the detector estimate the transmitter count.
    #[arg(long)]
    estimate_count: bool,
    #[arg(long, value_name = "euclidean|mahalanobis")]
    metric: Option<Metric>,
}

impl Common {
    fn load(&self) -> oapsense::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(sizes) = &self.array_sizes {
            cfg.array_sizes = sizes.clone();
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if self.emit_frames {
            cfg.emit_frames = true;
        }
        if self.known_count {
            cfg.detector.count_mode = CountMode::Known;
        }
        if self.estimate_count {
            cfg.detector.count_mode = CountMode::Estimate;
        }
        if let Some(m) = self.metric {
            cfg.metric = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Config(Error),
    Runtime(Error),
    Threshold(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Parse { .. } => Failure::Config(e),
            other => Failure::Runtime(other),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = args.load()?;
            let sim = run_simulation(&cfg)?;
            for p in write_simulation(&sim, &cfg.out_dir, "")? {
                println!("wrote {}", p.display());
            }
            let flagged = sim.anomalies.flagged().count();
            println!(
                "transmitters {} detected {} flagged {}",
                sim.scene.transmitters.len(),
                sim.localization.estimates.len(),
                flagged
            );
        }
        Command::Sweep(args) => {
            let cfg = args.load()?;
            let report = run_sweep(&cfg)?;
            for p in emit_outputs(&report, &cfg, &cfg.out_dir)? {
                println!("wrote {}", p.display());
            }
            for a in &report.arrays {
                let mse = a.mse.map_or("n/a".to_string(), |m| format!("{m:.3}"));
                println!(
                    "{:>3}x{:<3} mse {mse} m2  miss {:.3}",
                    a.array_n, a.array_n, a.miss_rate
                );
            }
            if report.failure_rate() > cfg.max_failure_rate {
                return Err(Failure::Threshold(format!(
                    "{} of {} trials failed",
                    report.failures(),
                    report.trials.len()
                )));
            }
        }
        Command::Calibrate(args) => {
            let cfg = args.load()?;
            let frames = args.trials.unwrap_or(cfg.calibration_frames);
            let report = run_calibration(&cfg, frames)?;
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io {
                path: cfg.out_dir.clone(),
                source: e,
            })?;
            let path = cfg.out_dir.join("calibration.csv");
            report.model.save(&path)?;
            println!("wrote {}", path.display());
            println!(
                "pairs {}  held-out mse {:.4} -> {:.4} m2",
                report.training_pairs, report.uncalibrated_mse, report.calibrated_mse
            );
        }
        Command::Dataset(args) => {
            let cfg = args.load()?;
            let handle =
                export_dataset(cfg.trials, &cfg.dataset_config()?, cfg.seed, &cfg.out_dir)?;
            println!(
                "wrote {} frames and {}",
                handle.frames.len(),
                handle.ground_truth.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Threshold(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
