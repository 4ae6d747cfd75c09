use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use maglink::harness::{execute, execute_calibration, load_config, ModeSelect, ScenarioKind, TrialConfig};

#[derive(Parser)]
#[command(name = "maglink", version, about = "Magnetically coupled rehabilitation drive: trials, estimation, tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (flat `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Estimator modes: full, partial or both.
    #[arg(long, global = true)]
    mode: Option<ModeSelect>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Locked driver, increasing lateral pull on the follower.
    StaticTrial,
    /// 0.60 m strokes over a speed × weight grid.
    DynamicTrial,
    /// Four-minute back-and-forth run with FULL/PARTIAL estimation.
    HumanTrial,
    /// Resistance pulse with offset recovery on and off.
    RecoveryDemo,
    /// Offline grid search of the EKF noise settings.
    Tune,
    /// Fit coupling_Kd to the target detach weight and write a config.
    Calibrate,
}

fn run(cli: Cli) -> maglink::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => TrialConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output = o;
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    let summary = match cli.command {
        Command::Calibrate => execute_calibration(&cfg)?,
        cmd => {
            cfg.scenario = match cmd {
                Command::StaticTrial => ScenarioKind::Static,
                Command::DynamicTrial => ScenarioKind::Dynamic,
                Command::HumanTrial => ScenarioKind::Human,
                Command::RecoveryDemo => ScenarioKind::Recovery,
                _ => ScenarioKind::Tune,
            };
            execute(&cfg)?
        }
    };
    print!("{}", summary.to_text());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
