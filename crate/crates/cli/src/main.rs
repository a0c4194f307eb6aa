//! `pairlab`: simulate and analyse photon-pair experiments from the shell.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pairlab::commands::{self, CommandError, CommandOutput, DEFAULT_SEED};
use pairlab::model::FransonConfig;

#[derive(Parser)]
#[command(name = "pairlab", version, about = "Photon-pair source simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (`section.key = value` lines); defaults when omitted.
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Event stream, coincidence histogram and CAR.
    SimulatePairs {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "events.csv")]
        out: PathBuf,
        #[arg(long, default_value = "histogram.csv")]
        hist: PathBuf,
    },
    /// HOM delay scan, optionally fitted.
    Hom {
        #[command(flatten)]
        common: Common,
        /// Delays in ps as start:stop:step.
        #[arg(long, default_value = "-2:2:0.1", allow_hyphen_values = true)]
        delays: String,
        /// Pairs detected on both channels per delay.
        #[arg(long, default_value_t = 100_000)]
        pairs: u64,
        #[arg(long, default_value = "hom_scan.csv")]
        out: PathBuf,
        #[arg(long)]
        fit: bool,
        /// Intrinsic two-photon visibility.
        #[arg(long, default_value_t = 1.0)]
        visibility: f64,
        /// Coincidence window in ps.
        #[arg(long, default_value_t = 500.0)]
        window: f64,
    },
    /// Franson phase scan, optionally fitted with the Bell parameter.
    Franson {
        #[command(flatten)]
        common: Common,
        /// A phase count over one fringe period, or start:stop:step in rad.
        #[arg(long, default_value = "12", allow_hyphen_values = true)]
        phases: String,
        /// Emitted pairs per phase.
        #[arg(long, default_value_t = 5_000_000)]
        pairs: u64,
        #[arg(long, default_value = "franson.csv")]
        out: PathBuf,
        #[arg(long)]
        fit: bool,
        /// Intrinsic two-photon visibility.
        #[arg(long, default_value_t = 1.0)]
        visibility: f64,
        /// Peak window width in ps.
        #[arg(long, default_value_t = 800.0)]
        window: f64,
        /// Interferometer path imbalance in ps.
        #[arg(long, default_value_t = 2500.0)]
        path_imbalance: f64,
        /// Pump coherence time in ps.
        #[arg(long, default_value_t = 1e6)]
        pump_coherence: f64,
    },
    /// Summary table from the manifests in a run directory.
    Report {
        #[arg(default_value = ".")]
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<CommandOutput, CommandError> {
    match cli.command {
        Command::SimulatePairs { common, out, hist } => {
            let config = commands::load_config(common.config.as_deref())?;
            commands::simulate_pairs(
                &config,
                &commands::PairsOptions {
                    seed: common.seed,
                    events_out: out,
                    histogram_out: hist,
                },
            )
        }
        Command::Hom {
            common,
            delays,
            pairs,
            out,
            fit,
            visibility,
            window,
        } => {
            let config = commands::load_config(common.config.as_deref())?;
            let opts = commands::HomOptions {
                delays: commands::parse_range(&delays)?,
                pairs,
                seed: common.seed,
                out,
                fit,
                visibility,
                window,
            };
            commands::hom(&config, &opts)
        }
        Command::Franson {
            common,
            phases,
            pairs,
            out,
            fit,
            visibility,
            window,
            path_imbalance,
            pump_coherence,
        } => {
            let config = commands::load_config(common.config.as_deref())?;
            let opts = commands::FransonOptions {
                franson: FransonConfig {
                    path_imbalance,
                    intrinsic_visibility: visibility,
                    pump_coherence,
                    ..FransonConfig::default()
                },
                phases: commands::parse_phases(&phases)?,
                pairs,
                seed: common.seed,
                out,
                fit,
                window,
            };
            commands::franson(&config, &opts)
        }
        Command::Report { dir } => commands::report(&dir),
    }
}

fn emit(out: &CommandOutput) {
    for l in &out.warnings {
        eprintln!("{l}");
    }
    for l in &out.lines {
        println!("{l}");
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            emit(&out);
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let CommandError::Fit { output, .. } = &e {
                emit(output);
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
