//! Thin command-line front end over the `levcf` library harness.

use clap::{Parser, Subcommand};
use levcf::harness::{self, presets, RunOptions};
use levcf::model::reference;
use levcf::Error;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "levcf", version, about = "Delayed all-optical feedback cooling: simulation and analysis harness")]
struct Cli {
    /// Override the scenario's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-thread budget for sweeps and ensembles.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output format for tables (only csv is supported).
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario file (single point or sweep).
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "levcf_out")]
        out: PathBuf,
    },
    /// Execute a scenario file that must contain a sweep section.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value = "levcf_out")]
        out: PathBuf,
    },
    /// Re-derive fits and the summary from a completed run directory.
    Analyze { dir: PathBuf },
    /// Rebuild one of the showcase experiments: fig2 (phase-selected
    /// cooling/heating spectra), fig3 (free-running frequency sweep), fig4
    /// (temperature minimum and noise squashing).
    Reproduce {
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form performance projection from the reference configuration.
    Project {
        /// Phase-noise reduction [dB].
        #[arg(long, default_value_t = 0.0)]
        db: f64,
        /// Particle radius scale factor.
        #[arg(long, default_value_t = 1.0)]
        radius_scale: f64,
        /// Gas pressure [Pa]; defaults to the reference pressure.
        #[arg(long)]
        pressure_pa: Option<f64>,
        /// Write the projection record to DIR/fits/projection.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> levcf::Result<()> {
    if cli.format != "csv" {
        return Err(Error::ConfigError(format!(
            "unsupported --format {:?}; only csv is available",
            cli.format
        )));
    }
    let opts = RunOptions {
        seed: cli.seed,
        workers: cli.workers,
    };
    match cli.command {
        Command::Run { config, out } => {
            let run = harness::run_scenario_file(&config, &out, &opts)?;
            print_points(&run.points);
            println!("wrote {}", run.dir.display());
            Ok(())
        }
        Command::Sweep { config, out } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::ConfigError(format!("cannot read {}: {e}", config.display())))?;
            let scenario = harness::config::Scenario::from_toml_str(&text)?;
            if scenario.sweep.is_none() {
                return Err(Error::ConfigError(
                    "sweep subcommand needs a [sweep] section in the scenario".into(),
                ));
            }
            let run = harness::run_scenario(&scenario, &out, &opts)?;
            print_points(&run.points);
            println!("wrote {}", run.dir.display());
            Ok(())
        }
        Command::Analyze { dir } => {
            let run = harness::analyze(&dir)?;
            print_points(&run.points);
            println!("refreshed {}", run.dir.display());
            Ok(())
        }
        Command::Reproduce { target, out } => {
            let out = out.unwrap_or_else(|| PathBuf::from("levcf_out").join(&target));
            presets::reproduce(&target, &out, &opts)
        }
        Command::Project {
            db,
            radius_scale,
            pressure_pa,
            out,
        } => {
            let pressure = pressure_pa.unwrap_or(reference::PRESSURE);
            let projection = presets::project(db, radius_scale, pressure)?;
            print!("{}", presets::project_report(&projection));
            if let Some(dir) = out {
                let record = serde_json::json!({
                    "kind": "projection",
                    "phase_noise_reduction_db": db,
                    "radius_scale": radius_scale,
                    "pressure_pa": pressure,
                    "t_min_k": projection.t_min,
                    "phonons": projection.phonons,
                    "assumptions": projection.assumptions,
                });
                harness::write_fit_report(&dir, "projection", &record, &presets::project_report(&projection))?;
                println!("wrote {}", dir.join("fits/projection.json").display());
            }
            Ok(())
        }
    }
}

fn print_points(points: &[harness::PointResult]) {
    for p in points {
        println!(
            "axis={:.6e}  T_area={:.4e} K (+-{:.1e})  T_fit={:.4e} K  gamma_fit/2pi={:.2} Hz  n={:.1}  [{}]",
            p.axis_value,
            p.t_area,
            p.t_area_err,
            p.t_fit,
            p.gamma_fit / (2.0 * std::f64::consts::PI),
            p.phonons,
            p.status
        );
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
