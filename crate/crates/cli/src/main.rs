use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsn_cli::config::Precision;
use dsn_cli::table::ResultsTable;
use dsn_cli::{exit_code, gradcheck, recon, runner, ExperimentConfig};
use dsn_core::data::{dump_dataset, generate};
use dsn_core::Result;

#[derive(Parser)]
#[command(name = "dsn", version, about = "Domain separation network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one config and write its artifacts under <out>/<run-id>/.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Aggregate completed runs into results.txt and results.csv.
    Table {
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Write shared/private reconstruction grids for a trained run.
    DumpRecon {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Checkpoint to load; defaults to the run's own.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Rows per grid.
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Zero the private encoders before decoding.
        #[arg(long)]
        zero_private: bool,
        /// Directory for the PPM files; defaults to the run directory.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Finite-difference check of every loss and the end-to-end models.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        quiet: bool,
        #[arg(long, hide = true)]
        corrupt_si_mse: bool,
    },
    /// Write the generated datasets of a config as image files.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
    },
}

fn load(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run { config, out, seed_override, quiet } => {
            let cfg = load(&config, out, seed_override)?;
            let s = runner::run(&cfg, quiet)?;
            let r = &s.result;
            let angle = r.angle_error.map(|a| format!(", angle error {a:.2} deg")).unwrap_or_default();
            let note = if s.skipped { " (already complete)" } else { "" };
            println!(
                "{} {} {} seed {}: target accuracy {}{angle}{note}",
                s.run_id, r.scenario, r.label, r.seed, r.target_accuracy
            );
        }
        Command::Table { out, quiet } => {
            let table = ResultsTable::collect(&out)?;
            if table.runs.is_empty() {
                return Err(dsn_core::Error::InvalidArgument(format!("no completed runs under {}", out.display())));
            }
            let text = table.render_text();
            std::fs::write(out.join("results.txt"), &text)?;
            std::fs::write(out.join("results.csv"), table.render_csv())?;
            if !quiet {
                print!("{text}");
            }
        }
        Command::DumpRecon { config, out, seed_override, checkpoint, count, zero_private, dest } => {
            let cfg = load(&config, out, seed_override)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.run_dir().join(runner::CHECKPOINT_FILE));
            let dest = dest.unwrap_or_else(|| cfg.run_dir());
            let spec = cfg.scenario_spec();
            let written = match cfg.precision {
                Precision::F64 => {
                    let mut m = runner::load_model::<f64>(&cfg, &ckpt)?;
                    if zero_private {
                        recon::zero_private(&mut m);
                    }
                    recon::dump(&m, &spec, count, &dest)?
                }
                Precision::F32 => {
                    let mut m = runner::load_model::<f32>(&cfg, &ckpt)?;
                    if zero_private {
                        recon::zero_private(&mut m);
                    }
                    recon::dump(&m, &spec, count, &dest)?
                }
            };
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Gradcheck { seed, quiet, corrupt_si_mse } => {
            let report = gradcheck(seed, corrupt_si_mse)?;
            if !quiet || !report.passes() {
                print!("{}", report.render());
            }
            if !report.passes() {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(3));
            }
        }
        Command::GenData { config, out, seed_override } => {
            let cfg = load(&config, None, seed_override)?;
            dump_dataset(&generate(&cfg.scenario_spec())?, &out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
