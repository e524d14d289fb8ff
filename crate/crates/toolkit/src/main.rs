use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cascade_core::{ModelProfile, ThresholdGrid};
use cascade_opt::commands::{self, parse_grid, parse_thresholds};
use cascade_opt::{runner, Error, Manifest, MemoryPolicy, Result};
use clap::{Parser, Subcommand};

/// Analyze, optimize and run confidence-gated classifier cascades.
#[derive(Parser)]
#[command(name = "cascade-opt", version)]
struct Cli {
    /// Manifest binding model profiles to record files.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Threshold grid: point count, `lattice:<steps>` or comma list.
    #[arg(long, global = true, default_value = "50")]
    grid: String,
    /// Seed for any subsampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Calibration bins and mistake decomposition of a (little, big) pair.
    Analyze {
        #[arg(long)]
        little: String,
        #[arg(long)]
        big: String,
        #[arg(long, default_value_t = cascade_core::hardness::DEFAULT_BINS)]
        bins: usize,
        /// Quantile of correctable-mistake confidence to report.
        #[arg(long, default_value_t = 0.9)]
        quantile: f64,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Tradeoff curve of a 2- or 3-model chain.
    Sweep {
        /// Comma-separated chain, cheapest first.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Cheapest threshold per model pair meeting an accuracy target.
    Optimize {
        /// Allowed accuracy loss vs the big model, as a fraction.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        tolerance: f64,
        /// Also search 3-model chains.
        #[arg(long)]
        kpass: bool,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Run a cascade against model runners.
    Execute {
        #[arg(long)]
        config: PathBuf,
        /// T or T1,T2.
        #[arg(long)]
        threshold: String,
        #[arg(long, default_value = "resident")]
        policy: MemoryPolicy,
        #[arg(long)]
        out: PathBuf,
        /// Run on a seeded random subset of this many samples.
        #[arg(long)]
        subsample: Option<usize>,
    },
    /// Merge curve CSVs into one long-format table.
    Report {
        #[arg(required = true)]
        curves: Vec<PathBuf>,
        /// Output file (default: <out-dir>/report.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a record file over the runner protocol on stdin/stdout.
    ServeReplay {
        #[arg(long)]
        records: PathBuf,
        /// Model name to announce.
        #[arg(long)]
        name: String,
    },
}

fn manifest(path: Option<&Path>) -> Result<Manifest> {
    let path = path.ok_or_else(|| Error::Config("--manifest is required".into()))?;
    Manifest::load(path)
}

fn opt6(x: Option<f64>) -> String {
    x.map(cascade_opt::formats::fmt6)
        .unwrap_or_else(|| "NA".into())
}

fn run(cli: Cli) -> Result<()> {
    let grid = || -> Result<ThresholdGrid> { parse_grid(&cli.grid) };
    let m = cli.manifest.as_deref();
    match &cli.command {
        Cmd::Analyze {
            little,
            big,
            bins,
            quantile,
            dataset,
        } => {
            let out = commands::analyze(
                &manifest(m)?,
                dataset.as_deref(),
                little,
                big,
                *bins,
                *quantile,
                &cli.out_dir,
            )?;
            println!("calibration,{}", out.calibration.display());
            println!("decomposition,{}", out.decomposition.display());
            println!("little_mistakes,{}", out.little_mistakes);
            println!("correctable,{}", out.correctable);
            println!("non_correctable,{}", out.non_correctable);
            println!(
                "mean_correctable_confidence,{}",
                opt6(out.mean_correctable_confidence)
            );
            println!(
                "correctable_quantile_{},{}",
                out.quantile,
                opt6(out.correctable_quantile)
            );
        }
        Cmd::Sweep { models, dataset } => {
            let names: Vec<&str> = models.iter().map(String::as_str).collect();
            let path = commands::sweep_cmd(
                &manifest(m)?,
                dataset.as_deref(),
                &names,
                &grid()?,
                &cli.out_dir,
            )?;
            println!("{}", path.display());
        }
        Cmd::Optimize {
            tolerance,
            kpass,
            dataset,
        } => {
            let out = commands::optimize(
                &manifest(m)?,
                dataset.as_deref(),
                *tolerance,
                *kpass,
                &grid()?,
                &cli.out_dir,
            )?;
            println!("{}", out.table.display());
            if let Some(t) = out.transfer {
                println!("{}", t.display());
            }
        }
        Cmd::Execute {
            config,
            threshold,
            policy,
            out,
            subsample,
        } => {
            let report = commands::execute_cmd(
                config,
                parse_thresholds(threshold)?,
                *policy,
                out,
                *subsample,
                cli.seed,
            )?;
            eprintln!(
                "{} samples, stage counts {:?}, {:.6} GMACs/sample, wall time {:.3}s",
                report.samples.len(),
                report.stage_counts,
                report.mean_gmacs,
                report.wall_time.as_secs_f64()
            );
            println!("{}", out.display());
        }
        Cmd::Report { curves, out } => {
            let out = out
                .clone()
                .unwrap_or_else(|| cli.out_dir.join("report.csv"));
            commands::report(curves, &out)?;
            println!("{}", out.display());
        }
        Cmd::ServeReplay { records, name } => {
            // Confidence and labels come from the file; cost is irrelevant here.
            let profile = ModelProfile::new(name.clone(), 1.0, 0.0, 0)?;
            let set = cascade_opt::load_record_set(records, profile, "replay")?;
            let stdin = io::stdin().lock();
            let stdout = BufWriter::new(io::stdout().lock());
            runner::serve_records(name, set.records(), stdin, stdout).map_err(|source| {
                Error::Runner {
                    stage: 0,
                    sample: None,
                    source,
                }
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CASCADE_OPT_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
