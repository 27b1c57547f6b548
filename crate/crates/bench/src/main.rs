use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qnbo_bench::config::DataFormat;
use qnbo_bench::datagen::{self, GenSpec};
use qnbo_bench::runner::out_dir;
use qnbo_bench::summary::{
    check_comparable, comparison_table, fewest_second_order_calls, write_summaries,
};
use qnbo_bench::{run_all, selftest, BenchError, ExperimentSpec, RunOptions, Summary};

#[derive(Parser)]
#[command(
    name = "qnbo-bench",
    version,
    about = "Run qNBO experiments from TOML files"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its traces and summary.
    Run {
        spec: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(short, long)]
        jobs: Option<usize>,
    },
    /// Run several experiments on the same problem instance and tabulate them.
    Compare {
        #[arg(required = true)]
        specs: Vec<PathBuf>,
        #[arg(short, long)]
        jobs: Option<usize>,
        /// Comparison CSV (default: compare_summary.csv in the first spec's output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check oracles and quasi-Newton kernels.
    Selftest,
    /// Write a synthetic classification dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Also write a validation split drawn from the same clusters, without label noise.
        #[arg(long, requires = "val_samples")]
        val_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        val_samples: usize,
        #[arg(long, value_enum, default_value_t = Format::Libsvm)]
        format: Format,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        features: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long, default_value_t = 0.0)]
        label_noise: f64,
        /// Write two-class labels as ±1.
        #[arg(long)]
        signed: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Libsvm,
    Csv,
}

fn run(cli: Cli) -> Result<ExitCode, BenchError> {
    match cli.command {
        Command::Run { spec, jobs } => {
            let spec = ExperimentSpec::load(&spec)?;
            let opts = RunOptions {
                write: true,
                jobs,
                out_dir: None,
            };
            let report = run_all(std::slice::from_ref(&spec), &opts)?.remove(0);
            let summary = Summary::of(&report);
            let path = write_summaries(
                &out_dir(&spec).join(format!("{}_summary.csv", spec.name)),
                std::slice::from_ref(&summary),
            )?;
            print!("{}", comparison_table(&[summary]));
            for r in &report.repeats {
                if let Some(p) = &r.trace_path {
                    println!("trace: {}", p.display());
                }
                for (k, v) in &r.metrics {
                    println!("repeat {} {k}: {v:.4}", r.repeat);
                }
            }
            println!("summary: {}", path.display());
        }
        Command::Compare { specs, jobs, out } => {
            let specs = specs
                .iter()
                .map(|p| ExperimentSpec::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            check_comparable(&specs)?;
            let opts = RunOptions {
                write: true,
                jobs,
                out_dir: None,
            };
            let reports = run_all(&specs, &opts)?;
            let summaries: Vec<Summary> = reports.iter().map(Summary::of).collect();
            let path = out.unwrap_or_else(|| out_dir(&specs[0]).join("compare_summary.csv"));
            let path = write_summaries(&path, &summaries)?;
            print!("{}", comparison_table(&summaries));
            match fewest_second_order_calls(&summaries) {
                Some(best) => println!(
                    "fewest jv+hvp calls: {} ({})",
                    best.name,
                    best.jv + best.hvp
                ),
                None => println!("fewest jv+hvp calls: none reached the threshold"),
            }
            println!("summary: {}", path.display());
        }
        Command::Selftest => {
            let checks = selftest::run();
            for c in &checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if checks.iter().any(|c| !c.passed) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::GenData {
            out,
            val_out,
            val_samples,
            format,
            samples,
            features,
            classes,
            separation,
            label_noise,
            signed,
            seed,
        } => {
            let (train, val) = datagen::generate(&GenSpec {
                n_samples: samples,
                n_val: if val_out.is_some() { val_samples } else { 0 },
                n_features: features,
                n_classes: classes,
                separation,
                label_noise,
                signed,
                seed,
            })?;
            let format = match format {
                Format::Libsvm => DataFormat::Libsvm,
                Format::Csv => DataFormat::Csv,
            };
            let path = datagen::write(&train, &out, format)?;
            println!("wrote {} samples to {}", train.len(), path.display());
            if let (Some(val), Some(val_out)) = (val, val_out) {
                let path = datagen::write(&val, &val_out, format)?;
                println!("wrote {} samples to {}", val.len(), path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
