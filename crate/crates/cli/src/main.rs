use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fspda_cli::{
    cmd_estimate, cmd_oracle_check, cmd_simulate, AppError, EstimateOptions, EstimateRequest, OracleRequest,
};
use fspda_core::{FspdaError, InferenceOptions, Kernel};

#[derive(Parser)]
#[command(
    name = "fspda",
    version,
    about = "Forward-selected panel data approach for program evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the treatment effect on one treated unit from a wide CSV panel.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo scenario and write the aggregated report.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Worker threads (default: all cores). Results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        /// Omit timestamps and timings so output is byte-reproducible.
        #[arg(long)]
        no_meta: bool,
    },
    /// Compare the greedy path with the exhaustive best subset of a given size.
    OracleCheck {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        subset_size: usize,
        #[arg(long)]
        delta: f64,
        /// Frequency required for the verdict to hold.
        #[arg(long, default_value_t = 0.95)]
        min_frequency: f64,
        /// Write the verdict here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        no_meta: bool,
    },
}

#[derive(clap::Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Column holding the treated unit.
    #[arg(long)]
    treated: String,
    /// Period label of the first post-treatment row.
    #[arg(long)]
    treatment_at: String,
    /// Columns to drop from the control pool.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
    #[arg(long)]
    r_max: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    bic_constant: f64,
    /// HAC lag (default ⌊4(T2/100)^(2/9)⌋).
    #[arg(long)]
    lag: Option<usize>,
    #[arg(long, value_enum, default_value_t = KernelArg::Truncated)]
    kernel: KernelArg,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    intercept: Switch,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    output: PathBuf,
    /// Plot-data CSV (default: output path with `.plot.csv`).
    #[arg(long)]
    plot_data: Option<PathBuf>,
    #[arg(long)]
    no_meta: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Truncated,
    Bartlett,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Estimate(a) => {
            let request = EstimateRequest {
                input: a.input,
                treated: a.treated,
                treatment_at: a.treatment_at,
                exclude: a.exclude,
                options: EstimateOptions {
                    r_max: a.r_max,
                    bic_constant: a.bic_constant,
                    inference: InferenceOptions {
                        tau: a.lag,
                        alpha: a.alpha,
                        kernel: match a.kernel {
                            KernelArg::Truncated => Kernel::Truncated,
                            KernelArg::Bartlett => Kernel::Bartlett,
                        },
                    },
                    intercept: matches!(a.intercept, Switch::On),
                },
                output: a.output,
                plot_data: a.plot_data,
                include_meta: !a.no_meta,
            };
            let report = cmd_estimate(&request)?;
            let selected: Vec<&str> = report.model.units.iter().map(|u| u.label.as_str()).collect();
            eprintln!(
                "selected {:?}; ATE {:.6}, z {:.4}, p {:.4}",
                selected, report.inference.ate, report.inference.z_stat, report.inference.p_value
            );
            for w in &report.diagnostics.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Simulate {
            scenario,
            output,
            threads,
            no_meta,
        } => {
            let document = cmd_simulate(&scenario, &output, threads, !no_meta)?;
            for r in &document.reports {
                eprintln!(
                    "{} {:?}: median selected {}, RMPSE {:.4}, rejection rate {:.3} ({} failed)",
                    r.treatment, r.method, r.median_selected, r.rmpse, r.rejection_rate, r.n_failed
                );
            }
        }
        Command::OracleCheck {
            scenario,
            subset_size,
            delta,
            min_frequency,
            output,
            threads,
            no_meta,
        } => {
            let to_stdout = output.is_none();
            let document = cmd_oracle_check(&OracleRequest {
                scenario,
                subset_size,
                delta,
                min_frequency,
                output,
                threads,
                include_meta: !no_meta,
            })?;
            if to_stdout {
                println!("{}", serde_json::to_string_pretty(&document)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(fspda_cli::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, AppError::Core(FspdaError::NonPositiveLrv { .. })) {
                eprintln!("hint: the truncated kernel can be non-positive; rerun with --kernel bartlett");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
