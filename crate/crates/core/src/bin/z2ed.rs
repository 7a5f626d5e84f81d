//! Command-line front end: parses flags, loads the run configuration and
//! dispatches to the harness pipelines.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure
//! or non-convergence, 3 memory budget exceeded.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use z2ed::harness::{HarnessError, RunConfig, Runner};

#[derive(Parser)]
#[command(name = "z2ed", version, about = "Entanglement-spectrum pipelines for the (2+1)D Z2 gauge theory")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed mixed into all stochastic choices.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads for sweep parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Output directory; overrides [output].dir from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Memory budget in gigabytes for the pre-flight check.
    #[arg(long, global = true, default_value_t = 4.0)]
    budget_gb: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the dual constructions against the original-formulation oracle.
    Verify,
    /// Ground-state entanglement spectrum, sector-resolved.
    GroundEs,
    /// Entanglement-gap scan over a coupling sweep with a critical-coupling
    /// estimate.
    Scan,
    /// Variational entanglement-Hamiltonian fit.
    EhFit,
    /// Quench time evolution with entanglement and thermalization
    /// diagnostics.
    Quench,
    /// Self-similar scaling fit of an existing spectrum archive.
    ScalingFit,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let config = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => match cli.command {
            // verify has a built-in geometry list; everything else needs a
            // config file.
            Command::Verify => RunConfig::default(),
            _ => return Err(HarnessError::Config("--config PATH is required".into())),
        },
    };
    let runner = Runner::new(config, cli.out.clone(), cli.seed, cli.budget_gb);
    match cli.command {
        Command::Verify => {
            let entries = runner.run_verify()?;
            for e in &entries {
                let status = match (&e.skipped, e.map_violations) {
                    (_, n) if n > 0 => format!("FAIL ({n} map violations)"),
                    (Some(why), _) => format!("map ok, spectrum skipped: {why}"),
                    (None, _) => format!(
                        "ok (spectrum dev {:.1e})",
                        e.spectrum_max_dev.unwrap_or(0.0)
                    ),
                };
                println!("{:16} {status}", e.geometry);
            }
        }
        Command::GroundEs => {
            let spectrum = runner.run_ground_es()?;
            println!(
                "{} levels, entropy {:.6}; tables in {}",
                spectrum.levels.len(),
                spectrum.von_neumann_entropy(),
                runner.out_dir.display()
            );
        }
        Command::Scan => {
            let scan = runner.run_scan()?;
            println!(
                "{} points, eps_c = {:.4} +- {:.4}; tables in {}",
                scan.points.len(),
                scan.eps_c,
                scan.eps_c_uncertainty,
                runner.out_dir.display()
            );
        }
        Command::EhFit => {
            let fits = runner.run_eh_fit()?;
            for f in &fits {
                println!(
                    "eps {:.3}: S(rho||sigma) = {:.3e}, entropy {:.6} vs {:.6}",
                    f.eps, f.relative_entropy, f.entropy_exact, f.entropy_variational
                );
            }
        }
        Command::Quench => {
            let records = runner.run_quench()?;
            let last = records.last().expect("non-empty time grid");
            println!(
                "{} time points; final entropy {:.4}, <r> {:.4}, rank {}; tables in {}",
                records.len(),
                last.entropy,
                last.r_mean,
                last.schmidt_rank,
                runner.out_dir.display()
            );
        }
        Command::ScalingFit => {
            let fit = runner.run_scaling_fit()?;
            println!(
                "alpha = {:.3} +- {:.3}, beta = {:.3} +- {:.3}, eps*t0 = {:.2} +- {:.2}, chi2_min = {:.3e}",
                fit.alpha, fit.alpha_err, fit.beta, fit.beta_err, fit.eps_t0, fit.eps_t0_err,
                fit.chi2_min
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("z2ed: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
