use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exciton_pimc::stats::Z_95;
use exciton_pimc::SiteMatrix;
use exciton_pimc_cli::reference::{run_oracle, run_verify, write_oracle};
use exciton_pimc_cli::{load_config, run_experiment, RunConfig, RunError, RunOptions};

/// Path-integral Monte Carlo for exciton reduced density matrices.
#[derive(Parser)]
#[command(name = "exciton-pimc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the configured model and write the run outputs.
    Run(Common),
    /// Compute the grid reference for the configured model and temperatures.
    Oracle(Common),
    /// Run both and report z-scores of the sampled estimate per element.
    Verify(Common),
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads; overrides EXCITON_PIMC_THREADS.
    #[arg(short = 'j', long)]
    threads: Option<usize>,
    /// No progress lines on stderr.
    #[arg(short, long)]
    quiet: bool,
}

fn show(rho: &SiteMatrix) -> String {
    let rows: Vec<String> = rho
        .rows()
        .iter()
        .map(|r| r.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" "))
        .collect();
    format!("[{}]", rows.join("; "))
}

fn execute(command: &Command) -> Result<(), RunError> {
    let (Command::Run(common) | Command::Oracle(common) | Command::Verify(common)) = command;
    let config: RunConfig = load_config(&common.config)?;
    let dir = common.output.clone().unwrap_or_else(|| config.output.dir.clone());
    let options = RunOptions {
        progress: !common.quiet,
        threads: common.threads,
    };
    match command {
        Command::Run(_) => {
            let experiment = run_experiment(&config, &dir, &options)?;
            for p in &experiment.summary.points {
                println!(
                    "{} K: rho = {} ± {} (acceptance {:.3})",
                    p.temperature_k,
                    show(&p.mean),
                    show(&p.stderr.scaled(Z_95)),
                    p.acceptance_rate
                );
                for w in &p.warnings {
                    println!("  warning: {w}");
                }
            }
        }
        Command::Oracle(_) => {
            let report = run_oracle(&config)?;
            write_oracle(&report, &dir)?;
            for p in &report.points {
                println!("{} K: exact rho = {}", p.temperature_k, show(&p.exact));
                match (&p.finite_m, &p.finite_m_note) {
                    (Some(rho), _) => println!("  M = {}: {}", config.run.n_beads, show(rho)),
                    (None, Some(note)) => println!("  M = {}: not available ({note})", config.run.n_beads),
                    (None, None) => {}
                }
            }
        }
        Command::Verify(_) => {
            let report = run_verify(&config, &dir, &options)?;
            for p in &report.points {
                let z: Vec<String> = p
                    .z_exact
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|z| z.map_or("-".into(), |z| format!("{z:+.2}")))
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect();
                println!(
                    "{} K: z vs exact [{}], inside 95% CI: {}",
                    p.temperature_k,
                    z.join("; "),
                    p.within_ci_exact
                );
                if let Some(inside) = p.within_ci_finite_m {
                    println!("  inside 95% CI of the finite-M quadrature: {inside}");
                }
            }
        }
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
