use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use bridgesteer::config::RunConfig;
use bridgesteer::pipeline;

/// Steer a Gaussian packet along a Schrödinger bridge and verify the result.
#[derive(Debug, Parser)]
#[command(name = "bridgesteer", version)]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// gaussian-example, solve-bridge, simulate or verify-all.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    omega: Option<f64>,
    /// Print only the final status line.
    #[arg(long)]
    quiet: bool,
}

fn configure(cli: &Cli) -> bridgesteer::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(mode) = &cli.mode {
        config.mode = mode.parse()?;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(omega) = cli.omega {
        config.omega = omega;
    }
    Ok(config)
}

fn limit_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("BRIDGESTEER_THREADS") else {
        return Ok(());
    };
    let n: usize =
        value.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            format!("BRIDGESTEER_THREADS must be a positive integer, got '{value}'")
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = limit_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let config = match configure(&cli).and_then(|c| c.validate().map(|()| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pipeline::run(&config, cli.quiet) {
        Ok(report) => {
            if !cli.quiet {
                for g in &report.gates {
                    eprintln!(
                        "{} {} ({:e} vs {:e})",
                        if g.passed { "PASS" } else { "FAIL" },
                        g.name,
                        g.value,
                        g.threshold
                    );
                }
            }
            match report.first_failure() {
                None => {
                    println!("all gates passed; outputs in {}", config.out.display());
                    ExitCode::SUCCESS
                }
                Some(g) => {
                    println!(
                        "gate failed: {} (value {:e}, threshold {:e})",
                        g.name, g.value, g.threshold
                    );
                    ExitCode::FAILURE
                }
            }
        }
        Err(e) => {
            println!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
