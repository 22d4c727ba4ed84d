use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use rspde_cli::artifacts::failure_record;
use rspde_cli::{run_to_dir, CliError, ExperimentConfig};

/// Run a reflected-SPDE experiment and write its tables and manifest.
#[derive(Debug, Parser)]
#[command(name = "rspde", version)]
struct Args {
    /// TOML config file; without it the experiment preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment name, overriding the config's `experiment`.
    #[arg(long)]
    experiment: Option<String>,
    /// Output directory (default: the config's `output_dir`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

fn resolve(args: &Args) -> Result<(ExperimentConfig, Option<Vec<u8>>), CliError> {
    let (mut cfg, source) = match (&args.config, &args.experiment) {
        (Some(path), _) => {
            let bytes = std::fs::read(path).map_err(|e| CliError::Io {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let text =
                String::from_utf8(bytes.clone()).map_err(|e| CliError::Schema(e.to_string()))?;
            (ExperimentConfig::parse(&text)?, Some(bytes))
        }
        (None, Some(name)) => (
            ExperimentConfig::parse(&format!("experiment = {name:?}"))?,
            None,
        ),
        (None, None) => {
            return Err(CliError::Schema(
                "either --config or --experiment is required".into(),
            ))
        }
    };
    if let Some(name) = &args.experiment {
        cfg.experiment = name.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    cfg.finalize()?;
    Ok((cfg, source))
}

fn run(args: &Args) -> Result<bool, CliError> {
    let (cfg, source) = resolve(args)?;
    println!("# resolved config\n{}", cfg.to_toml());
    if args.dry_run {
        return Ok(true);
    }
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let out = run_to_dir(&cfg, &dir, source.as_deref())?;
    for c in &out.outcome.checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!(
        "wrote {} files to {} in {:.2}s",
        out.files.len(),
        dir.display(),
        out.wall_time_s
    );
    if cfg.fail_on_check && !out.outcome.passed() {
        let failed: Vec<&str> = out
            .outcome
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        return Err(CliError::ChecksFailed(failed.join("; ")));
    }
    Ok(true)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            let experiment = args.experiment.as_deref().unwrap_or("unknown");
            eprintln!("error: {err}");
            eprintln!("{}", failure_record(experiment, &err));
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
