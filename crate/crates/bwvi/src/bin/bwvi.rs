//! Thin command-line front end over the experiment harness.
//!
//! ```text
//! bwvi run <config.toml>      run every configured method x seed
//! bwvi snr <config.toml>      SNR-versus-K sweeps from the [snr] section
//! bwvi contour <config.toml>  emit the target's contour grid
//!
//! flags: --seed N   override the seed list with a single seed
//!        --out DIR  override the output directory
//!        --force    overwrite results written under a different config
//!        --threads N  parallel (method x seed) workers (default 1)
//! ```
//!
//! Exit codes: 0 success, 2 config error, 3 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use bwvi::error::Error;
use bwvi::harness::{run_contour, run_experiment, ExperimentConfig, ExperimentKind, Overrides};

const USAGE: &str = "usage: bwvi <run|snr|contour> <config.toml> \
[--seed N] [--out DIR] [--force] [--threads N]";

fn parse_args(args: &[String]) -> Result<(String, PathBuf, Overrides), String> {
    if args.len() < 2 {
        return Err(USAGE.to_string());
    }
    let command = args[0].clone();
    if !["run", "snr", "contour"].contains(&command.as_str()) {
        return Err(format!("unknown command '{command}'\n{USAGE}"));
    }
    let config = PathBuf::from(&args[1]);
    let mut ov = Overrides { threads: 1, ..Default::default() };
    let mut i = 2;
    while i < args.len() {
        match args[i].as_str() {
            "--seed" => {
                i += 1;
                let v = args.get(i).ok_or("--seed needs a value")?;
                ov.seed = Some(v.parse().map_err(|_| format!("bad seed '{v}'"))?);
            }
            "--out" => {
                i += 1;
                let v = args.get(i).ok_or("--out needs a value")?;
                ov.out = Some(PathBuf::from(v));
            }
            "--force" => ov.force = true,
            "--threads" => {
                i += 1;
                let v = args.get(i).ok_or("--threads needs a value")?;
                ov.threads = v.parse().map_err(|_| format!("bad thread count '{v}'"))?;
            }
            other => return Err(format!("unknown flag '{other}'\n{USAGE}")),
        }
        i += 1;
    }
    Ok((command, config, ov))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (command, config_path, ov) = match parse_args(&args) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };

    let (config, hash) = match ExperimentConfig::from_path(&config_path) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };

    let result = match command.as_str() {
        "run" => run_experiment(&config, &hash, &ov).map(|out| {
            println!(
                "wrote {} file(s) to {} (config {hash})",
                out.files.len(),
                out.output_dir.display()
            );
            for s in &out.summaries {
                println!(
                    "  {} seed {}: {} iters, objective {:.4} +- {:.4}, ESS {:.1}",
                    s.method.name,
                    s.seed,
                    s.n_iters,
                    s.objective.value,
                    s.objective.std_error,
                    s.diagnostics.ess
                );
            }
        }),
        "snr" => {
            let mut config = config;
            if config.experiment.kind != ExperimentKind::SnrSweep {
                if config.snr.is_none() {
                    eprintln!("config error: snr section required for the snr command");
                    return ExitCode::from(2);
                }
                config.experiment.kind = ExperimentKind::SnrSweep;
            }
            run_experiment(&config, &hash, &ov).map(|out| {
                println!(
                    "wrote {} file(s) to {} (config {hash})",
                    out.files.len(),
                    out.output_dir.display()
                );
            })
        }
        "contour" => run_contour(&config, &hash, &ov).map(|files| {
            for f in files {
                println!("wrote {}", f.display());
            }
        }),
        _ => unreachable!(),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::ConfigError(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::from(3)
        }
    }
}
