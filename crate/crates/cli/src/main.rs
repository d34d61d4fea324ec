use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parastab_cli::config::{load_config, preset_text, PRESETS};
use parastab_cli::error::{exit, CliError};
use parastab_cli::pipeline::{self, RunOptions};
use parastab_cli::report::{emit_files, write_atomic, RunReport, Verdict};

/// Exponential stability certificates for coupled parabolic systems.
#[derive(Debug, Parser)]
#[command(name = "parastab", version, about)]
struct Cli {
    /// Built-in configuration used instead of a config file.
    #[arg(long, global = true, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Override a config value, e.g. `--set problem.params.b=6.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Evaluate bisection probes speculatively in parallel.
    #[arg(long, global = true)]
    parallel: bool,
    /// Print the full JSON report on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Also write the JSON report to this file.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decide feasibility at the configured parameters.
    Analyze { config: Option<PathBuf> },
    /// Bisect the sweep parameter for the largest certified value.
    Bisect { config: Option<PathBuf> },
    /// Finite-difference stability verdict (1-D problems).
    Oracle { config: Option<PathBuf> },
    /// Write the assembled system in SDPA sparse format.
    ///
    /// Takes `<config> <out>`, or just `<out>` with `--preset`.
    Export {
        #[arg(num_args = 1..=2, required = true)]
        paths: Vec<PathBuf>,
    },
    /// Turn a JSON report into CSV tables and plot data.
    Report { input: PathBuf, outdir: PathBuf },
}

fn config_text(preset: Option<&str>, path: Option<&Path>) -> Result<String, CliError> {
    match (preset, path) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "give either a config file or --preset, not both".into(),
        )),
        (Some(p), None) => Ok(preset_text(p)?.to_string()),
        (None, Some(path)) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display()))),
        (None, None) => Err(CliError::Config(
            "a config file or --preset is required".into(),
        )),
    }
}

fn configure_workers() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("PARASTAB_WORKERS") {
        let n: usize = v.trim().parse().map_err(|_| {
            CliError::Config(format!(
                "PARASTAB_WORKERS must be a positive integer, got `{v}`"
            ))
        })?;
        if n == 0 {
            return Err(CliError::Config("PARASTAB_WORKERS must be positive".into()));
        }
        // fails only if a pool already exists, which is harmless here
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn emit(cli: &Cli, report: &RunReport) -> Result<(), CliError> {
    if let Some(path) = &cli.out {
        write_atomic(path, &report.to_json())?;
    }
    if cli.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.summary());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    configure_workers()?;
    let opts = RunOptions {
        parallel: cli.parallel,
    };
    let load = |path: Option<&PathBuf>| -> Result<_, CliError> {
        let text = config_text(cli.preset.as_deref(), path.map(PathBuf::as_path))?;
        load_config(&text, &cli.overrides)
    };
    match &cli.command {
        Command::Analyze { config } => {
            let cfg = load(config.as_ref())?;
            let report = pipeline::analyze(&cfg)?;
            emit(cli, &report)?;
            Ok(match report.probes.first().map(|p| p.verdict) {
                Some(Verdict::Feasible) => exit::OK,
                Some(Verdict::NumericalFailure) => exit::NUMERICAL,
                _ => exit::INFEASIBLE,
            })
        }
        Command::Bisect { config } => {
            let cfg = load(config.as_ref())?;
            let report = pipeline::bisect(&cfg, opts)?;
            emit(cli, &report)?;
            Ok(exit::OK)
        }
        Command::Oracle { config } => {
            let cfg = load(config.as_ref())?;
            let report = pipeline::oracle(&cfg)?;
            emit(cli, &report)?;
            Ok(if report.oracle.iter().all(|o| o.stable) {
                exit::OK
            } else {
                exit::INFEASIBLE
            })
        }
        Command::Export { paths } => {
            let (config, out) = match (cli.preset.is_some(), paths.as_slice()) {
                (true, [out]) => (None, out),
                (false, [config, out]) => (Some(config), out),
                _ => {
                    return Err(CliError::Config(
                        "export takes <config> <out>, or <out> together with --preset".into(),
                    ))
                }
            };
            let cfg = load(config)?;
            let text = pipeline::export(&cfg)?;
            write_atomic(out, &text)?;
            eprintln!("wrote {}", out.display());
            Ok(exit::OK)
        }
        Command::Report { input, outdir } => {
            let text = std::fs::read_to_string(input)?;
            let report = RunReport::from_json(&text)?;
            for name in emit_files(&report, outdir)? {
                println!("{}", outdir.join(name).display());
            }
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
