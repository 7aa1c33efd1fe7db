//! Command-line front end: scenario runs, parameter sweeps, preset listing,
//! and config validation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fairflow::cli::{self, CliError, RunConfig, ScenarioSource, TraceFormat};
use fairflow::controller::Policy;
use fairflow::sim::{presets, PresetEntry};

#[derive(Parser)]
#[command(
    name = "fairflow",
    version,
    about = "Fairness-constrained dynamic pricing and admission control simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario under the selected policies; writes per-policy trace
    /// files and summary.json
    Run(ScenarioArgs),
    /// Run a sweep preset (theta_sweep or k1_sweep); writes sweep_summary.csv
    Sweep(ScenarioArgs),
    /// List the preset scenario catalogue
    Presets,
    /// Parse a scenario and check its invariants without running it
    Validate(ScenarioArgs),
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Preset name (see `fairflow presets`)
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Scenario config file (sectioned key = value format)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Policies to run: robust_fair, surge (repeatable or comma-separated;
    /// default both)
    #[arg(long = "policy", value_delimiter = ',')]
    policy: Vec<String>,
    /// Output directory (default: $FAIRFLOW_OUT, then ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override one scenario key, e.g. --set system.theta_d=0.2 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Trace formats: csv, json (repeatable or comma-separated; default csv)
    #[arg(long = "format", value_delimiter = ',')]
    format: Vec<String>,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, String> {
    raw.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))
        })
        .collect()
}

fn build_run_config(args: &ScenarioArgs) -> Result<RunConfig, String> {
    let source = match (&args.preset, &args.config) {
        (Some(name), None) => ScenarioSource::Preset(name.clone()),
        (None, Some(path)) => ScenarioSource::ConfigFile(path.clone()),
        (None, None) => return Err("one of --preset or --config is required".to_string()),
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };
    let policies = if args.policy.is_empty() {
        vec![Policy::RobustFair, Policy::Surge]
    } else {
        args.policy
            .iter()
            .map(|name| {
                Policy::parse(name)
                    .ok_or_else(|| format!("unknown policy `{name}` (robust_fair, surge)"))
            })
            .collect::<Result<_, _>>()?
    };
    let formats = if args.format.is_empty() {
        vec![TraceFormat::Csv]
    } else {
        let mut formats: Vec<TraceFormat> = args
            .format
            .iter()
            .map(|name| {
                TraceFormat::parse(name)
                    .ok_or_else(|| format!("unknown format `{name}` (csv, json)"))
            })
            .collect::<Result<_, _>>()?;
        formats.sort();
        formats.dedup();
        formats
    };
    let out_dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os("FAIRFLOW_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(RunConfig {
        source,
        overrides: parse_overrides(&args.set)?,
        out_dir,
        formats,
        policies,
        seed: args.seed,
    })
}

fn print_summary(summary: &cli::RunSummary<f64>) {
    println!(
        "    revenue {:>12.3}   peak I {:>8.4}   time I>theta {:>6.3}%   peak q {:>8.3}   fallbacks {}",
        summary.cumulative_revenue,
        summary.peak_unfairness,
        100.0 * summary.frac_time_unfair,
        summary.peak_q,
        summary.fallback_count,
    );
}

fn cmd_run(args: &ScenarioArgs) -> Result<(), CliError> {
    let rc = build_run_config(args).map_err(usage)?;
    let report = cli::run_command::<f64>(&rc)?;
    println!(
        "scenario `{}` (seed {}) -> {}",
        report.scenario.name,
        report.scenario.seed,
        rc.out_dir.display()
    );
    for (policy, summary) in &report.summary.policies {
        println!("  {policy}:");
        print_summary(summary);
    }
    println!("  wrote {}", report.summary_path.display());
    for path in &report.trace_paths {
        println!("  wrote {}", path.display());
    }
    Ok(())
}

fn cmd_sweep(args: &ScenarioArgs) -> Result<(), CliError> {
    let rc = build_run_config(args).map_err(usage)?;
    let report = cli::sweep_command::<f64>(&rc)?;
    println!(
        "sweep over {} ({} points) -> {}",
        report.param,
        report.rows.len(),
        report.csv_path.display()
    );
    for row in &report.rows {
        print!("  {} = {:<6}", report.param, row.value);
        for (policy, summary) in &row.summaries {
            print!(
                "  [{policy}] revenue {:.2}, peak I {:.4}",
                summary.cumulative_revenue, summary.peak_unfairness
            );
        }
        println!();
    }
    Ok(())
}

fn cmd_presets() {
    println!("available presets:");
    for entry in presets::<f64>() {
        match entry {
            PresetEntry::Single {
                name, description, ..
            } => {
                println!("  {name:<12} {description}");
            }
            PresetEntry::Sweep {
                name,
                description,
                param,
                points,
            } => {
                println!(
                    "  {name:<12} {description} (sweep over {param}, {} points)",
                    points.len()
                );
            }
        }
    }
}

fn cmd_validate(args: &ScenarioArgs) -> Result<(), CliError> {
    let rc = build_run_config(args).map_err(usage)?;
    // sweep presets validate every point; anything else validates one scenario
    let is_sweep_preset = matches!(
        &rc.source,
        ScenarioSource::Preset(name)
            if matches!(fairflow::sim::find_preset::<f64>(name), Some(PresetEntry::Sweep { .. }))
    );
    if is_sweep_preset {
        let (param, points) = cli::load_sweep::<f64>(&rc)?;
        println!("OK: sweep over {param} with {} valid points", points.len());
    } else {
        let scn = cli::load_scenario::<f64>(&rc)?;
        println!(
            "OK: scenario `{}` valid ({} classes, t_end = {}, seed = {})",
            scn.name,
            scn.classes.len(),
            scn.t_end,
            scn.seed
        );
    }
    Ok(())
}

fn usage(message: String) -> CliError {
    CliError::Usage(message)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Presets => {
            cmd_presets();
            Ok(())
        }
        Cmd::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                CliError::Fault { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
