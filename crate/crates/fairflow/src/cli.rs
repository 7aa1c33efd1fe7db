//! Run orchestration and file emission behind the `fairflow` binary: preset
//! and config loading, per-policy runs, trace CSV/JSON output, and summary
//! reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{self, ConfigError};
use crate::controller::Policy;
use crate::robust::StateBounds;
use crate::scalar::Real;
use crate::sim::{find_preset, PresetEntry, RunResult, Scenario, SimError, TraceRow};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioSource {
    Preset(String),
    ConfigFile(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TraceFormat {
    Csv,
    Json,
}

impl TraceFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(TraceFormat::Csv),
            "json" => Some(TraceFormat::Json),
            _ => None,
        }
    }
}

/// Everything the `run` and `sweep` verbs need.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: ScenarioSource,
    /// `key=value` overrides applied on top of the preset or config file.
    pub overrides: Vec<(String, String)>,
    pub out_dir: PathBuf,
    pub formats: Vec<TraceFormat>,
    pub policies: Vec<Policy>,
    /// Overrides the scenario seed when set.
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("preset `{0}` is a sweep; use the sweep command")]
    PresetIsSweep(String),
    #[error("preset `{0}` is not a sweep; use the run command")]
    PresetIsSingle(String),
    #[error("config files cannot drive sweeps; pick a sweep preset")]
    SweepNeedsPreset,
    #[error("at least one policy must be selected")]
    NoPolicies,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed trace file {path}: {message}")]
    MalformedTrace { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("run aborted for `{policy}`: {message}")]
    Fault {
        policy: &'static str,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-policy outcome statistics over one trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary<R> {
    pub cumulative_revenue: R,
    pub peak_unfairness: R,
    /// Fraction of recorded steps with the unfairness index above theta_d.
    pub frac_time_unfair: R,
    pub peak_q: R,
    /// Fraction of recorded steps with the service queue above q_max.
    pub frac_time_over_capacity: R,
    /// Decision epochs that fell back to a least-violating control.
    pub fallback_count: usize,
    pub mean_price: R,
    pub mean_alpha: R,
}

/// Compute the summary statistics from trace rows alone. `steps_per_epoch`
/// groups rows into decision windows for the fallback count.
pub fn summarize_rows<R: Real>(
    rows: &[TraceRow<R>],
    steps_per_epoch: usize,
    theta_d: R,
    q_max: R,
) -> RunSummary<R> {
    let n = rows.len();
    if n == 0 {
        return RunSummary {
            cumulative_revenue: R::zero(),
            peak_unfairness: R::zero(),
            frac_time_unfair: R::zero(),
            peak_q: R::zero(),
            frac_time_over_capacity: R::zero(),
            fallback_count: 0,
            mean_price: R::zero(),
            mean_alpha: R::zero(),
        };
    }
    let count = R::of(n as f64);
    let mut peak_unfairness = R::zero();
    let mut peak_q = R::zero();
    let mut unfair = 0usize;
    let mut over = 0usize;
    let mut price_sum = R::zero();
    let mut alpha_sum = R::zero();
    for row in rows {
        peak_unfairness = peak_unfairness.max(row.unfairness);
        peak_q = peak_q.max(row.q);
        if row.unfairness > theta_d {
            unfair += 1;
        }
        if row.q > q_max {
            over += 1;
        }
        price_sum = price_sum + row.p;
        alpha_sum = alpha_sum + row.alpha;
    }
    let fallback_count = rows
        .chunks(steps_per_epoch.max(1))
        .filter(|chunk| chunk.iter().any(|r| !r.feasible))
        .count();
    RunSummary {
        cumulative_revenue: rows.last().map(|r| r.revenue_total).unwrap_or_else(R::zero),
        peak_unfairness,
        frac_time_unfair: R::of(unfair as f64) / count,
        peak_q,
        frac_time_over_capacity: R::of(over as f64) / count,
        fallback_count,
        mean_price: price_sum / count,
        mean_alpha: alpha_sum / count,
    }
}

/// The contents of `summary.json`: enough context to recompute every
/// statistic from the emitted traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc<R> {
    pub scenario: String,
    pub seed: u64,
    pub theta_d: R,
    pub q_max: R,
    pub t_d: R,
    pub dt: R,
    pub steps_per_epoch: usize,
    pub policies: BTreeMap<String, RunSummary<R>>,
}

// ---------------------------------------------------------------------------
// Trace serialization
// ---------------------------------------------------------------------------

fn trace_header<R: Real>(row: &TraceRow<R>) -> Vec<String> {
    let n = row.x.len();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=n).map(|i| format!("k_{i}")));
    header.extend((1..=n).map(|i| format!("x_{i}")));
    for name in [
        "z",
        "q",
        "alpha",
        "p",
        "nu",
        "mu",
        "dropout",
        "unfairness",
        "revenue_rate",
        "revenue_total",
        "capacity_margin",
        "fairness_margin",
        "feasible",
    ] {
        header.push(name.into());
    }
    if row.bounds.is_some() {
        for i in 1..=n {
            header.push(format!("x{i}_lo"));
            header.push(format!("x{i}_avg"));
            header.push(format!("x{i}_hi"));
        }
    }
    header
}

fn fmt_opt<R: Real>(v: Option<R>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn trace_record<R: Real>(row: &TraceRow<R>) -> Vec<String> {
    let mut rec: Vec<String> = vec![row.t.to_string()];
    rec.extend(row.arrivals.iter().map(|v| v.to_string()));
    rec.extend(row.x.iter().map(|v| v.to_string()));
    for v in [
        row.z,
        row.q,
        row.alpha,
        row.p,
        row.nu,
        row.mu,
        row.dropout,
        row.unfairness,
        row.revenue_rate,
        row.revenue_total,
    ] {
        rec.push(v.to_string());
    }
    rec.push(fmt_opt(row.capacity_margin));
    rec.push(fmt_opt(row.fairness_margin));
    rec.push(row.feasible.to_string());
    if let Some(bounds) = &row.bounds {
        for b in bounds {
            rec.push(b.lo.to_string());
            rec.push(b.mean.to_string());
            rec.push(b.hi.to_string());
        }
    }
    rec
}

/// Write trace rows as RFC-4180 CSV with one header row. Numbers use the
/// shortest decimal form that parses back to the identical value, so an
/// emitted trace reloads exactly.
pub fn write_trace_csv<R: Real, W: io::Write>(
    writer: W,
    rows: &[TraceRow<R>],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    if let Some(first) = rows.first() {
        w.write_record(trace_header(first))?;
        for row in rows {
            w.write_record(trace_record(row))?;
        }
    } else {
        w.write_record(["t"])?;
    }
    w.flush()?;
    Ok(())
}

/// Read back a trace produced by [`write_trace_csv`].
pub fn read_trace_csv<R: Real>(path: &Path) -> Result<Vec<TraceRow<R>>, CliError> {
    let malformed = |message: String| CliError::MalformedTrace {
        path: path.to_path_buf(),
        message,
    };
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(io::BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .clone();
    let n = headers.iter().filter(|h| h.starts_with("k_")).count();
    let has_bounds = headers.iter().any(|h| h.ends_with("_lo"));
    let parse = |field: &str| -> Result<R, CliError> {
        field
            .parse::<f64>()
            .map(R::of)
            .map_err(|_| malformed(format!("bad number `{field}`")))
    };
    let parse_opt = |field: &str| -> Result<Option<R>, CliError> {
        if field.is_empty() {
            Ok(None)
        } else {
            parse(field).map(Some)
        }
    };

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        if record.len() == 1 && n == 0 {
            continue;
        }
        let field = |i: usize| -> Result<&str, CliError> {
            record
                .get(i)
                .ok_or_else(|| malformed(format!("missing column {i}")))
        };
        let mut idx = 0usize;
        let mut next = || -> usize {
            let i = idx;
            idx += 1;
            i
        };
        let t = parse(field(next())?)?;
        let arrivals = (0..n)
            .map(|_| parse(field(next()).unwrap_or("")))
            .collect::<Result<Vec<_>, _>>()?;
        let x = (0..n)
            .map(|_| parse(field(next()).unwrap_or("")))
            .collect::<Result<Vec<_>, _>>()?;
        let z = parse(field(next())?)?;
        let q = parse(field(next())?)?;
        let alpha = parse(field(next())?)?;
        let p = parse(field(next())?)?;
        let nu = parse(field(next())?)?;
        let mu = parse(field(next())?)?;
        let dropout = parse(field(next())?)?;
        let unfairness = parse(field(next())?)?;
        let revenue_rate = parse(field(next())?)?;
        let revenue_total = parse(field(next())?)?;
        let capacity_margin = parse_opt(field(next())?)?;
        let fairness_margin = parse_opt(field(next())?)?;
        let feasible = match field(next())? {
            "true" => true,
            "false" => false,
            other => return Err(malformed(format!("bad feasible flag `{other}`"))),
        };
        let bounds = if has_bounds {
            let mut b = Vec::with_capacity(n);
            for _ in 0..n {
                b.push(StateBounds {
                    lo: parse(field(next())?)?,
                    mean: parse(field(next())?)?,
                    hi: parse(field(next())?)?,
                });
            }
            Some(b)
        } else {
            None
        };
        rows.push(TraceRow {
            t,
            arrivals,
            x,
            z,
            q,
            alpha,
            p,
            nu,
            mu,
            dropout,
            unfairness,
            revenue_rate,
            revenue_total,
            capacity_margin,
            fairness_margin,
            feasible,
            bounds,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Scenario loading
// ---------------------------------------------------------------------------

fn load_preset_entry<R: Real>(name: &str) -> Result<PresetEntry<R>, CliError> {
    find_preset(name).ok_or_else(|| CliError::UnknownPreset(name.to_string()))
}

fn finalize<R: Real>(
    mut scn: Scenario<R>,
    overrides: &[(String, String)],
    seed: Option<u64>,
) -> Result<Scenario<R>, CliError> {
    if let Some(seed) = seed {
        scn.seed = seed;
    }
    config::apply_overrides(&mut scn, overrides)?;
    Ok(scn)
}

/// Resolve a single-scenario source (the `run` and `validate` verbs).
pub fn load_scenario<R: Real>(rc: &RunConfig) -> Result<Scenario<R>, CliError> {
    let scn = match &rc.source {
        ScenarioSource::Preset(name) => match load_preset_entry::<R>(name)? {
            PresetEntry::Single { scenario, .. } => scenario,
            PresetEntry::Sweep { .. } => return Err(CliError::PresetIsSweep(name.clone())),
        },
        ScenarioSource::ConfigFile(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".to_string());
            config::parse_config(&text, &name)?
        }
    };
    finalize(scn, &rc.overrides, rc.seed)
}

/// A sweep's parameter name and its resolved scenario points.
pub type SweepPoints<R> = (String, Vec<(R, Scenario<R>)>);

/// Resolve a sweep source: the preset's points with overrides applied to each.
pub fn load_sweep<R: Real>(rc: &RunConfig) -> Result<SweepPoints<R>, CliError> {
    let name = match &rc.source {
        ScenarioSource::Preset(name) => name.clone(),
        ScenarioSource::ConfigFile(_) => return Err(CliError::SweepNeedsPreset),
    };
    match load_preset_entry::<R>(&name)? {
        PresetEntry::Sweep { param, points, .. } => {
            let resolved = points
                .into_iter()
                .map(|(value, scn)| Ok((value, finalize(scn, &rc.overrides, rc.seed)?)))
                .collect::<Result<Vec<_>, CliError>>()?;
            Ok((param.to_string(), resolved))
        }
        PresetEntry::Single { .. } => Err(CliError::PresetIsSingle(name)),
    }
}

fn selected_policies(rc: &RunConfig) -> Result<Vec<Policy>, CliError> {
    let mut policies = Vec::new();
    for p in &rc.policies {
        if !policies.contains(p) {
            policies.push(*p);
        }
    }
    if policies.is_empty() {
        return Err(CliError::NoPolicies);
    }
    Ok(policies)
}

/// Create the output directory and fail early if it is not writable.
fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let probe = dir.join(".fairflow_write_probe");
    fs::write(&probe, b"probe").map_err(io_err(dir))?;
    fs::remove_file(&probe).map_err(io_err(dir))?;
    Ok(())
}

fn write_trace_files<R: Real>(
    out_dir: &Path,
    policy: Policy,
    rows: &[TraceRow<R>],
    formats: &[TraceFormat],
) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    for format in formats {
        match format {
            TraceFormat::Csv => {
                let path = out_dir.join(format!("{}_trace.csv", policy.name()));
                let file = fs::File::create(&path).map_err(io_err(&path))?;
                write_trace_csv(io::BufWriter::new(file), rows).map_err(|e| {
                    CliError::MalformedTrace {
                        path: path.clone(),
                        message: e.to_string(),
                    }
                })?;
                paths.push(path);
            }
            TraceFormat::Json => {
                let path = out_dir.join(format!("{}_trace.json", policy.name()));
                let file = fs::File::create(&path).map_err(io_err(&path))?;
                let mut w = io::BufWriter::new(file);
                serde_json::to_writer(&mut w, rows).map_err(|e| CliError::MalformedTrace {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                w.flush().map_err(io_err(&path))?;
                paths.push(path);
            }
        }
    }
    Ok(paths)
}

#[derive(Debug)]
pub struct RunReport<R: Real> {
    pub scenario: Scenario<R>,
    pub summary: SummaryDoc<R>,
    pub summary_path: PathBuf,
    pub trace_paths: Vec<PathBuf>,
    /// Full per-policy results, keyed by policy name.
    pub results: BTreeMap<&'static str, RunResult<R>>,
}

/// Run every selected policy on the same scenario and seed, writing one trace
/// file per policy and a shared `summary.json`.
pub fn run_command<R: Real>(rc: &RunConfig) -> Result<RunReport<R>, CliError> {
    let scenario = load_scenario::<R>(rc)?;
    let policies = selected_policies(rc)?;
    prepare_out_dir(&rc.out_dir)?;

    let mut results = BTreeMap::new();
    let mut trace_paths = Vec::new();
    let mut summaries = BTreeMap::new();
    for policy in policies {
        let run = scenario.with_policy(policy).run();
        let result = match run {
            Ok(result) => result,
            Err(SimError::Invalid(err)) => return Err(ConfigError::from(err).into()),
            Err(SimError::ControllerFault { t, source, partial }) => {
                // leave the partial trace behind as the diagnostic
                write_trace_files(&rc.out_dir, policy, &partial.trace, &rc.formats)?;
                return Err(CliError::Fault {
                    policy: policy.name(),
                    message: format!("t = {t}: {source}"),
                });
            }
            Err(SimError::NonFinite { t, partial }) => {
                write_trace_files(&rc.out_dir, policy, &partial.trace, &rc.formats)?;
                return Err(CliError::Fault {
                    policy: policy.name(),
                    message: format!("non-finite state at t = {t}"),
                });
            }
        };
        trace_paths.extend(write_trace_files(
            &rc.out_dir,
            policy,
            &result.trace,
            &rc.formats,
        )?);
        summaries.insert(
            policy.name().to_string(),
            summarize_rows(
                &result.trace,
                result.steps_per_epoch,
                scenario.sp.theta_d,
                scenario.sp.q_max,
            ),
        );
        results.insert(policy.name(), result);
    }

    let summary = SummaryDoc {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        theta_d: scenario.sp.theta_d,
        q_max: scenario.sp.q_max,
        t_d: scenario.sp.t_d,
        dt: scenario.sp.dt,
        steps_per_epoch: scenario.steps_per_epoch(),
        policies: summaries,
    };
    let summary_path = rc.out_dir.join("summary.json");
    let file = fs::File::create(&summary_path).map_err(io_err(&summary_path))?;
    let mut w = io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| CliError::MalformedTrace {
        path: summary_path.clone(),
        message: e.to_string(),
    })?;
    w.flush().map_err(io_err(&summary_path))?;

    Ok(RunReport {
        scenario,
        summary,
        summary_path,
        trace_paths,
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow<R> {
    pub value: R,
    pub summaries: BTreeMap<String, RunSummary<R>>,
}

#[derive(Debug)]
pub struct SweepReport<R: Real> {
    pub param: String,
    pub rows: Vec<SweepRow<R>>,
    pub csv_path: PathBuf,
}

/// Run a sweep preset point by point (common seed) and emit one summary row
/// per point to `sweep_summary.csv`.
pub fn sweep_command<R: Real>(rc: &RunConfig) -> Result<SweepReport<R>, CliError> {
    let (param, points) = load_sweep::<R>(rc)?;
    let policies = selected_policies(rc)?;
    prepare_out_dir(&rc.out_dir)?;

    let mut rows = Vec::with_capacity(points.len());
    for (value, scenario) in &points {
        let mut summaries = BTreeMap::new();
        for policy in &policies {
            let result = scenario
                .with_policy(*policy)
                .run()
                .map_err(|err| match err {
                    SimError::Invalid(e) => CliError::Config(ConfigError::from(e)),
                    SimError::ControllerFault { t, source, .. } => CliError::Fault {
                        policy: policy.name(),
                        message: format!("{} at t = {t}: {source}", scenario.name),
                    },
                    SimError::NonFinite { t, .. } => CliError::Fault {
                        policy: policy.name(),
                        message: format!("{}: non-finite state at t = {t}", scenario.name),
                    },
                })?;
            summaries.insert(
                policy.name().to_string(),
                summarize_rows(
                    &result.trace,
                    result.steps_per_epoch,
                    scenario.sp.theta_d,
                    scenario.sp.q_max,
                ),
            );
        }
        rows.push(SweepRow {
            value: *value,
            summaries,
        });
    }

    let csv_path = rc.out_dir.join("sweep_summary.csv");
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    let mut w = csv::Writer::from_writer(io::BufWriter::new(file));
    let mut header = vec!["param".to_string(), "value".to_string()];
    for policy in &policies {
        for field in [
            "cumulative_revenue",
            "peak_unfairness",
            "frac_time_unfair",
            "peak_q",
            "frac_time_over_capacity",
            "fallback_count",
            "mean_price",
            "mean_alpha",
        ] {
            header.push(format!("{}_{field}", policy.name()));
        }
    }
    w.write_record(&header)
        .map_err(|e| CliError::MalformedTrace {
            path: csv_path.clone(),
            message: e.to_string(),
        })?;
    for row in &rows {
        let mut rec = vec![param.clone(), row.value.to_string()];
        for policy in &policies {
            let s = &row.summaries[policy.name()];
            rec.push(s.cumulative_revenue.to_string());
            rec.push(s.peak_unfairness.to_string());
            rec.push(s.frac_time_unfair.to_string());
            rec.push(s.peak_q.to_string());
            rec.push(s.frac_time_over_capacity.to_string());
            rec.push(s.fallback_count.to_string());
            rec.push(s.mean_price.to_string());
            rec.push(s.mean_alpha.to_string());
        }
        w.write_record(&rec).map_err(|e| CliError::MalformedTrace {
            path: csv_path.clone(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(io_err(&csv_path))?;

    Ok(SweepReport {
        param,
        rows,
        csv_path,
    })
}
