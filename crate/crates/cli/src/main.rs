//! Configuration-driven runner for the containment verification pipeline.
//!
//! Subcommands either inspect one ingredient (`check-ode`, `check-cone`,
//! `simulate`) or run the whole pipeline and compare against the expected
//! verdict (`verify`, `scenario run`). Inspection commands exit 0 when they
//! complete, verification commands exit 0 only when the observed verdict
//! matches the expectation, 1 when it does not, and every command exits 2 on
//! a configuration or runtime error. A scenario expected to fail that does
//! fail therefore counts as success, which lets CI sweep the whole catalog.
//!
//! All file outputs are written atomically (write to a temporary sibling,
//! then rename) and are byte-deterministic for a fixed config and seed;
//! wall-clock timing only enters a report when `--timing on` asks for it.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tracklab_core::{
    catalog, check_ode_hypothesis, check_ode_preservation, cone_member_spacetime, find,
    run_monitored, run_pipeline, ConeMembership, GradientCoeffs, PdeConfig,
    PipelineOptions, PipelineOutcome, Scenario, TheoremVerdict, PRESERVATION_STARTS,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("config error at {path}: {detail}")]
    Config { path: String, detail: String },
    #[error("{0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Core(#[from] tracklab_core::Error),
    #[error("report serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Containment verification for parabolic systems on periodic grids.
#[derive(Debug, Parser)]
#[command(name = "tracklab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the boundary cone hypothesis and fiber trajectory preservation
    CheckOde(IoArgs),
    /// Forward cone verdict for one fiber point and velocity
    CheckCone(ConeArgs),
    /// Integrate the evolution; write the monitor series and final section
    Simulate(IoArgs),
    /// Run the full pipeline and compare against the expected verdict
    Verify(IoArgs),
    /// Inspect, run, or export the built-in scenario catalog
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioAction {
    /// Print every catalog entry with its expected verdict
    List,
    /// Full pipeline on one catalog entry
    Run {
        /// Catalog name, e.g. S3
        name: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Write one catalog entry as a standalone config file
    Export {
        /// Catalog name, e.g. S3
        name: String,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Debug, Args)]
struct IoArgs {
    /// Path to a JSON run configuration
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    opts: RunOpts,
}

/// Flags shared by every command that produces files. Each one overrides the
/// matching config field when given; the config in turn overrides the
/// built-in default.
#[derive(Debug, Args)]
struct RunOpts {
    /// Output directory for CSV and JSON reports [default: out]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record every Nth accepted step of the evolution
    #[arg(long)]
    record_every: Option<usize>,
    /// Containment tolerance override
    #[arg(long)]
    tol_contain: Option<f64>,
    /// Seed for jittered hypothesis sampling [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Jitter boundary and time samples instead of the deterministic lattice
    #[arg(long, value_enum)]
    jitter: Option<Toggle>,
    /// Include wall-clock runtime in the JSON report
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    timing: Toggle,
}

#[derive(Debug, Args)]
struct ConeArgs {
    /// Path to a JSON run configuration (supplies the track and field)
    #[arg(long)]
    config: PathBuf,
    /// Base time of the probe
    #[arg(long)]
    time: f64,
    /// Fiber boundary point, comma separated
    #[arg(long, allow_hyphen_values = true)]
    point: String,
    /// Fiber velocity, comma separated; defaults to the reaction field at the point
    #[arg(long, allow_hyphen_values = true)]
    velocity: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

/// On-disk run description: the scenario plus optional output overrides.
/// `scenario export` writes exactly this shape, so exported catalog entries
/// and hand-written configs share one schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    record_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    jitter: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tol_contain: Option<f64>,
}

/// Flag and config values folded into one effective setting per knob.
struct Resolved {
    out: PathBuf,
    record_every: Option<usize>,
    tol_contain: Option<f64>,
    /// Some(seed) when jitter is enabled.
    jitter: Option<u64>,
    timing: bool,
}

fn resolve(opts: &RunOpts, config: Option<&RunConfig>) -> Resolved {
    let out = opts
        .out
        .clone()
        .or_else(|| config.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let record_every = opts.record_every.or(config.and_then(|c| c.record_every));
    let tol_contain = opts.tol_contain.or(config.and_then(|c| c.tol_contain));
    let seed = opts.seed.or(config.and_then(|c| c.seed)).unwrap_or(0);
    let jitter_on = match opts.jitter {
        Some(t) => t == Toggle::On,
        None => config.and_then(|c| c.jitter).unwrap_or(false),
    };
    Resolved {
        out,
        record_every,
        tol_contain,
        jitter: jitter_on.then_some(seed),
        timing: opts.timing == Toggle::On,
    }
}

/// Machine-readable summary written next to the series CSV.
#[derive(Debug, Serialize)]
struct RunReport {
    scenario: String,
    verdicts: TheoremVerdict,
    max_f: f64,
    min_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    runtime_s: Option<f64>,
}

impl RunReport {
    fn new(outcome: &PipelineOutcome, runtime_s: Option<f64>) -> Self {
        let max_f = outcome
            .series
            .f_values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let min_margin = outcome
            .series
            .margins
            .as_ref()
            .map(|m| m.iter().copied().fold(f64::INFINITY, f64::min));
        RunReport {
            scenario: outcome.scenario.clone(),
            verdicts: outcome.verdict.clone(),
            max_f,
            min_margin,
            runtime_s,
        }
    }
}

/// Die quietly when the read end of a pipe closes (`tracklab ... | head`),
/// like any other line-oriented unix tool, instead of panicking on the
/// failed write.
fn reset_sigpipe() {
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

/// Ok(true) maps to exit 0, Ok(false) to 1, Err to 2.
fn run(cli: &Cli) -> Result<bool, CliError> {
    match &cli.command {
        Command::CheckOde(args) => {
            let config = parse_config(&args.config)?;
            check_ode_cmd(&config.scenario, &resolve(&args.opts, Some(&config)))
        }
        Command::CheckCone(args) => check_cone_cmd(args),
        Command::Simulate(args) => {
            let config = parse_config(&args.config)?;
            simulate_cmd(&config.scenario, &resolve(&args.opts, Some(&config)))
        }
        Command::Verify(args) => {
            let config = parse_config(&args.config)?;
            verify_cmd(&config.scenario, &resolve(&args.opts, Some(&config)))
        }
        Command::Scenario { action } => match action {
            ScenarioAction::List => {
                list_cmd();
                Ok(true)
            }
            ScenarioAction::Run { name, opts } => {
                let scenario = find_scenario(name)?;
                verify_cmd(&scenario, &resolve(opts, None))
            }
            ScenarioAction::Export { name, opts } => {
                let scenario = find_scenario(name)?;
                export_cmd(&scenario, &resolve(opts, None))
            }
        },
    }
}

fn find_scenario(name: &str) -> Result<Scenario, CliError> {
    find(name).ok_or_else(|| {
        CliError::Runtime(format!(
            "unknown scenario {name:?}; `tracklab scenario list` prints the catalog"
        ))
    })
}

/// Parses and validates a run config. Serde failures carry the JSON path of
/// the offending key; semantic failures (a step size over the stability
/// bound, an avoidance family leaving the main set) are surfaced by building
/// the run once and mapping the named field back to its config path.
fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let config: RunConfig =
        serde_path_to_error::deserialize(&mut de).map_err(|e| CliError::Config {
            path: e.path().to_string(),
            detail: e.inner().to_string(),
        })?;
    config.scenario.build_pde().map_err(|e| {
        let (path, detail) = match &e {
            tracklab_core::Error::Invalid { what, reason } => {
                (config_path_for(what), reason.clone())
            }
            other => ("scenario".to_string(), other.to_string()),
        };
        CliError::Config { path, detail }
    })?;
    Ok(config)
}

/// Maps a named invalid field from construction to its position in the
/// config document.
fn config_path_for(what: &str) -> String {
    match what {
        "dt" | "topology" | "metric_scale" | "reaction" | "gradient" | "initial"
        | "record_every" => format!("scenario.evolution.{what}"),
        "avoidance" | "epsilon" => "scenario.track.avoidance".to_string(),
        "horizon" => "scenario.track.horizon".to_string(),
        "ball" | "box" | "polytope" | "ellipsoid" | "halfspace" | "family" => {
            format!("scenario.track ({what})")
        }
        other => format!("scenario ({other})"),
    }
}

fn list_cmd() {
    for s in catalog() {
        let e = &s.expected;
        let expect = if e.hypothesis_ok && e.containment_ok && e.avoidance_ok && e.gronwall_ok {
            "all pass".to_string()
        } else {
            let mut fails = Vec::new();
            if !e.hypothesis_ok {
                fails.push("hypothesis");
            }
            if !e.containment_ok {
                fails.push("containment");
            }
            if !e.avoidance_ok {
                fails.push("avoidance");
            }
            if !e.gronwall_ok {
                fails.push("gronwall");
            }
            format!("fails {}", fails.join(", "))
        };
        println!("{:4} expect {:32} {}", s.name, expect, s.description);
    }
}

fn verify_cmd(scenario: &Scenario, resolved: &Resolved) -> Result<bool, CliError> {
    fs::create_dir_all(&resolved.out)?;
    let start = Instant::now();
    let opts = PipelineOptions {
        jitter: resolved.jitter,
        tol_contain: resolved.tol_contain,
        record_every: resolved.record_every,
        ..Default::default()
    };
    let outcome = run_pipeline(scenario, &opts)?;
    let runtime_s = resolved.timing.then(|| start.elapsed().as_secs_f64());
    let stem = file_stem(&scenario.name);
    write_atomic(
        &resolved.out.join(format!("{stem}_series.csv")),
        &outcome.series.to_csv(),
    )?;
    let report = RunReport::new(&outcome, runtime_s);
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_atomic(&resolved.out.join(format!("{stem}_report.json")), &json)?;

    let v = &outcome.verdict;
    println!(
        "{}: hypothesis {}, containment {}, avoidance {}, gronwall {}",
        scenario.name,
        pass(v.hypothesis_ok),
        pass(v.containment_ok),
        pass(v.avoidance_ok),
        pass(v.gronwall_ok)
    );
    println!(
        "{}: max f {:e} (tol {:e}), min margin {}",
        scenario.name,
        report.max_f,
        outcome.tol_contain,
        report
            .min_margin
            .map_or("none".to_string(), |m| format!("{m:e}"))
    );
    if !v.details.is_empty() {
        println!("{}: {}", scenario.name, v.details);
    }
    let matched = scenario.expected.matches(v);
    if matched {
        println!("{}: verdict matches expectation", scenario.name);
    } else {
        let e = &scenario.expected;
        println!(
            "{}: verdict differs from expectation (hypothesis {}, containment {}, avoidance {}, gronwall {})",
            scenario.name,
            pass(e.hypothesis_ok),
            pass(e.containment_ok),
            pass(e.avoidance_ok),
            pass(e.gronwall_ok)
        );
    }
    Ok(matched)
}

fn simulate_cmd(scenario: &Scenario, resolved: &Resolved) -> Result<bool, CliError> {
    fs::create_dir_all(&resolved.out)?;
    let grid = scenario.build_grid()?;
    let track = scenario.build_track()?;
    let field = scenario.build_field(&track)?;
    let u = GradientCoeffs::new(scenario.evolution.gradient.clone())?;
    let record_every = resolved.record_every.or(scenario.evolution.record_every);
    let config = PdeConfig::new(
        grid,
        track,
        field,
        u,
        scenario.evolution.initial.clone(),
        scenario.evolution.dt,
        record_every,
    )?;
    let (series, outcome) = run_monitored(&config);
    let stem = file_stem(&scenario.name);
    write_atomic(
        &resolved.out.join(format!("{stem}_series.csv")),
        &series.to_csv(),
    )?;
    match outcome {
        Ok(section) => {
            let csv = section.to_csv(&scenario.evolution.topology)?;
            write_atomic(&resolved.out.join(format!("{stem}_final.csv")), &csv)?;
            let max_f = series.f_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            println!(
                "{}: integrated to t = {} in {} recorded steps, max f {:e}",
                scenario.name,
                series.times.last().copied().unwrap_or(0.0),
                series.times.len(),
                max_f
            );
            Ok(true)
        }
        Err(err) => Err(CliError::Runtime(format!(
            "{}: evolution aborted after writing the recorded prefix: {err}",
            scenario.name
        ))),
    }
}

fn check_ode_cmd(scenario: &Scenario, resolved: &Resolved) -> Result<bool, CliError> {
    fs::create_dir_all(&resolved.out)?;
    let track = scenario.build_track()?;
    let field = scenario.build_field(&track)?;
    let hyp = check_ode_hypothesis(
        &track,
        &field,
        scenario.n_space,
        scenario.n_time,
        resolved.jitter,
    )?;
    let pres = check_ode_preservation(&track, &field, PRESERVATION_STARTS, scenario.dt_ode)?;
    let stem = file_stem(&scenario.name);
    write_atomic(
        &resolved.out.join(format!("{stem}_hypothesis.csv")),
        &hypothesis_csv(&hyp),
    )?;
    write_atomic(
        &resolved.out.join(format!("{stem}_preservation.csv")),
        &preservation_csv(&pres),
    )?;

    println!(
        "{}: hypothesis {} on {} samples ({} inconclusive, {} failures)",
        scenario.name,
        pass(hyp.summary.holds_everywhere_tested),
        hyp.samples.len(),
        hyp.summary.n_inconclusive,
        hyp.summary.failure_locus.len()
    );
    println!(
        "{}: preservation max excursion {:e} over {} starts{}",
        scenario.name,
        pres.max_excursion,
        pres.starts.len(),
        match pres.first_exit {
            Some((i, t)) => format!(", first exit start {i} at t = {t}"),
            None => ", no exits".to_string(),
        }
    );
    Ok(true)
}

fn check_cone_cmd(args: &ConeArgs) -> Result<bool, CliError> {
    let config = parse_config(&args.config)?;
    let scenario = &config.scenario;
    let track = scenario.build_track()?;
    let v = parse_components(&args.point)?;
    let w = match &args.velocity {
        Some(s) => parse_components(s)?,
        None => {
            let field = scenario.build_field(&track)?;
            field.eval(&[0.0, 0.0], &v, args.time)
        }
    };
    let verdict = cone_member_spacetime(&track, &v, args.time, &w)?;
    println!(
        "t = {}, v = {:?}, w = {:?}: {}",
        args.time,
        v,
        w,
        membership_label(verdict.value)
    );
    let mut json = serde_json::to_string_pretty(&verdict)?;
    json.push('\n');
    print!("{json}");
    Ok(true)
}

fn export_cmd(scenario: &Scenario, resolved: &Resolved) -> Result<bool, CliError> {
    fs::create_dir_all(&resolved.out)?;
    let config = RunConfig {
        scenario: scenario.clone(),
        out: None,
        record_every: None,
        seed: None,
        jitter: None,
        tol_contain: None,
    };
    let mut json = serde_json::to_string_pretty(&config)?;
    json.push('\n');
    let path = resolved.out.join(format!("{}.json", file_stem(&scenario.name)));
    write_atomic(&path, &json)?;
    println!("wrote {}", path.display());
    Ok(true)
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn membership_label(value: ConeMembership) -> &'static str {
    match value {
        ConeMembership::Member => "member",
        ConeMembership::NonMember => "non_member",
        ConeMembership::Inconclusive => "inconclusive",
    }
}

fn hypothesis_csv(report: &tracklab_core::HypothesisReport) -> String {
    let k = report
        .samples
        .first()
        .map_or(0, |s| s.point.len());
    let mut out = String::from("sample,t");
    for c in 1..=k {
        let _ = write!(out, ",v{c}");
    }
    out.push_str(",verdict,excluded\n");
    for (i, s) in report.samples.iter().enumerate() {
        let _ = write!(out, "{i},{}", s.time);
        for x in &s.point {
            let _ = write!(out, ",{x}");
        }
        let verdict = match &s.verdict {
            Some(v) => membership_label(v.value),
            None => "",
        };
        let _ = writeln!(out, ",{verdict},{}", s.excluded_by_avoidance);
    }
    out
}

fn preservation_csv(report: &tracklab_core::PreservationReport) -> String {
    fn pair(out: &mut String, key: &str, value: Option<(usize, f64)>) {
        match value {
            Some((i, t)) => {
                let _ = writeln!(out, "{key}_start,{i}");
                let _ = writeln!(out, "{key}_time,{t}");
            }
            None => {
                let _ = writeln!(out, "{key}_start,");
                let _ = writeln!(out, "{key}_time,");
            }
        }
    }
    let mut out = String::from("key,value\n");
    let _ = writeln!(out, "n_starts,{}", report.starts.len());
    let _ = writeln!(out, "dt,{}", report.dt);
    let _ = writeln!(out, "tol,{}", report.tol);
    let _ = writeln!(out, "max_excursion,{}", report.max_excursion);
    pair(&mut out, "first_exit", report.first_exit);
    pair(&mut out, "first_avoidance_entry", report.first_avoidance_entry);
    pair(&mut out, "blow_up", report.blow_up);
    out
}

fn parse_components(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Runtime(format!("bad vector component {p:?}: {e}")))
        })
        .collect()
}

/// Scenario names become file stems; anything outside [A-Za-z0-9_-] is
/// replaced so user-supplied names cannot escape the output directory.
fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Write-then-rename so concurrent runs never observe a torn file.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| CliError::Runtime(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
