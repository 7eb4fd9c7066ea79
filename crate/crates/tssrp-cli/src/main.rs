//! Command-line surface for the sampling-controlled monitoring library.
//!
//! Five subcommands cover the working cycle: `calibrate` searches the alarm
//! threshold for a configured false-alarm budget, `simulate` replicates a
//! change scenario at a fixed threshold, `monitor` runs the live pull-based
//! protocol over newline-delimited records, `report` aggregates experiment
//! artifacts into delay tables, and `verify` runs the correctness audits.
//!
//! Exit codes: `0` for a completed run (including a monitor that exhausted
//! its input without an alarm), `2` when the monitor raised an alarm, and
//! codes above 2 for errors — `3` configuration, `4` data, `5` protocol,
//! `6` calibration, `7` anything else. Every artifact-writing subcommand
//! drops a `manifest.json` beside its outputs; reruns with an identical
//! manifest identity (config, seed, tool version, command line) reproduce
//! every artifact byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tssrp::calibration::CalibrationReport;
use tssrp::config::{ConfigFile, ScenarioKind};
use tssrp::detector::{run_monitor, RunOptions, RunResult, TssrpDetector};
use tssrp::baselines::TrasDetector;
use tssrp::live::{monitor_stream, LiveMonitor};
use tssrp::report::{
    aggregate_reports, layout_trace_csv, read_experiment_artifact, replications_csv,
    statistic_trace_csv, write_json, CalibrationArtifact, ExperimentArtifact, RunManifest,
};
use tssrp::seeding::replication_seed;
use tssrp::sim::{
    calibrate_for_hot_forming, calibrate_for_scenario, run_experiment,
    run_hot_forming_experiment, Algorithm, HotFormingSource, MonitorKind, PanelSource,
};
use tssrp::verify::run_all;
use tssrp::{Result, TssrpError};

const EXIT_ALARM: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_DATA: u8 = 4;
const EXIT_PROTOCOL: u8 = 5;
const EXIT_CALIBRATION: u8 = 6;
const EXIT_RUNTIME: u8 = 7;

fn exit_code_for(err: &TssrpError) -> u8 {
    match err {
        TssrpError::Config(_) => EXIT_CONFIG,
        TssrpError::Input(_) | TssrpError::Data(_) | TssrpError::Json(_) => EXIT_DATA,
        TssrpError::Protocol(_) => EXIT_PROTOCOL,
        TssrpError::Calibration(_) => EXIT_CALIBRATION,
        TssrpError::State(_) | TssrpError::SourceExhausted { .. } | TssrpError::Io(_) => {
            EXIT_RUNTIME
        }
    }
}

#[derive(Parser)]
#[command(
    name = "tssrp",
    version,
    about = "Sampling-controlled multi-stream change-point monitoring",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search the alarm threshold meeting the configured false-alarm budget.
    Calibrate(CalibrateArgs),
    /// Replicate the configured change scenario at a fixed threshold.
    Simulate(SimulateArgs),
    /// Monitor a newline-delimited record stream with the live protocol.
    Monitor(MonitorArgs),
    /// Aggregate experiment artifacts into a delay table.
    Report(ReportArgs),
    /// Run the correctness audits against naive reference computations.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for calibration.json, bracket_history.csv, manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the configured calibration replication count.
    #[arg(long)]
    replications: Option<usize>,
    /// Override the configured calibration horizon.
    #[arg(long)]
    horizon: Option<u64>,
    /// Override the calibration seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for experiment.json, replications.csv, manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Raw-scale alarm threshold; overrides [rule].threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Also write replication 0's layout and statistic traces.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct MonitorArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Record file (one JSON object per line); stdin when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// File for per-round layout requests; stderr when omitted.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Raw-scale alarm threshold; overrides [rule].threshold.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment artifacts (experiment.json files) to aggregate.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Also write the long-format CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Seed for the audit's generated records.
    #[arg(long, default_value_t = 20260822)]
    seed: u64,
    /// Replications for the statistical martingale audit.
    #[arg(long, default_value_t = 2000)]
    martingale_replications: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version renders are successful output, not errors;
            // anything else is a usage problem and exits like a bad config.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Calibrate(args) => cmd_calibrate(args).map(|()| ExitCode::SUCCESS),
        Command::Simulate(args) => cmd_simulate(args).map(|()| ExitCode::SUCCESS),
        Command::Monitor(args) => cmd_monitor(args).map(|alarmed| {
            if alarmed {
                ExitCode::from(EXIT_ALARM)
            } else {
                ExitCode::SUCCESS
            }
        }),
        Command::Report(args) => cmd_report(args).map(|()| ExitCode::SUCCESS),
        Command::Verify(args) => cmd_verify(args).map(|all_passed| {
            if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn load_config(path: &Path) -> Result<(ConfigFile, String)> {
    let text = fs::read_to_string(path).map_err(|e| {
        TssrpError::config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let config = ConfigFile::from_toml_str(&text)?;
    Ok((config, text))
}

fn manifest_for(config_text: &str, master_seed: u64) -> RunManifest {
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    RunManifest::new(config_text, master_seed, env!("CARGO_PKG_VERSION"), command_line)
}

/// The threshold a command runs at: the flag wins, then the config.
fn required_threshold(flag: Option<f64>, config: &ConfigFile) -> Result<f64> {
    flag.or_else(|| config.threshold()).ok_or_else(|| {
        TssrpError::config(
            "no threshold available: pass --threshold or set [rule].threshold \
             (calibrate writes one)",
        )
    })
}

/// Build the configured monitor for one replication.
fn monitor_for(config: &ConfigFile, threshold: f64, rep_seed: u64) -> Result<MonitorKind> {
    match config.algorithm()? {
        Algorithm::Tssrp { .. } => {
            let mut detector = config.detector_config(threshold)?;
            detector.seed = rep_seed;
            Ok(MonitorKind::Tssrp(TssrpDetector::new(&detector)?))
        }
        Algorithm::Tras { .. } => {
            let mut baseline = config.tras_config(threshold)?;
            baseline.seed = rep_seed;
            Ok(MonitorKind::Tras(TrasDetector::new(&baseline)?))
        }
    }
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

fn bracket_history_csv(report: &CalibrationReport, manifest_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# manifest: {manifest_hash}");
    let _ = writeln!(out, "threshold,log_threshold,arl,exact,cap");
    for point in &report.bracket_history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            point.threshold, point.log_threshold, point.arl, point.exact, point.cap
        );
    }
    out
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let (config, text) = load_config(&args.config)?;
    let algorithm = config.algorithm()?;
    let mut settings = config.calibration_settings()?;
    if let Some(n) = args.replications {
        settings = settings.with_replications(n);
    }
    if let Some(h) = args.horizon {
        settings = settings.with_horizon(h);
    }
    if let Some(s) = args.seed {
        settings = settings.with_seed(s);
    }
    settings.validate()?;

    let report = match config.scenario.kind {
        ScenarioKind::Panel => {
            calibrate_for_scenario(&config.to_panel_scenario()?, algorithm, &settings)?
        }
        ScenarioKind::HotForming => {
            calibrate_for_hot_forming(&config.to_hot_forming_scenario()?, algorithm, &settings)?
        }
    };

    fs::create_dir_all(&args.out_dir)?;
    let mut manifest = manifest_for(&text, settings.master_seed);
    let hash = manifest.hash();
    write_json(
        &args.out_dir.join("calibration.json"),
        &CalibrationArtifact {
            manifest_hash: hash.clone(),
            calibration: report.clone(),
        },
    )?;
    fs::write(
        args.out_dir.join("bracket_history.csv"),
        bracket_history_csv(&report, &hash),
    )?;
    manifest.outputs = vec!["calibration.json".into(), "bracket_history.csv".into()];
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;

    println!(
        "calibrated threshold {:.6} (ln {:.4}) for gamma {}: in-control ARL {:.1} +- {:.1} over {} replications ({} censored)",
        report.threshold,
        report.log_threshold,
        report.gamma,
        report.arl_estimate,
        report.std_error,
        report.replications,
        report.censored
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Rerun replication 0 with traces on, reproducing the experiment's own
/// replication seed so the trace matches row 0 of replications.csv.
fn trace_replication_zero(
    config: &ConfigFile,
    threshold: f64,
    master_seed: u64,
) -> Result<RunResult> {
    let rep_seed = replication_seed(master_seed, 0);
    let opts = RunOptions::to_horizon(config.horizon()?)
        .with_layout_trace()
        .with_statistic_trace();
    let mut monitor = monitor_for(config, threshold, rep_seed)?;
    match config.scenario.kind {
        ScenarioKind::Panel => {
            let scenario = config.to_panel_scenario()?;
            let mut source = PanelSource::new(&scenario, rep_seed);
            run_monitor(&mut monitor, &mut source, &opts)
        }
        ScenarioKind::HotForming => {
            let scenario = config.to_hot_forming_scenario()?;
            let mut source = HotFormingSource::new(&scenario, rep_seed)?;
            run_monitor(&mut monitor, &mut source, &opts)
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let (config, text) = load_config(&args.config)?;
    let algorithm = config.algorithm()?;
    let threshold = required_threshold(args.threshold, &config)?;
    let master_seed = config.master_seed();

    let report = match config.scenario.kind {
        ScenarioKind::Panel => {
            run_experiment(&config.to_panel_scenario()?, algorithm, threshold, master_seed)?
        }
        ScenarioKind::HotForming => run_hot_forming_experiment(
            &config.to_hot_forming_scenario()?,
            algorithm,
            threshold,
            master_seed,
        )?,
    };

    fs::create_dir_all(&args.out_dir)?;
    let mut manifest = manifest_for(&text, master_seed);
    let hash = manifest.hash();
    let mut outputs = vec!["experiment.json".to_string(), "replications.csv".to_string()];
    write_json(
        &args.out_dir.join("experiment.json"),
        &ExperimentArtifact {
            manifest_hash: hash.clone(),
            experiment: report.clone(),
        },
    )?;
    fs::write(
        args.out_dir.join("replications.csv"),
        replications_csv(&report, Some(&hash)),
    )?;
    if args.trace {
        let traced = trace_replication_zero(&config, threshold, master_seed)?;
        fs::write(
            args.out_dir.join("layout_trace.csv"),
            layout_trace_csv(&traced, Some(&hash))?,
        )?;
        fs::write(
            args.out_dir.join("statistic_trace.csv"),
            statistic_trace_csv(&traced, Some(&hash))?,
        )?;
        outputs.push("layout_trace.csv".into());
        outputs.push("statistic_trace.csv".into());
    }
    manifest.outputs = outputs;
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;

    match (report.mean_delay, report.stderr_delay) {
        (Some(delay), Some(se)) => println!(
            "{} with {} changed: mean delay {delay:.2} +- {se:.2} over {} replications ({} alarms, {} censored, {} early)",
            report.algorithm,
            report.n_changes,
            report.replications,
            report.alarms,
            report.censored,
            report.early_alarms
        ),
        _ => println!(
            "{} in control: mean stopping time {:.1} +- {:.1} over {} replications ({} censored)",
            report.algorithm,
            report.mean_stopping_time,
            report.stderr_stopping_time,
            report.replications,
            report.censored
        ),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// monitor
// ---------------------------------------------------------------------------

fn cmd_monitor(args: MonitorArgs) -> Result<bool> {
    let (config, _) = load_config(&args.config)?;
    let threshold = required_threshold(args.threshold, &config)?;
    let mut live = match config.algorithm()? {
        Algorithm::Tssrp { .. } => {
            LiveMonitor::new_detector(&config.detector_config(threshold)?)?
        }
        Algorithm::Tras { .. } => LiveMonitor::new_baseline(&config.tras_config(threshold)?)?,
    };

    let input: Box<dyn BufRead> = match &args.input {
        Some(path) => Box::new(BufReader::new(fs::File::open(path).map_err(|e| {
            TssrpError::data(format!("cannot open input {}: {e}", path.display()))
        })?)),
        None => Box::new(BufReader::new(io::stdin())),
    };
    let mut layout: Box<dyn Write> = match &args.layout {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(io::stderr()),
    };

    let mut stdout = io::stdout().lock();
    let alarm = monitor_stream(&mut live, input, &mut stdout, &mut layout)?;
    if alarm.is_none() {
        eprintln!(
            "input exhausted after {} rounds without an alarm",
            live.rounds()
        );
    }
    Ok(alarm.is_some())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn cmd_report(args: ReportArgs) -> Result<()> {
    let artifacts: Vec<ExperimentArtifact> = args
        .inputs
        .iter()
        .map(|p| read_experiment_artifact(p))
        .collect::<Result<_>>()?;

    // In-control runs have a run length but no detection delay, so they get
    // summary lines of their own instead of a seat at the delay table.
    let (in_control, out_of_control): (Vec<_>, Vec<_>) = artifacts
        .iter()
        .map(|a| a.experiment.clone())
        .partition(|r| r.mean_delay.is_none());
    for r in &in_control {
        println!(
            "{}({}) in control: mean run length {:.1} +- {:.1} over {} replications ({} censored)",
            r.algorithm,
            r.prior_or_delta,
            r.mean_stopping_time,
            r.stderr_stopping_time,
            r.replications,
            r.censored
        );
    }

    if out_of_control.is_empty() {
        if let Some(path) = &args.csv {
            return Err(TssrpError::data(format!(
                "all inputs are in-control runs; there is no delay table to write to {}",
                path.display()
            )));
        }
        return Ok(());
    }

    let table = aggregate_reports(&out_of_control)?;
    print!("{}", table.render_text());

    if let Some(path) = &args.csv {
        // All inputs from one run share a manifest; a mixed aggregation has
        // no single provenance line.
        let shared_hash = artifacts
            .windows(2)
            .all(|w| w[0].manifest_hash == w[1].manifest_hash)
            .then(|| artifacts[0].manifest_hash.as_str());
        fs::write(path, table.to_csv(shared_hash))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(args: VerifyArgs) -> Result<bool> {
    let checks = run_all(args.seed, args.martingale_replications)?;
    for check in &checks {
        println!(
            "{} {} — {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    Ok(checks.iter().all(|c| c.passed))
}
