use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use entrosentinel::baseline::{load_profile, save_profile, DEFAULT_PRIOR};
use entrosentinel::engine::DetectionContext;
use entrosentinel::report::{
    alert_line, compute_metrics, read_report_csv, run_detect, run_profile, write_reports,
    ReportError, RunConfig,
};
use entrosentinel::simulate::{simulate_scenario, ScenarioKind, ScenarioSpec};
use entrosentinel::trace::write_trace;

const USAGE: u8 = 2;
const FAILED: u8 = 1;

#[derive(Parser)]
#[command(name = "entrosentinel", version, about = "Hierarchical entropy-disruption detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a baseline profile from benign traces or directories.
    Profile {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "baseline.json")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PRIOR)]
        prior: f64,
        /// Store a zero creation time.
        #[arg(long)]
        frozen_clock: bool,
        inputs: Vec<PathBuf>,
    },
    /// Run detection over traces or directories and write the reports.
    Detect {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Zero the wall-time and memory fields so reports are reproducible.
        #[arg(long)]
        frozen_clock: bool,
        inputs: Vec<PathBuf>,
    },
    /// Generate one synthetic trace.
    Simulate {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        file_count: Option<usize>,
        #[arg(long)]
        ramp_start: Option<f64>,
        #[arg(long)]
        ramp_end: Option<f64>,
        #[arg(long = "target-dir")]
        target_dirs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute and print metrics from a report directory or report.csv.
    Report {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Kind {
    BenignEdit,
    Compressor,
    Ransomware,
}

impl From<Kind> for ScenarioKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::BenignEdit => ScenarioKind::BenignEdit,
            Kind::Compressor => ScenarioKind::Compressor,
            Kind::Ransomware => ScenarioKind::Ransomware,
        }
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, ReportError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn profile(
    config: Option<PathBuf>,
    out: PathBuf,
    prior: f64,
    frozen_clock: bool,
    inputs: Vec<PathBuf>,
) -> ExitCode {
    let mut cfg = match load_config(config.as_ref()) {
        Ok(c) => c,
        Err(e) => return fail(USAGE, e),
    };
    if !inputs.is_empty() {
        cfg.inputs = inputs;
    }
    if cfg.inputs.is_empty() {
        return fail(USAGE, "profile needs at least one input");
    }
    if !(0.0..=1.0).contains(&prior) {
        return fail(USAGE, format!("prior {prior} outside [0, 1]"));
    }
    if let Err(e) = cfg.validate() {
        return fail(USAGE, e);
    }
    let run = match run_profile(
        &cfg.inputs,
        &cfg.hierarchy,
        cfg.detector.window_seconds,
        prior,
        frozen_clock,
    ) {
        Ok(r) => r,
        Err(e) => return fail(FAILED, e),
    };
    if let Err(e) = save_profile(&run.profile, &out) {
        return fail(FAILED, e);
    }
    for (level, n) in &run.sample_counts {
        println!("{level}\t{n}");
    }
    println!("profile written to {}", out.display());
    ExitCode::SUCCESS
}

fn detect(
    config: Option<PathBuf>,
    baseline: Option<PathBuf>,
    out: Option<PathBuf>,
    frozen_clock: bool,
    inputs: Vec<PathBuf>,
) -> ExitCode {
    let mut cfg = match load_config(config.as_ref()) {
        Ok(c) => c,
        Err(e) => return fail(USAGE, e),
    };
    if !inputs.is_empty() {
        cfg.inputs = inputs;
    }
    if baseline.is_some() {
        cfg.baseline_path = baseline;
    }
    if out.is_some() {
        cfg.report_dir = out;
    }
    if let Err(e) = cfg.validate() {
        return fail(USAGE, e);
    }
    let Some(baseline_path) = cfg.baseline_path.clone() else {
        return fail(USAGE, "no baseline given (--baseline or baseline_path)");
    };
    let profile = match load_profile(&baseline_path) {
        Ok(p) => p,
        Err(e) => return fail(USAGE, e),
    };
    let ctx = match DetectionContext::with_synthetic_attack_model(
        cfg.hierarchy.clone(),
        cfg.detector.clone(),
        profile,
    ) {
        Ok(c) => c,
        Err(e) => return fail(USAGE, e),
    };
    let run = match run_detect(&ctx, &cfg.inputs, frozen_clock) {
        Ok(r) => r,
        Err(e) => return fail(FAILED, e),
    };
    for (trace, alert) in run.alerts() {
        println!("{}", alert_line(trace, alert));
    }
    for input in &run.inputs {
        if let Some(err) = &input.error {
            eprintln!("error: {}: {err}", input.row.trace);
        }
    }
    let dir = cfg.report_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = write_reports(&run, &dir) {
        return fail(FAILED, e);
    }
    let m = &run.metrics;
    eprintln!(
        "accuracy {:.4} fpr {:.4} fnr {:.4} over {} inputs; reports in {}",
        m.accuracy,
        m.fpr,
        m.fnr,
        m.per_trace.len(),
        dir.display()
    );
    if run.failures() > 0 {
        ExitCode::from(FAILED)
    } else {
        ExitCode::SUCCESS
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    kind: Kind,
    seed: u64,
    duration: Option<f64>,
    file_count: Option<usize>,
    ramp_start: Option<f64>,
    ramp_end: Option<f64>,
    target_dirs: Vec<String>,
    out: PathBuf,
) -> ExitCode {
    let mut spec = ScenarioSpec::new(kind.into(), seed);
    if let Some(d) = duration {
        spec.duration = d;
    }
    if let Some(n) = file_count {
        spec.file_count = n;
    }
    spec.ramp = (
        ramp_start.unwrap_or(spec.ramp.0),
        ramp_end.unwrap_or(spec.ramp.1),
    );
    if !target_dirs.is_empty() {
        spec.target_dirs = target_dirs;
    }
    let trace = match simulate_scenario(&spec) {
        Ok(t) => t,
        Err(e) => return fail(USAGE, e),
    };
    if let Err(e) = write_trace(&trace, &out) {
        return fail(FAILED, e);
    }
    match trace.metadata.onset_at {
        Some(t) => println!("onset_at {t}"),
        None => println!("onset_at none"),
    }
    println!("records {}", trace.records.len());
    ExitCode::SUCCESS
}

fn report(out: PathBuf) -> ExitCode {
    let csv = if out.is_dir() { out.join("report.csv") } else { out };
    let rows = match read_report_csv(&csv) {
        Ok(r) => r,
        Err(e) => return fail(USAGE, e),
    };
    match compute_metrics(&rows) {
        Ok(m) => {
            println!("traces {}", m.per_trace.len());
            println!("accuracy {}", m.accuracy);
            println!("fpr {}", m.fpr);
            println!("fnr {}", m.fnr);
            match m.mean_latency_ms {
                Some(l) => println!("mean_latency_ms {l}"),
                None => println!("mean_latency_ms none"),
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(USAGE, e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Profile {
            config,
            out,
            prior,
            frozen_clock,
            inputs,
        } => profile(config, out, prior, frozen_clock, inputs),
        Command::Detect {
            config,
            baseline,
            out,
            frozen_clock,
            inputs,
        } => detect(config, baseline, out, frozen_clock, inputs),
        Command::Simulate {
            kind,
            seed,
            duration,
            file_count,
            ramp_start,
            ramp_end,
            target_dirs,
            out,
        } => simulate(kind, seed, duration, file_count, ramp_start, ramp_end, target_dirs, out),
        Command::Report { out } => report(out),
    }
}
