//! Run configuration, batch profiling and detection over input files, and
//! the report artifacts: `report.csv`, `metrics.json` and `heatmap.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{fit_baseline, BaselineError, BaselineProfile};
use crate::detector::{Alert, DetectorConfig, DetectorError};
use crate::engine::{collect_deviations, DetectionContext, Detector, TraceOutcome};
use crate::hierarchy::{aggregate_entropy, HierarchyConfig};
use crate::trace::{scan_directory, EventRecord, TraceError, TraceReader};

/// Chunk size used when a directory input is scanned.
pub const SCAN_CHUNK_BYTES: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no inputs")]
    EmptyInput,
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {reason}")]
    Csv { path: PathBuf, reason: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub hierarchy: HierarchyConfig,
    pub detector: DetectorConfig,
    pub baseline_path: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub report_dir: Option<PathBuf>,
}


impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| ReportError::Config(format!("{}: {e}", path.display())))
    }

    /// At least one input, every referenced file present, sub-configs valid.
    pub fn validate(&self) -> Result<(), ReportError> {
        self.hierarchy
            .validate()
            .map_err(|e| ReportError::Config(e.to_string()))?;
        self.detector
            .validate()
            .map_err(|e| ReportError::Config(e.to_string()))?;
        if self.inputs.is_empty() {
            return Err(ReportError::EmptyInput);
        }
        let missing = self
            .inputs
            .iter()
            .chain(self.baseline_path.iter())
            .find(|p| !p.exists());
        if let Some(p) = missing {
            return Err(ReportError::Config(format!("{} does not exist", p.display())));
        }
        Ok(())
    }
}

/// One row of `report.csv`. `label` is `unknown` for unlabeled inputs and
/// `verdict` is `error` for inputs that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub trace: String,
    pub label: String,
    pub verdict: String,
    pub confidence: f64,
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub true_positives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub per_trace: Vec<TraceRow>,
    pub mean_latency_ms: Option<f64>,
    /// Wall time of the whole run; zero under a frozen clock.
    pub wall_time_ms: f64,
    /// Peak resident set size in KiB; zero under a frozen clock or where
    /// unavailable.
    pub peak_rss_estimate: u64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion-matrix aggregates over rows whose label and verdict are both
/// benign or ransomware. Mean latency is taken over true positives only.
pub fn compute_metrics(rows: &[TraceRow]) -> Result<MetricsReport, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let (mut tp, mut tn, mut fp, mut fnn) = (0, 0, 0, 0);
    let mut latencies = Vec::new();
    for r in rows {
        match (r.label.as_str(), r.verdict.as_str()) {
            ("ransomware", "ransomware") => {
                tp += 1;
                latencies.extend(r.latency_ms);
            }
            ("benign", "benign") => tn += 1,
            ("benign", "ransomware") => fp += 1,
            ("ransomware", "benign") => fnn += 1,
            _ => {}
        }
    }
    // Sorted so the sum does not depend on row order.
    latencies.sort_by(f64::total_cmp);
    let mean_latency_ms = if latencies.is_empty() {
        None
    } else {
        Some(latencies.iter().sum::<f64>() / latencies.len() as f64)
    };
    Ok(MetricsReport {
        accuracy: ratio(tp + tn, tp + tn + fp + fnn),
        fpr: ratio(fp, fp + tn),
        fnr: ratio(fnn, fnn + tp),
        true_positives: tp,
        true_negatives: tn,
        false_positives: fp,
        false_negatives: fnn,
        per_trace: rows.to_vec(),
        mean_latency_ms,
        wall_time_ms: 0.0,
        peak_rss_estimate: 0,
    })
}

/// Level × one-second-bucket mean entropy, averaged over every trace of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub level_ids: Vec<String>,
    pub buckets: Vec<i64>,
    /// `cells[level][bucket]`.
    pub cells: Vec<Vec<Option<f64>>>,
    /// Weighted aggregate, present where every level has a value.
    pub total: Vec<Option<f64>>,
}

impl Heatmap {
    pub fn build(hierarchy: &HierarchyConfig, outcomes: &[&TraceOutcome]) -> Result<Self, ReportError> {
        let level_ids: Vec<String> = hierarchy.level_ids().map(String::from).collect();
        let mut acc: BTreeMap<i64, Vec<(f64, u64)>> = BTreeMap::new();
        for o in outcomes {
            for p in &o.timeline {
                let bucket = p.start.floor() as i64;
                let cell = acc
                    .entry(bucket)
                    .or_insert_with(|| vec![(0.0, 0); level_ids.len()]);
                for (c, v) in cell.iter_mut().zip(&p.levels) {
                    if let Some(v) = v {
                        c.0 += v;
                        c.1 += 1;
                    }
                }
            }
        }
        let buckets: Vec<i64> = acc.keys().copied().collect();
        let mut cells = vec![Vec::with_capacity(buckets.len()); level_ids.len()];
        let mut total = Vec::with_capacity(buckets.len());
        for col in acc.values() {
            let means: Vec<Option<f64>> = col
                .iter()
                .map(|&(s, n)| (n > 0).then(|| s / n as f64))
                .collect();
            for (row, m) in cells.iter_mut().zip(&means) {
                row.push(*m);
            }
            let complete: Option<BTreeMap<String, f64>> = level_ids
                .iter()
                .zip(&means)
                .map(|(id, m)| m.map(|v| (id.clone(), v)))
                .collect();
            total.push(match complete {
                Some(values) => Some(
                    aggregate_entropy(hierarchy, &values)
                        .map_err(|e| ReportError::Config(e.to_string()))?,
                ),
                None => None,
            });
        }
        Ok(Self {
            level_ids,
            buckets,
            cells,
            total,
        })
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: &Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let mut out = String::from("level");
        for b in &self.buckets {
            out.push_str(&format!(",{b}"));
        }
        out.push('\n');
        let rows = self
            .level_ids
            .iter()
            .map(String::as_str)
            .zip(self.cells.iter())
            .chain(std::iter::once(("weighted_total", &self.total)));
        for (id, row) in rows {
            out.push_str(id);
            for v in row {
                out.push(',');
                out.push_str(&fmt(v));
            }
            out.push('\n');
        }
        out
    }
}

fn now_epoch_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Peak resident set size of this process in KiB, from `/proc/self/status`.
pub fn peak_rss_kib() -> u64 {
    fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .and_then(|l| l.split_whitespace().nth(1))
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0)
}

fn for_each_record(
    path: &Path,
    mut f: impl FnMut(&EventRecord) -> Result<(), ReportError>,
) -> Result<Option<crate::trace::TraceMetadata>, ReportError> {
    if path.is_dir() {
        for r in &scan_directory(path, SCAN_CHUNK_BYTES)?.records {
            f(r)?;
        }
        return Ok(None);
    }
    let mut reader = TraceReader::open(path)?;
    for r in reader.by_ref() {
        f(&r?)?;
    }
    Ok(Some(reader.metadata().clone()))
}

#[derive(Debug, Clone)]
pub struct ProfileRun {
    pub profile: BaselineProfile,
    pub sample_counts: BTreeMap<String, usize>,
}

/// Fits a baseline from benign trace files or scanned directories.
pub fn run_profile(
    inputs: &[PathBuf],
    hierarchy: &HierarchyConfig,
    window_seconds: f64,
    prior: f64,
    frozen_clock: bool,
) -> Result<ProfileRun, ReportError> {
    if inputs.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    hierarchy
        .validate()
        .map_err(|e| ReportError::Config(e.to_string()))?;
    let mut samples = BTreeMap::new();
    for path in inputs {
        let mut records = Vec::new();
        for_each_record(path, |r| {
            records.push(r.clone());
            Ok(())
        })?;
        collect_deviations(hierarchy, window_seconds, &records, &mut samples)?;
    }
    let sample_counts = samples.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let mut profile = fit_baseline(&samples, prior)?;
    profile.created_at = if frozen_clock { 0.0 } else { now_epoch_seconds() };
    profile.provenance = inputs.iter().map(|p| p.display().to_string()).collect();
    Ok(ProfileRun {
        profile,
        sample_counts,
    })
}

#[derive(Debug)]
pub struct InputResult {
    pub row: TraceRow,
    pub outcome: Option<TraceOutcome>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct DetectRun {
    /// Sorted by input path.
    pub inputs: Vec<InputResult>,
    pub metrics: MetricsReport,
    pub heatmap: Heatmap,
}

impl DetectRun {
    pub fn failures(&self) -> usize {
        self.inputs.iter().filter(|i| i.error.is_some()).count()
    }

    /// `(trace, alert)` pairs in input order, then by time.
    pub fn alerts(&self) -> impl Iterator<Item = (&str, &Alert)> {
        self.inputs.iter().flat_map(|i| {
            i.outcome
                .iter()
                .flat_map(|o| o.alerts.iter())
                .map(move |a| (i.row.trace.as_str(), a))
        })
    }
}

fn detect_input(ctx: &DetectionContext, path: &Path) -> Result<(TraceRow, TraceOutcome), ReportError> {
    // The onset lives in the metadata line, which is parsed before any record.
    let onset = if path.is_dir() {
        None
    } else {
        TraceReader::open(path)?.metadata().onset_at
    };
    let mut detector = Detector::new(ctx, onset)?;
    let metadata = for_each_record(path, |r| {
        detector.push(r)?;
        Ok(())
    })?;
    let outcome = detector.finish()?;
    let row = TraceRow {
        trace: path.display().to_string(),
        label: metadata
            .map(|m| m.label.as_str().to_string())
            .unwrap_or_else(|| "unknown".into()),
        verdict: outcome.label.as_str().to_string(),
        confidence: outcome.confidence,
        latency_ms: outcome.latency_ms,
    };
    Ok((row, outcome))
}

/// Runs every input through the detector (in parallel), sorts results by
/// input path and aggregates them.
pub fn run_detect(
    ctx: &DetectionContext,
    inputs: &[PathBuf],
    frozen_clock: bool,
) -> Result<DetectRun, ReportError> {
    if inputs.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let started = Instant::now();
    let mut paths: Vec<&PathBuf> = inputs.iter().collect();
    paths.sort();
    let results: Vec<InputResult> = paths
        .par_iter()
        .map(|p| match detect_input(ctx, p) {
            Ok((row, outcome)) => InputResult {
                row,
                outcome: Some(outcome),
                error: None,
            },
            Err(e) => InputResult {
                row: TraceRow {
                    trace: p.display().to_string(),
                    label: "unknown".into(),
                    verdict: "error".into(),
                    confidence: 0.0,
                    latency_ms: None,
                },
                outcome: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let rows: Vec<TraceRow> = results.iter().map(|r| r.row.clone()).collect();
    let mut metrics = compute_metrics(&rows)?;
    let outcomes: Vec<&TraceOutcome> = results.iter().filter_map(|r| r.outcome.as_ref()).collect();
    let heatmap = Heatmap::build(&ctx.hierarchy, &outcomes)?;
    if !frozen_clock {
        metrics.wall_time_ms = started.elapsed().as_secs_f64() * 1000.0;
        metrics.peak_rss_estimate = peak_rss_kib();
    }
    Ok(DetectRun {
        inputs: results,
        metrics,
        heatmap,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn rows_to_csv(rows: &[TraceRow]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ReportError::Csv {
        path: PathBuf::from("report.csv"),
        reason: e.to_string(),
    };
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Csv {
        path: PathBuf::from("report.csv"),
        reason: e.to_string(),
    })?;
    let mut text = String::from_utf8(bytes).expect("csv output is utf-8");
    if rows.is_empty() {
        text.push_str("trace,label,verdict,confidence,latency_ms\n");
    }
    Ok(text)
}

pub fn read_report_csv(path: &Path) -> Result<Vec<TraceRow>, ReportError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ReportError::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    r.deserialize()
        .collect::<Result<Vec<TraceRow>, _>>()
        .map_err(|e| ReportError::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Writes `report.csv`, `metrics.json` and `heatmap.csv` into `dir`.
pub fn write_reports(run: &DetectRun, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_file(&dir.join("report.csv"), rows_to_csv(&run.metrics.per_trace)?.as_bytes())?;
    let json = serde_json::to_string_pretty(&run.metrics).expect("metrics serialize") + "\n";
    write_file(&dir.join("metrics.json"), json.as_bytes())?;
    write_file(&dir.join("heatmap.csv"), run.heatmap.to_csv().as_bytes())
}

/// Single-line alert record for standard output.
pub fn alert_line(trace: &str, alert: &Alert) -> String {
    #[derive(Serialize)]
    struct Line<'a> {
        trace: &'a str,
        #[serde(flatten)]
        alert: &'a Alert,
    }
    serde_json::to_string(&Line { trace, alert }).expect("alert serializes")
}
