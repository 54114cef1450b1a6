//! Trace files: line-delimited JSON event records carrying payload byte
//! histograms, never payload bytes.
//!
//! Line 1 holds the metadata object; each further line holds one
//! [`EventRecord`]. Timestamps are written as decimal seconds with at least
//! three fractional digits and read back bit-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;
use walkdir::WalkDir;

use crate::entropy::ByteHistogram;
use crate::hierarchy::LevelKind;
use crate::simulate::ScenarioSpec;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Write,
    Read,
    Rename,
    Delete,
    NetTx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLabel {
    Benign,
    Ransomware,
}

impl TraceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceLabel::Benign => "benign",
            TraceLabel::Ransomware => "ransomware",
        }
    }
}

/// One observed operation. `histogram.total() == bytes` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub timestamp: f64,
    pub source_path: String,
    pub level_hint: Option<LevelKind>,
    pub op: Op,
    pub bytes: u64,
    pub histogram: ByteHistogram,
}

impl EventRecord {
    pub fn new(
        timestamp: f64,
        source_path: impl Into<String>,
        level_hint: Option<LevelKind>,
        op: Op,
        histogram: ByteHistogram,
    ) -> Self {
        Self {
            timestamp,
            source_path: source_path.into(),
            level_hint,
            op,
            bytes: histogram.total(),
            histogram,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.timestamp.is_finite() || self.timestamp < 0.0 {
            return Err(format!("timestamp {} is not a finite non-negative value", self.timestamp));
        }
        self.histogram.check().map_err(|e| e.to_string())?;
        if self.histogram.total() != self.bytes {
            return Err(format!(
                "histogram total {} does not match bytes {}",
                self.histogram.total(),
                self.bytes
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    pub seed: u64,
    #[serde(serialize_with = "ser_seconds")]
    pub created_at: f64,
    pub label: TraceLabel,
    #[serde(
        default,
        serialize_with = "ser_opt_seconds",
        skip_serializing_if = "Option::is_none"
    )]
    pub onset_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub metadata: TraceMetadata,
    pub records: Vec<EventRecord>,
}

impl Trace {
    /// Records sorted by timestamp, each record consistent, and a ransomware
    /// label backed by an onset.
    pub fn validate(&self) -> Result<(), TraceError> {
        let m = &self.metadata;
        if m.label == TraceLabel::Ransomware && m.onset_at.is_none() {
            return Err(TraceError::InvalidTrace("ransomware label without onset_at".into()));
        }
        if let Some(t) = m.onset_at {
            if !t.is_finite() || t < 0.0 {
                return Err(TraceError::InvalidTrace(format!("onset_at {t} out of range")));
            }
        }
        if !m.created_at.is_finite() {
            return Err(TraceError::InvalidTrace("created_at is not finite".into()));
        }
        let mut prev = 0.0f64;
        for (i, r) in self.records.iter().enumerate() {
            r.validate()
                .map_err(|reason| TraceError::InvalidTrace(format!("record {i}: {reason}")))?;
            if r.timestamp < prev {
                return Err(TraceError::InvalidTrace(format!("record {i} is out of order")));
            }
            prev = r.timestamp;
        }
        Ok(())
    }
}

/// Shortest round-trip decimal form, padded to at least three fractional digits.
pub fn format_seconds(t: f64) -> String {
    let mut s = format!("{t}");
    match s.find('.') {
        Some(dot) => {
            let frac = s.len() - dot - 1;
            for _ in frac..3 {
                s.push('0');
            }
        }
        None => s.push_str(".000"),
    }
    s
}

fn ser_seconds<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !t.is_finite() {
        return Err(S::Error::custom("non-finite seconds value"));
    }
    RawValue::from_string(format_seconds(*t))
        .map_err(S::Error::custom)?
        .serialize(s)
}

fn ser_opt_seconds<S: Serializer>(t: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match t {
        Some(t) => ser_seconds(t, s),
        None => s.serialize_none(),
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    #[serde(serialize_with = "ser_seconds")]
    timestamp: f64,
    source_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level_hint: Option<LevelKind>,
    op: Op,
    bytes: u64,
    #[serde(deserialize_with = "de_histogram")]
    histogram: BTreeMap<u8, u64>,
}

fn de_histogram<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u8, u64>, D::Error> {
    let map = BTreeMap::<u8, u64>::deserialize(d)?;
    if map.values().any(|&c| c == 0) {
        return Err(D::Error::custom("histogram lists a zero count"));
    }
    Ok(map)
}

impl From<&EventRecord> for RecordLine {
    fn from(r: &EventRecord) -> Self {
        RecordLine {
            timestamp: r.timestamp,
            source_path: r.source_path.clone(),
            level_hint: r.level_hint,
            op: r.op,
            bytes: r.bytes,
            histogram: r.histogram.nonzero().collect(),
        }
    }
}

impl RecordLine {
    fn into_record(self) -> Result<EventRecord, String> {
        let mut hist = ByteHistogram::new();
        for (b, c) in self.histogram {
            hist.add(b, c);
        }
        let record = EventRecord {
            timestamp: self.timestamp,
            source_path: self.source_path,
            level_hint: self.level_hint,
            op: self.op,
            bytes: self.bytes,
            histogram: hist,
        };
        record.validate()?;
        Ok(record)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TraceError + '_ {
    move |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes a trace to any writer.
pub fn write_trace_to<W: Write>(trace: &Trace, mut out: W) -> Result<(), TraceError> {
    trace.validate()?;
    let to_io = |e: serde_json::Error| TraceError::Io {
        path: PathBuf::new(),
        source: io::Error::other(e),
    };
    serde_json::to_writer(&mut out, &trace.metadata).map_err(to_io)?;
    out.write_all(b"\n").map_err(io_err(Path::new("")))?;
    for r in &trace.records {
        serde_json::to_writer(&mut out, &RecordLine::from(r)).map_err(to_io)?;
        out.write_all(b"\n").map_err(io_err(Path::new("")))?;
    }
    out.flush().map_err(io_err(Path::new("")))
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<(), TraceError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_trace_to(trace, BufWriter::new(file)).map_err(|e| match e {
        TraceError::Io { source, .. } => TraceError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Streams records from a trace without holding the whole file in memory.
pub struct TraceReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    last_timestamp: f64,
    metadata: TraceMetadata,
    path: PathBuf,
}

impl TraceReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, TraceError> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = TraceReader::new(BufReader::new(file))?;
        reader.path = path.to_path_buf();
        Ok(reader)
    }
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(input: R) -> Result<Self, TraceError> {
        let mut lines = input.lines();
        let mut line_no = 0;
        let first = loop {
            line_no += 1;
            match lines.next() {
                None => {
                    return Err(TraceError::MalformedRecord {
                        line: line_no,
                        reason: "missing metadata line".into(),
                    })
                }
                Some(Err(e)) => return Err(io_err(Path::new(""))(e)),
                Some(Ok(l)) if l.trim().is_empty() => continue,
                Some(Ok(l)) => break l,
            }
        };
        let metadata: TraceMetadata =
            serde_json::from_str(&first).map_err(|e| TraceError::MalformedRecord {
                line: line_no,
                reason: format!("metadata: {e}"),
            })?;
        if metadata.label == TraceLabel::Ransomware && metadata.onset_at.is_none() {
            return Err(TraceError::MalformedRecord {
                line: line_no,
                reason: "ransomware label without onset_at".into(),
            });
        }
        Ok(Self {
            lines,
            line_no,
            last_timestamp: 0.0,
            metadata,
            path: PathBuf::new(),
        })
    }

    pub fn metadata(&self) -> &TraceMetadata {
        &self.metadata
    }

    fn parse(&mut self, line: &str) -> Result<EventRecord, TraceError> {
        let malformed = |reason: String| TraceError::MalformedRecord {
            line: self.line_no,
            reason,
        };
        let raw: RecordLine = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let record = raw.into_record().map_err(malformed)?;
        if record.timestamp < self.last_timestamp {
            return Err(malformed(format!(
                "timestamp {} precedes previous {}",
                record.timestamp, self.last_timestamp
            )));
        }
        self.last_timestamp = record.timestamp;
        Ok(record)
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<EventRecord, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(io_err(&self.path)(e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&line));
        }
    }
}

pub fn read_trace_from<R: Read>(input: R) -> Result<Trace, TraceError> {
    let mut reader = TraceReader::new(BufReader::new(input))?;
    let records = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(Trace {
        metadata: reader.metadata,
        records,
    })
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceError> {
    let mut reader = TraceReader::open(path)?;
    let records = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(Trace {
        metadata: reader.metadata,
        records,
    })
}

/// Result of a directory scan: the records plus files that could not be read.
#[derive(Debug, Default)]
pub struct ScanOutcome {
    pub records: Vec<EventRecord>,
    pub skipped: Vec<(PathBuf, String)>,
}

/// One `read` record per `chunk_bytes` chunk of every regular file under
/// `root`, in lexicographic path order. Record `k` is stamped `k` seconds.
pub fn scan_directory(root: &Path, chunk_bytes: usize) -> Result<ScanOutcome, TraceError> {
    if chunk_bytes == 0 {
        return Err(TraceError::InvalidSpec("chunk_bytes must be positive".into()));
    }
    std::fs::metadata(root).map_err(io_err(root))?;
    let mut outcome = ScanOutcome::default();
    let walker = WalkDir::new(root).sort_by_file_name().follow_links(false);
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
                outcome.skipped.push((path, e.to_string()));
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        if let Err(e) = scan_file(entry.path(), chunk_bytes, &mut outcome.records) {
            outcome.skipped.push((entry.path().to_path_buf(), e.to_string()));
        }
    }
    Ok(outcome)
}

fn scan_file(path: &Path, chunk_bytes: usize, out: &mut Vec<EventRecord>) -> io::Result<()> {
    let mut file = File::open(path)?;
    let mut buf = vec![0u8; chunk_bytes];
    let source = path.to_string_lossy().into_owned();
    let mut staged = Vec::new();
    loop {
        let n = read_full(&mut file, &mut buf)?;
        if n == 0 {
            break;
        }
        let idx = (out.len() + staged.len()) as f64;
        staged.push(EventRecord::new(
            idx,
            source.clone(),
            None,
            Op::Read,
            ByteHistogram::from_bytes(&buf[..n]),
        ));
        if n < chunk_bytes {
            break;
        }
    }
    // A file that fails midway contributes nothing.
    out.extend(staged);
    Ok(())
}

fn read_full(file: &mut File, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match file.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
