//! Deterministic synthetic workloads: benign editing, a compressor job and an
//! encryptor, all over the same background of user files, logs and network
//! endpoints.
//!
//! Payloads are never materialised. Each record carries a histogram drawn from
//! a geometric rank distribution `p_i ∝ exp(-β i)` whose `β` is chosen so the
//! histogram hits a target entropy.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::entropy::{ByteHistogram, MAX_ENTROPY};
use crate::hierarchy::LevelKind;
use crate::trace::{EventRecord, Op, Trace, TraceError, TraceLabel, TraceMetadata};

pub const DEFAULT_DURATION: f64 = 100.0;
pub const DEFAULT_FILE_COUNT: usize = 48;
pub const DEFAULT_RAMP: (f64, f64) = (2.1, 7.8);
/// Onset of the encryptor and of the compressor job, as a fraction of duration.
pub const ONSET_FRACTION: f64 = 0.1;

const CHUNK_BYTES: u64 = 64 * 1024;
const CHUNK_OFFSETS: [f64; 4] = [0.125, 0.375, 0.625, 0.875];
const FILE_ENTROPY: (f64, f64) = (4.0, 5.0);
const EDIT_RATE: f64 = 3.0;
const EDIT_JITTER: f64 = 0.05;
const LOG_PATHS: [&str; 3] = ["/var/log/syslog", "/var/log/auth.log", "/var/log/daemon.log"];
const LOG_RATE: f64 = 0.5;
const LOG_ENTROPY: (f64, f64) = (4.6, 5.2);
const NET_ENDPOINTS: [&str; 2] = ["net://10.0.0.12:443", "net://10.0.0.40:8080"];
const NET_RATE: f64 = 1.0;
const NET_ENTROPY: (f64, f64) = (4.9, 5.4);
/// Background traffic never exceeds this; ciphertext sits far above it.
const BACKGROUND_CEILING: f64 = 5.5;
const COMPRESSED_ENTROPY: (f64, f64) = (7.5, 7.95);
const COMPRESSED_JITTER: f64 = 0.01;
/// Midpoint and width of the encryptor's logistic ramp, as fractions of duration.
const RAMP_MIDPOINT: f64 = 0.15;
const RAMP_WIDTH: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    BenignEdit,
    Compressor,
    Ransomware,
}

impl ScenarioKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "benign_edit" => Some(Self::BenignEdit),
            "compressor" => Some(Self::Compressor),
            "ransomware" => Some(Self::Ransomware),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BenignEdit => "benign_edit",
            Self::Compressor => "compressor",
            Self::Ransomware => "ransomware",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub duration: f64,
    pub file_count: usize,
    pub target_dirs: Vec<String>,
    /// `(start, end)` entropy of the encryptor ramp, bits/byte.
    pub ramp: (f64, f64),
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            duration: DEFAULT_DURATION,
            file_count: DEFAULT_FILE_COUNT,
            target_dirs: [
                "/home/user/documents",
                "/home/user/pictures",
                "/home/user/downloads",
                "/home/user/desktop",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            ramp: DEFAULT_RAMP,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::InvalidSpec(m));
        if !(self.duration.is_finite() && self.duration >= 1.0) {
            return bad(format!("duration {} must be at least 1 second", self.duration));
        }
        if self.file_count == 0 {
            return bad("file_count must be positive".into());
        }
        if self.target_dirs.is_empty() || self.target_dirs.iter().any(|d| d.is_empty()) {
            return bad("target_dirs must be non-empty paths".into());
        }
        let (s, e) = self.ramp;
        if !(0.0 <= s && s <= e && e <= MAX_ENTROPY) {
            return bad(format!("ramp ({s}, {e}) must satisfy 0 <= start <= end <= 8"));
        }
        Ok(())
    }

    pub fn onset_at(&self) -> f64 {
        ONSET_FRACTION * self.duration
    }

    /// Encryptor payload entropy at time `t`: a logistic curve rescaled to hit
    /// `ramp.0` exactly at onset and `ramp.1` exactly at the end of the trace.
    pub fn ramp_entropy(&self, t: f64) -> f64 {
        let onset = self.onset_at();
        let mid = onset + RAMP_MIDPOINT * self.duration;
        let width = RAMP_WIDTH * self.duration;
        let sig = |x: f64| 1.0 / (1.0 + (-(x - mid) / width).exp());
        let (s0, s1) = (sig(onset), sig(self.duration));
        let frac = ((sig(t) - s0) / (s1 - s0)).clamp(0.0, 1.0);
        self.ramp.0 + (self.ramp.1 - self.ramp.0) * frac
    }
}

const BETA_STEP: f64 = 0.004;
const BETA_POINTS: usize = 10_000;

fn rank_entropy(beta: f64) -> f64 {
    let weights: Vec<f64> = (0..256).map(|i| (-beta * i as f64).exp()).collect();
    let z: f64 = weights.iter().sum();
    -weights
        .iter()
        .map(|&w| w / z)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

/// `H(β)` on a uniform grid; strictly decreasing from 8.
fn entropy_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| (0..BETA_POINTS).map(|k| rank_entropy(k as f64 * BETA_STEP)).collect())
}

/// `β` whose rank distribution has entropy `target`, or `None` for a point mass.
fn beta_for(target: f64) -> Option<f64> {
    let table = entropy_table();
    if target >= table[0] {
        return Some(0.0);
    }
    if target <= table[BETA_POINTS - 1] {
        return None;
    }
    // First index with H below target; table is decreasing.
    let hi = table.partition_point(|&h| h >= target);
    let (h0, h1) = (table[hi - 1], table[hi]);
    let frac = (h0 - target) / (h0 - h1);
    Some((hi as f64 - 1.0 + frac) * BETA_STEP)
}

/// Histogram of `bytes` bytes with entropy close to `target`. Counts are the
/// largest-remainder rounding of the rank distribution; rank `i` maps to byte
/// `offset + i`.
pub fn synth_histogram(target: f64, bytes: u64, offset: u8) -> ByteHistogram {
    let mut hist = ByteHistogram::new();
    if bytes == 0 {
        return hist;
    }
    let Some(beta) = beta_for(target.clamp(0.0, MAX_ENTROPY)) else {
        hist.add(offset, bytes);
        return hist;
    };
    let weights: Vec<f64> = (0..256).map(|i| (-beta * i as f64).exp()).collect();
    let z: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / z * bytes as f64).collect();
    let mut counts: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..256).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take((bytes - assigned) as usize) {
        counts[i] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            hist.add(offset.wrapping_add(i as u8), c);
        }
    }
    hist
}

struct Stream {
    path: String,
    hint: Option<LevelKind>,
    style: f64,
    offset: u8,
}

struct Builder {
    rng: ChaCha8Rng,
    records: Vec<EventRecord>,
}

impl Builder {
    fn emit(&mut self, t: f64, s: &Stream, op: Op, entropy: f64, bytes: u64) {
        let hist = synth_histogram(entropy, bytes, s.offset);
        self.records
            .push(EventRecord::new(t, s.path.clone(), s.hint, op, hist));
    }

    fn jitter(&mut self, sd: f64) -> f64 {
        Normal::new(0.0, sd).expect("positive sd").sample(&mut self.rng)
    }

    /// Arrival times of a Poisson process of `rate` on `[from, to)`.
    fn arrivals(&mut self, rate: f64, from: f64, to: f64) -> Vec<f64> {
        let gap = Exp::new(rate).expect("positive rate");
        let mut out = Vec::new();
        let mut t = from + gap.sample(&mut self.rng);
        while t < to {
            out.push(t);
            t += gap.sample(&mut self.rng);
        }
        out
    }

    /// Steady stream of writes around a per-stream entropy style.
    fn steady(&mut self, s: &Stream, rate: f64, to: f64, op: Op, bytes: (u64, u64), sd: f64) {
        for t in self.arrivals(rate, 0.0, to) {
            let h = (s.style + self.jitter(sd)).clamp(FILE_ENTROPY.0, BACKGROUND_CEILING);
            let n = self.rng.random_range(bytes.0..=bytes.1);
            self.emit(t, s, op, h, n);
        }
    }
}

/// Generates one trace; a pure function of `spec`.
pub fn simulate_scenario(spec: &ScenarioSpec) -> Result<Trace, TraceError> {
    spec.validate()?;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        records: Vec::new(),
    };
    let duration = spec.duration;
    let onset = spec.onset_at();
    let exts = ["txt", "docx", "md", "csv"];

    let files: Vec<Stream> = (0..spec.file_count)
        .map(|i| Stream {
            path: format!(
                "{}/file_{i:03}.{}",
                spec.target_dirs[i % spec.target_dirs.len()].trim_end_matches('/'),
                exts[i % exts.len()]
            ),
            hint: Some(LevelKind::Filesystem),
            style: b.rng.random_range(FILE_ENTROPY.0..FILE_ENTROPY.1),
            offset: b.rng.random(),
        })
        .collect();
    let logs: Vec<Stream> = LOG_PATHS
        .iter()
        .map(|p| Stream {
            path: p.to_string(),
            hint: Some(LevelKind::Filesystem),
            style: b.rng.random_range(LOG_ENTROPY.0..LOG_ENTROPY.1),
            offset: b.rng.random(),
        })
        .collect();
    let nets: Vec<Stream> = NET_ENDPOINTS
        .iter()
        .map(|p| Stream {
            path: p.to_string(),
            hint: Some(LevelKind::Network),
            style: b.rng.random_range(NET_ENTROPY.0..NET_ENTROPY.1),
            offset: b.rng.random(),
        })
        .collect();

    // Inventory read of every file inside the first second.
    let inventory_span = duration.min(1.0) * 0.9;
    for (i, f) in files.iter().enumerate() {
        let t = 0.01 + inventory_span * i as f64 / spec.file_count as f64;
        let n = b.rng.random_range(16 * 1024..=128 * 1024);
        b.emit(t, f, Op::Read, f.style, n);
    }

    let edits_until = match spec.kind {
        ScenarioKind::Ransomware => onset,
        _ => duration,
    };
    for t in b.arrivals(EDIT_RATE, duration.min(1.0), edits_until) {
        let f = &files[b.rng.random_range(0..files.len())];
        let h = (f.style + b.jitter(EDIT_JITTER)).clamp(FILE_ENTROPY.0, FILE_ENTROPY.1);
        let n = b.rng.random_range(2048..=16 * 1024);
        b.emit(t, f, Op::Write, h, n);
    }
    for s in &logs {
        b.steady(s, LOG_RATE, duration, Op::Write, (1024, 4096), EDIT_JITTER);
    }
    for s in &nets {
        b.steady(s, NET_RATE, duration, Op::NetTx, (1024, 4096), EDIT_JITTER);
    }

    let (label, onset_at) = match spec.kind {
        ScenarioKind::BenignEdit => (TraceLabel::Benign, None),
        ScenarioKind::Compressor => {
            compressor(&mut b, spec, &files);
            (TraceLabel::Benign, None)
        }
        ScenarioKind::Ransomware => {
            encryptor(&mut b, spec, &files);
            (TraceLabel::Ransomware, Some(onset))
        }
    };

    let mut records = b.records;
    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(Trace {
        metadata: TraceMetadata {
            scenario: Some(spec.clone()),
            seed: spec.seed,
            created_at: 0.0,
            label,
            onset_at,
        },
        records,
    })
}

/// One archive written as a low-entropy header followed by compressed chunks,
/// while reading one input file per second.
fn compressor(b: &mut Builder, spec: &ScenarioSpec, files: &[Stream]) {
    let start = spec.onset_at();
    let span = (spec.duration - start) * b.rng.random_range(0.5..0.9);
    let out = Stream {
        path: format!("{}/backup.tar.zst", spec.target_dirs[0].trim_end_matches('/')),
        hint: Some(LevelKind::Filesystem),
        style: b.rng.random_range(COMPRESSED_ENTROPY.0..COMPRESSED_ENTROPY.1),
        offset: b.rng.random(),
    };
    let header = b.rng.random_range(1.0..2.0);
    b.emit(start + 0.05, &out, Op::Write, header, 512);
    let slots = span.floor() as usize;
    for slot in 0..slots {
        let base = start + slot as f64;
        let input = &files[b.rng.random_range(0..files.len())];
        b.emit(base + 0.5, input, Op::Read, input.style, CHUNK_BYTES);
        for off in CHUNK_OFFSETS {
            let h = (out.style + b.jitter(COMPRESSED_JITTER))
                .clamp(COMPRESSED_ENTROPY.0, COMPRESSED_ENTROPY.1);
            b.emit(base + off, &out, Op::Write, h, CHUNK_BYTES);
        }
    }
}

/// Rewrites files in place, whole one-second slots per file, with payload
/// entropy following the scenario ramp; each file is renamed after its last chunk.
fn encryptor(b: &mut Builder, spec: &ScenarioSpec, files: &[Stream]) {
    let onset = spec.onset_at();
    let slots = (spec.duration - onset).floor() as usize;
    let mut order: Vec<usize> = (0..files.len()).collect();
    order.shuffle(&mut b.rng);
    let used = order.len().min(slots);
    let (base, extra) = slots.checked_div(used).map_or((0, 0), |b| (b, slots % used));
    let mut slot = 0usize;
    for (k, &fi) in order.iter().take(used).enumerate() {
        let f = &files[fi];
        let n = base + usize::from(k < extra);
        let mut last = onset;
        for _ in 0..n {
            let t0 = onset + slot as f64;
            for off in CHUNK_OFFSETS {
                let t = t0 + off;
                b.emit(t, f, Op::Write, spec.ramp_entropy(t), CHUNK_BYTES);
                last = t;
            }
            slot += 1;
        }
        b.records.push(EventRecord::new(
            last + 0.05,
            f.path.clone(),
            f.hint,
            Op::Rename,
            ByteHistogram::new(),
        ));
    }
}
