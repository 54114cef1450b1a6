//! Streaming evaluation of a record stream.
//!
//! Records are grouped into fixed windows. Within a window every source
//! (file path or endpoint) contributes one observation: the entropy of its
//! merged payload histograms. A source's deviation is the absolute entropy
//! change since its previous observation. Levels are scored once per window
//! in which they have observations.

use std::collections::{BTreeMap, VecDeque};

use crate::baseline::{deviation, empirical_distribution, BaselineProfile};
use crate::clustering::{agglomerate, outliers, FeatureVector};
use crate::detector::{
    convexity_signal, fuse_and_decide, likelihood_ratio, posterior, Alert, DetectorConfig,
    DetectorError, DeviationScore, Label, Verdict, VerdictLatch,
};
use crate::entropy::{
    kl_divergence, second_difference, BinnedDistribution, ByteHistogram, WindowConfig, DEFAULT_BINS,
    MAX_ENTROPY, SPACING_TOLERANCE,
};
use crate::hierarchy::{level_entropy, HierarchyConfig, LevelState, Router};
use crate::simulate::{simulate_scenario, ScenarioKind, ScenarioSpec};
use crate::trace::{EventRecord, Trace};

/// Ransomware traces simulated to estimate the attack-conditional density.
pub const ATTACK_MODEL_TRACES: u64 = 16;
/// First seed of the attack-model traces; kept apart from corpus seeds.
pub const ATTACK_MODEL_SEED: u64 = 0xA77A_0000;
/// Quantile passed to the outlier cut; only the scores feed the fusion.
pub const OUTLIER_QUANTILE: f64 = 0.9;
const LEVEL_SERIES_CAPACITY: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub source: String,
    pub level: usize,
    pub entropy: f64,
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub index: i64,
    pub start: f64,
    pub end: f64,
    /// Sorted by source.
    pub observations: Vec<Observation>,
}

/// Turns a time-ordered record stream into per-window observations.
pub struct Windower {
    router: Router,
    level_ids: Vec<String>,
    window_seconds: f64,
    current: Option<i64>,
    pending: BTreeMap<String, (usize, ByteHistogram)>,
    last_entropy: BTreeMap<String, f64>,
}

impl Windower {
    pub fn new(hierarchy: &HierarchyConfig, window_seconds: f64) -> Result<Self, DetectorError> {
        Ok(Self {
            router: hierarchy.router()?,
            level_ids: hierarchy.level_ids().map(String::from).collect(),
            window_seconds,
            current: None,
            pending: BTreeMap::new(),
            last_entropy: BTreeMap::new(),
        })
    }

    pub fn level_ids(&self) -> &[String] {
        &self.level_ids
    }

    /// Adds one record; returns the previous window if this record closes it.
    pub fn push(&mut self, record: &EventRecord) -> Result<Option<WindowBatch>, DetectorError> {
        let idx = (record.timestamp / self.window_seconds).floor() as i64;
        let closed = match self.current {
            Some(cur) if idx > cur => self.flush(),
            _ => None,
        };
        if self.current.is_none_or(|cur| idx > cur) {
            self.current = Some(idx);
        }
        if record.bytes > 0 {
            let level = self.route(record);
            let entry = self
                .pending
                .entry(record.source_path.clone())
                .or_insert_with(|| (level, ByteHistogram::new()));
            entry.1.merge(&record.histogram)?;
        }
        Ok(closed)
    }

    pub fn finish(&mut self) -> Option<WindowBatch> {
        self.flush()
    }

    fn route(&self, record: &EventRecord) -> usize {
        let id = self.router.route(&record.source_path, record.level_hint);
        self.level_ids
            .iter()
            .position(|l| l == id)
            .expect("router yields configured levels")
    }

    fn flush(&mut self) -> Option<WindowBatch> {
        let index = self.current?;
        if self.pending.is_empty() {
            return None;
        }
        let observations = std::mem::take(&mut self.pending)
            .into_iter()
            .map(|(source, (level, hist))| {
                let entropy = hist.entropy();
                let deviation = self
                    .last_entropy
                    .insert(source.clone(), entropy)
                    .map(|prev| deviation(entropy - prev));
                Observation {
                    source,
                    level,
                    entropy,
                    deviation,
                }
            })
            .collect();
        Some(WindowBatch {
            index,
            start: index as f64 * self.window_seconds,
            end: (index + 1) as f64 * self.window_seconds,
            observations,
        })
    }
}

/// All windows of a record stream.
pub fn windows<'a>(
    hierarchy: &HierarchyConfig,
    window_seconds: f64,
    records: impl IntoIterator<Item = &'a EventRecord>,
) -> Result<Vec<WindowBatch>, DetectorError> {
    let mut w = Windower::new(hierarchy, window_seconds)?;
    let mut out = Vec::new();
    for r in records {
        out.extend(w.push(r)?);
    }
    out.extend(w.finish());
    Ok(out)
}

/// Per-level deviation samples of one trace, for baseline fitting.
pub fn collect_deviations<'a>(
    hierarchy: &HierarchyConfig,
    window_seconds: f64,
    records: impl IntoIterator<Item = &'a EventRecord>,
    into: &mut BTreeMap<String, Vec<f64>>,
) -> Result<(), DetectorError> {
    let ids: Vec<String> = hierarchy.level_ids().map(String::from).collect();
    for id in &ids {
        into.entry(id.clone()).or_default();
    }
    for batch in windows(hierarchy, window_seconds, records)? {
        for o in batch.observations {
            if let Some(d) = o.deviation {
                into.get_mut(&ids[o.level]).expect("level seeded").push(d);
            }
        }
    }
    Ok(())
}

/// Attack-conditional deviation density: post-onset deviations of the files
/// an encryptor rewrites, pooled over `traces` simulated runs.
pub fn synthesize_attack_model(
    hierarchy: &HierarchyConfig,
    window_seconds: f64,
    traces: u64,
    seed: u64,
) -> Result<BinnedDistribution, DetectorError> {
    let mut pool = Vec::new();
    for i in 0..traces {
        let spec = ScenarioSpec::new(ScenarioKind::Ransomware, seed.wrapping_add(i));
        let trace = simulate_scenario(&spec).expect("default scenario is valid");
        let onset = spec.onset_at();
        let prefixes: Vec<String> = spec
            .target_dirs
            .iter()
            .map(|d| format!("{}/", d.trim_end_matches('/')))
            .collect();
        for batch in windows(hierarchy, window_seconds, &trace.records)? {
            if batch.start < onset {
                continue;
            }
            for o in batch.observations {
                if prefixes.iter().any(|p| o.source.starts_with(p)) {
                    pool.extend(o.deviation);
                }
            }
        }
    }
    Ok(empirical_distribution(&pool)?.smoothed())
}

/// Everything a detection run needs besides the records.
#[derive(Debug, Clone)]
pub struct DetectionContext {
    pub hierarchy: HierarchyConfig,
    pub config: DetectorConfig,
    pub baseline: BaselineProfile,
    pub attack_model: BinnedDistribution,
}

impl DetectionContext {
    pub fn new(
        hierarchy: HierarchyConfig,
        config: DetectorConfig,
        baseline: BaselineProfile,
        attack_model: BinnedDistribution,
    ) -> Result<Self, DetectorError> {
        hierarchy.validate()?;
        config.validate()?;
        baseline.validate()?;
        for id in hierarchy.level_ids() {
            let q = &baseline
                .level(id)
                .ok_or_else(|| DetectorError::MissingLevel(id.to_string()))?
                .distribution;
            q.require_same_shape(&attack_model)?;
        }
        Ok(Self {
            hierarchy,
            config,
            baseline,
            attack_model,
        })
    }

    /// Builds the context with an attack model synthesized from the default
    /// encryptor scenario.
    pub fn with_synthetic_attack_model(
        hierarchy: HierarchyConfig,
        config: DetectorConfig,
        baseline: BaselineProfile,
    ) -> Result<Self, DetectorError> {
        let attack = synthesize_attack_model(
            &hierarchy,
            config.window_seconds,
            ATTACK_MODEL_TRACES,
            ATTACK_MODEL_SEED,
        )?;
        Self::new(hierarchy, config, baseline, attack)
    }
}

#[derive(Debug, Clone)]
struct SourceState {
    level: usize,
    count: u64,
    entropy_sum: f64,
    max_delta: f64,
    recent: VecDeque<(f64, f64)>,
    max_d2: f64,
    deviations: [u64; DEFAULT_BINS],
    deviation_total: u64,
}

impl SourceState {
    fn new(level: usize) -> Self {
        Self {
            level,
            count: 0,
            entropy_sum: 0.0,
            max_delta: 0.0,
            recent: VecDeque::with_capacity(3),
            max_d2: 0.0,
            deviations: [0; DEFAULT_BINS],
            deviation_total: 0,
        }
    }

    fn observe(&mut self, t: f64, o: &Observation) {
        self.count += 1;
        self.entropy_sum += o.entropy;
        if let Some(d) = o.deviation {
            self.max_delta = self.max_delta.max(d);
            self.deviations[crate::entropy::bin_index(0.0, MAX_ENTROPY, DEFAULT_BINS, d)] += 1;
            self.deviation_total += 1;
        }
        if self.recent.len() == 3 {
            self.recent.pop_front();
        }
        self.recent.push_back((t, o.entropy));
        if let [(t0, h0), (t1, h1), (t2, h2)] = self.recent.make_contiguous() {
            let (a, b) = (*t1 - *t0, *t2 - *t1);
            if (a - b).abs() <= SPACING_TOLERANCE * a.max(b) {
                let dt = 0.5 * (a + b);
                self.max_d2 = self.max_d2.max((*h2 - 2.0 * *h1 + *h0) / (dt * dt));
            }
        }
    }

    fn features(&self, q: &BinnedDistribution) -> Result<[f64; 4], DetectorError> {
        let kl = if self.deviation_total == 0 {
            0.0
        } else {
            let n = self.deviation_total as f64;
            let p = BinnedDistribution::new(
                0.0,
                MAX_ENTROPY,
                self.deviations.iter().map(|&c| c as f64 / n).collect(),
            )?;
            kl_divergence(&p, q)?
        };
        Ok([
            self.entropy_sum / self.count as f64,
            self.max_delta,
            self.max_d2,
            kl,
        ])
    }
}

struct LevelRuntime {
    state: LevelState,
    q: BinnedDistribution,
    recent: VecDeque<(i64, f64)>,
    latch: VerdictLatch,
}

/// Entropy of each level in one window, `None` where the level was idle.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelinePoint {
    pub start: f64,
    pub levels: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceOutcome {
    pub label: Label,
    pub confidence: f64,
    /// One per level, in hierarchy order.
    pub verdicts: Vec<Verdict>,
    pub alerts: Vec<Alert>,
    /// Latency of the first alert, when it follows a known onset.
    pub latency_ms: Option<f64>,
    pub level_ids: Vec<String>,
    pub timeline: Vec<TimelinePoint>,
    /// Every level score, in evaluation order.
    pub scores: Vec<(String, DeviationScore, bool)>,
    pub records: usize,
}

/// Single-trace streaming detector.
pub struct Detector<'a> {
    ctx: &'a DetectionContext,
    windower: Windower,
    onset_at: Option<f64>,
    sources: BTreeMap<String, SourceState>,
    levels: Vec<LevelRuntime>,
    alerts: Vec<Alert>,
    timeline: Vec<TimelinePoint>,
    scores: Vec<(String, DeviationScore, bool)>,
    records: usize,
}

impl<'a> Detector<'a> {
    pub fn new(ctx: &'a DetectionContext, onset_at: Option<f64>) -> Result<Self, DetectorError> {
        let windower = Windower::new(&ctx.hierarchy, ctx.config.window_seconds)?;
        let window = WindowConfig::new(LEVEL_SERIES_CAPACITY, ctx.config.window_seconds)?;
        let levels = windower
            .level_ids()
            .iter()
            .map(|id| {
                let q = ctx
                    .baseline
                    .level(id)
                    .ok_or_else(|| DetectorError::MissingLevel(id.clone()))?
                    .distribution
                    .clone();
                Ok(LevelRuntime {
                    state: LevelState::new(id, window)?,
                    q,
                    recent: VecDeque::new(),
                    latch: VerdictLatch::default(),
                })
            })
            .collect::<Result<Vec<_>, DetectorError>>()?;
        Ok(Self {
            ctx,
            windower,
            onset_at,
            sources: BTreeMap::new(),
            levels,
            alerts: Vec::new(),
            timeline: Vec::new(),
            scores: Vec::new(),
            records: 0,
        })
    }

    /// Feeds one record; returns alerts raised by any window it closes.
    pub fn push(&mut self, record: &EventRecord) -> Result<Vec<Alert>, DetectorError> {
        self.records += 1;
        match self.windower.push(record)? {
            Some(batch) => self.process(batch),
            None => Ok(Vec::new()),
        }
    }

    pub fn finish(mut self) -> Result<TraceOutcome, DetectorError> {
        if let Some(batch) = self.windower.finish() {
            self.process(batch)?;
        }
        let level_ids: Vec<String> = self.windower.level_ids().to_vec();
        let verdicts: Vec<Verdict> = self
            .levels
            .iter()
            .zip(&level_ids)
            .map(|(l, id)| {
                let mut v = l.latch.current().cloned().unwrap_or(Verdict {
                    source_id: id.clone(),
                    label: Label::Benign,
                    confidence: 0.0,
                });
                v.source_id = id.clone();
                v
            })
            .collect();
        let latched: Vec<&Verdict> = verdicts.iter().filter(|v| v.label == Label::Ransomware).collect();
        let (label, confidence) = if latched.is_empty() {
            (Label::Benign, verdicts.iter().map(|v| v.confidence).fold(0.0, f64::max))
        } else {
            (Label::Ransomware, latched.iter().map(|v| v.confidence).fold(0.0, f64::max))
        };
        let latency_ms = self.alerts.first().and_then(|a| a.latency_ms);
        Ok(TraceOutcome {
            label,
            confidence,
            verdicts,
            alerts: self.alerts,
            latency_ms,
            level_ids,
            timeline: self.timeline,
            scores: self.scores,
            records: self.records,
        })
    }

    fn process(&mut self, batch: WindowBatch) -> Result<Vec<Alert>, DetectorError> {
        let n_levels = self.levels.len();
        let mut members: Vec<Vec<&Observation>> = vec![Vec::new(); n_levels];
        for o in &batch.observations {
            self.sources
                .entry(o.source.clone())
                .or_insert_with(|| SourceState::new(o.level))
                .observe(batch.start, o);
            members[o.level].push(o);
        }
        let mut point = TimelinePoint {
            start: batch.start,
            levels: vec![None; n_levels],
        };
        let mut raised = Vec::new();
        for (li, obs) in members.iter().enumerate() {
            if obs.is_empty() {
                continue;
            }
            let entropies: Vec<f64> = obs.iter().map(|o| o.entropy).collect();
            let level = &mut self.levels[li];
            point.levels[li] = Some(level_entropy(&mut level.state, batch.start, &entropies)?);
            let horizon = batch.index - self.ctx.config.observation_windows as i64;
            while level.recent.front().is_some_and(|&(w, _)| w <= horizon) {
                level.recent.pop_front();
            }
            let mut lr = 1.0;
            let mut culprit: Option<&str> = None;
            for o in obs {
                if let Some(d) = o.deviation {
                    level.recent.push_back((batch.index, d));
                    let r = likelihood_ratio(d, &level.q, &self.ctx.attack_model)?;
                    if culprit.is_none() || r > lr {
                        lr = r;
                        culprit = Some(&o.source);
                    }
                }
            }
            let post = posterior(self.ctx.baseline.prior, lr);
            let kl = if level.recent.is_empty() {
                0.0
            } else {
                let devs: Vec<f64> = level.recent.iter().map(|&(_, d)| d).collect();
                kl_divergence(&empirical_distribution(&devs)?, &level.q)?
            };
            let convexity = convexity_signal(&level.state, self.ctx.config.convexity_run).unwrap_or(false);
            let d2h = second_difference(&level.state.series).unwrap_or(0.0);
            let cfg = &self.ctx.config;
            let gate = kl >= cfg.kl_threshold || convexity;
            let outlier = if gate && cfg.fuse(post, 1.0) >= cfg.posterior_threshold {
                self.outlier_score(li, obs)?
            } else {
                0.0
            };
            let level = &mut self.levels[li];
            let source_id = culprit.unwrap_or(&level.state.level_id).to_string();
            let score = DeviationScore {
                source_id: source_id.clone(),
                timestamp: batch.end,
                kl,
                d2h,
                posterior: post,
                outlier,
            };
            let verdict = fuse_and_decide(&score, cfg, convexity);
            if let Some(alert) = level.latch.observe(verdict, &score, &source_id, self.onset_at) {
                raised.push(alert);
            }
            self.scores.push((level.state.level_id.clone(), score, convexity));
        }
        self.timeline.push(point);
        self.alerts.extend(raised.iter().cloned());
        Ok(raised)
    }

    /// Highest outlier score among the level's sources that deviated in this
    /// window, clustering every source seen so far.
    fn outlier_score(&self, level: usize, obs: &[&Observation]) -> Result<f64, DetectorError> {
        if self.sources.len() < 2 {
            return Ok(0.0);
        }
        let vectors = self
            .sources
            .iter()
            .map(|(id, s)| Ok(FeatureVector::new(id.clone(), s.features(&self.levels[s.level].q)?)))
            .collect::<Result<Vec<_>, DetectorError>>()?;
        let dendrogram = agglomerate(&vectors)?;
        let report = outliers(&dendrogram, &vectors, OUTLIER_QUANTILE)?;
        Ok(obs
            .iter()
            .filter(|o| o.deviation.is_some() && o.level == level)
            .filter_map(|o| report.scores.get(&o.source).copied())
            .fold(0.0, f64::max))
    }
}

/// Runs the detector over an in-memory trace.
pub fn detect_trace(ctx: &DetectionContext, trace: &Trace) -> Result<TraceOutcome, DetectorError> {
    let mut d = Detector::new(ctx, trace.metadata.onset_at)?;
    for r in &trace.records {
        d.push(r)?;
    }
    d.finish()
}
