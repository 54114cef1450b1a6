//! Byte-level Shannon entropy, windowed entropy series and binned distributions.
//!
//! Entropy is measured in bits per byte (log base 2 over the 256-symbol byte
//! alphabet), so every value lies in `[0, 8]`. An empty histogram has entropy 0.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum entropy of a byte distribution, `log2(256)`.
pub const MAX_ENTROPY: f64 = 8.0;

/// Mass substituted for empty bins before taking ratios or logarithms.
pub const SMOOTHING_EPSILON: f64 = 1e-9;

/// Default number of bins for entropy-deviation distributions.
pub const DEFAULT_BINS: usize = 64;

/// Relative deviation from the nominal sample spacing tolerated by
/// [`second_difference`].
pub const SPACING_TOLERANCE: f64 = 0.10;

const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EntropyError {
    #[error("insufficient samples: need {needed}, have {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("irregular sample spacing: intervals {first}s and {second}s differ by more than 10%")]
    IrregularSpacing { first: f64, second: f64 },
    #[error("distribution shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid window configuration: {0}")]
    InvalidWindow(String),
    #[error("invalid sample at t={timestamp}: {reason}")]
    InvalidSample { timestamp: f64, reason: String },
    #[error("histogram total {total} does not match bucket sum {sum}")]
    InconsistentHistogram { total: u64, sum: u64 },
}

/// Occurrence counts for each of the 256 byte values.
#[derive(Clone, PartialEq, Eq)]
pub struct ByteHistogram {
    counts: [u64; 256],
    total: u64,
}

impl Default for ByteHistogram {
    fn default() -> Self {
        Self {
            counts: [0; 256],
            total: 0,
        }
    }
}

impl std::fmt::Debug for ByteHistogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nonzero: Vec<(usize, u64)> = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(b, &c)| (b, c))
            .collect();
        f.debug_struct("ByteHistogram")
            .field("total", &self.total)
            .field("nonzero", &nonzero)
            .finish()
    }
}

impl ByteHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a histogram from explicit bucket counts.
    pub fn from_counts(counts: [u64; 256]) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    /// Counts every byte of `data`.
    pub fn from_bytes(data: &[u8]) -> Self {
        let mut hist = Self::new();
        hist.update(data);
        hist
    }

    /// Adds the bytes of `data` to the running counts.
    pub fn update(&mut self, data: &[u8]) {
        for &b in data {
            self.counts[b as usize] += 1;
        }
        self.total += data.len() as u64;
    }

    /// Adds `count` occurrences of `byte`.
    pub fn add(&mut self, byte: u8, count: u64) {
        self.counts[byte as usize] += count;
        self.total += count;
    }

    /// Bucket-wise sum with another histogram.
    pub fn merge(&mut self, other: &ByteHistogram) -> Result<(), EntropyError> {
        for (mine, theirs) in self.counts.iter_mut().zip(other.counts.iter()) {
            *mine += theirs;
        }
        self.total += other.total;
        self.check()
    }

    /// Verifies that `total` equals the sum of the buckets.
    pub fn check(&self) -> Result<(), EntropyError> {
        let sum: u64 = self.counts.iter().sum();
        if sum != self.total {
            return Err(EntropyError::InconsistentHistogram {
                total: self.total,
                sum,
            });
        }
        Ok(())
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    pub fn count(&self, byte: u8) -> u64 {
        self.counts[byte as usize]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Number of distinct byte values present.
    pub fn distinct(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Iterates `(byte, count)` over nonzero buckets in ascending byte order.
    pub fn nonzero(&self) -> impl Iterator<Item = (u8, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(b, &c)| (b as u8, c))
    }

    pub fn entropy(&self) -> f64 {
        shannon_entropy(self)
    }
}

/// Histogram of the bytes in `data`.
pub fn histogram_from_bytes(data: &[u8]) -> ByteHistogram {
    ByteHistogram::from_bytes(data)
}

/// Shannon entropy of the histogram in bits per byte.
///
/// Uses `H = log2(N) - (1/N) * sum(c * log2(c))`, which needs a single
/// logarithm per nonzero bucket. The result is clamped into `[0, 8]` to absorb
/// rounding at the extremes.
pub fn shannon_entropy(hist: &ByteHistogram) -> f64 {
    if hist.total == 0 {
        return 0.0;
    }
    let n = hist.total as f64;
    let mut sum_c_log_c = 0.0;
    let mut distinct = 0usize;
    for &c in hist.counts.iter() {
        if c > 0 {
            let cf = c as f64;
            sum_c_log_c += cf * cf.log2();
            distinct += 1;
        }
    }
    if distinct <= 1 {
        return 0.0;
    }
    (n.log2() - sum_c_log_c / n).clamp(0.0, MAX_ENTROPY)
}

/// One entropy observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropySample {
    pub timestamp: f64,
    pub value: f64,
}

impl EntropySample {
    pub fn new(timestamp: f64, value: f64) -> Result<Self, EntropyError> {
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(EntropyError::InvalidSample {
                timestamp,
                reason: "timestamp must be finite and non-negative".into(),
            });
        }
        if !(0.0..=MAX_ENTROPY).contains(&value) {
            return Err(EntropyError::InvalidSample {
                timestamp,
                reason: format!("entropy {value} outside [0, 8]"),
            });
        }
        Ok(Self { timestamp, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Samples retained by a series.
    pub capacity: usize,
    /// Nominal sampling interval in seconds.
    pub dt: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            capacity: 32,
            dt: 1.0,
        }
    }
}

impl WindowConfig {
    pub fn new(capacity: usize, dt: f64) -> Result<Self, EntropyError> {
        let cfg = Self { capacity, dt };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EntropyError> {
        if self.capacity < 3 {
            return Err(EntropyError::InvalidWindow(format!(
                "capacity {} < 3",
                self.capacity
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(EntropyError::InvalidWindow(format!(
                "dt {} must be positive",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Bounded, time-ordered entropy samples for one source or level.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropySeries {
    source_id: String,
    level_id: String,
    samples: VecDeque<EntropySample>,
    window: WindowConfig,
}

impl EntropySeries {
    pub fn new(
        source_id: impl Into<String>,
        level_id: impl Into<String>,
        window: WindowConfig,
    ) -> Result<Self, EntropyError> {
        window.validate()?;
        Ok(Self {
            source_id: source_id.into(),
            level_id: level_id.into(),
            samples: VecDeque::with_capacity(window.capacity),
            window,
        })
    }

    /// Builds a series from `(timestamp, value)` pairs, keeping the most
    /// recent `window.capacity` of them.
    pub fn from_points(
        source_id: impl Into<String>,
        level_id: impl Into<String>,
        window: WindowConfig,
        points: &[(f64, f64)],
    ) -> Result<Self, EntropyError> {
        let mut series = Self::new(source_id, level_id, window)?;
        for &(t, v) in points {
            series.push(t, v)?;
        }
        Ok(series)
    }

    /// Appends a sample, evicting the oldest one when full.
    pub fn push(&mut self, timestamp: f64, value: f64) -> Result<(), EntropyError> {
        let sample = EntropySample::new(timestamp, value)?;
        if let Some(last) = self.samples.back() {
            if sample.timestamp <= last.timestamp {
                return Err(EntropyError::InvalidSample {
                    timestamp,
                    reason: format!("not after previous sample at t={}", last.timestamp),
                });
            }
        }
        if self.samples.len() == self.window.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        Ok(())
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn level_id(&self) -> &str {
        &self.level_id
    }

    pub fn window(&self) -> &WindowConfig {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> impl DoubleEndedIterator<Item = &EntropySample> + ExactSizeIterator {
        self.samples.iter()
    }

    pub fn last(&self) -> Option<&EntropySample> {
        self.samples.back()
    }

    /// Sample `back` positions from the end (`0` is the latest).
    pub fn nth_back(&self, back: usize) -> Option<&EntropySample> {
        let len = self.samples.len();
        if back < len {
            self.samples.get(len - 1 - back)
        } else {
            None
        }
    }

    pub fn mean(&self) -> Option<f64> {
        if self.samples.is_empty() {
            None
        } else {
            Some(self.samples.iter().map(|s| s.value).sum::<f64>() / self.samples.len() as f64)
        }
    }
}

/// Forward difference of the two latest samples, in bits per second.
pub fn first_difference(series: &EntropySeries) -> Result<f64, EntropyError> {
    let (Some(cur), Some(prev)) = (series.nth_back(0), series.nth_back(1)) else {
        return Err(EntropyError::InsufficientSamples {
            needed: 2,
            got: series.len(),
        });
    };
    Ok((cur.value - prev.value) / (cur.timestamp - prev.timestamp))
}

/// Central second difference over the three latest samples, in bits per second².
///
/// The two intervals must agree within 10% of each other; their mean is used
/// as the step.
pub fn second_difference(series: &EntropySeries) -> Result<f64, EntropyError> {
    if series.len() < 3 {
        return Err(EntropyError::InsufficientSamples {
            needed: 3,
            got: series.len(),
        });
    }
    second_difference_at(series, 0)
}

/// Second difference centered on the sample `back + 1` positions from the end.
pub(crate) fn second_difference_at(series: &EntropySeries, back: usize) -> Result<f64, EntropyError> {
    let (Some(next), Some(mid), Some(prev)) = (
        series.nth_back(back),
        series.nth_back(back + 1),
        series.nth_back(back + 2),
    ) else {
        return Err(EntropyError::InsufficientSamples {
            needed: back + 3,
            got: series.len(),
        });
    };
    let h1 = mid.timestamp - prev.timestamp;
    let h2 = next.timestamp - mid.timestamp;
    if (h1 - h2).abs() > SPACING_TOLERANCE * h1.max(h2) {
        return Err(EntropyError::IrregularSpacing {
            first: h1,
            second: h2,
        });
    }
    let dt = 0.5 * (h1 + h2);
    Ok((next.value - 2.0 * mid.value + prev.value) / (dt * dt))
}

/// Normalized histogram over a fixed real interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedDistribution {
    lo: f64,
    hi: f64,
    bins: Vec<f64>,
}

impl BinnedDistribution {
    /// Validates and wraps bin probabilities.
    pub fn new(lo: f64, hi: f64, bins: Vec<f64>) -> Result<Self, EntropyError> {
        let dist = Self { lo, hi, bins };
        dist.validate()?;
        Ok(dist)
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(lo: f64, hi: f64, weights: &[f64]) -> Result<Self, EntropyError> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || sum.is_nan() || sum <= 0.0 {
            return Err(EntropyError::InvalidDistribution(
                "weights must be finite, nonnegative and not all zero".into(),
            ));
        }
        Self::new(lo, hi, weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(lo: f64, hi: f64, bin_count: usize) -> Result<Self, EntropyError> {
        Self::from_weights(lo, hi, &vec![1.0; bin_count])
    }

    pub fn validate(&self) -> Result<(), EntropyError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(EntropyError::InvalidDistribution(format!(
                "bounds [{}, {}] invalid",
                self.lo, self.hi
            )));
        }
        if self.bins.is_empty() {
            return Err(EntropyError::InvalidDistribution("no bins".into()));
        }
        if self.bins.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(EntropyError::InvalidDistribution(
                "negative or non-finite bin mass".into(),
            ));
        }
        let sum: f64 = self.bins.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
            return Err(EntropyError::InvalidDistribution(format!(
                "bins sum to {sum}"
            )));
        }
        Ok(())
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    /// Bin holding `x`; values outside the support fall into the edge bins.
    pub fn bin_index(&self, x: f64) -> usize {
        bin_index(self.lo, self.hi, self.bins.len(), x)
    }

    pub fn mass_at(&self, x: f64) -> f64 {
        self.bins[self.bin_index(x)]
    }

    pub fn same_shape(&self, other: &BinnedDistribution) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.bins.len() == other.bins.len()
    }

    pub(crate) fn require_same_shape(&self, other: &BinnedDistribution) -> Result<(), EntropyError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(EntropyError::ShapeMismatch(format!(
                "[{}, {}]x{} vs [{}, {}]x{}",
                self.lo,
                self.hi,
                self.bins.len(),
                other.lo,
                other.hi,
                other.bins.len()
            )))
        }
    }

    /// Replaces empty bins with [`SMOOTHING_EPSILON`] and renormalizes.
    pub fn smoothed(&self) -> BinnedDistribution {
        if self.bins.iter().all(|&p| p > 0.0) {
            return self.clone();
        }
        let raw: Vec<f64> = self
            .bins
            .iter()
            .map(|&p| if p > 0.0 { p } else { SMOOTHING_EPSILON })
            .collect();
        let sum: f64 = raw.iter().sum();
        BinnedDistribution {
            lo: self.lo,
            hi: self.hi,
            bins: raw.into_iter().map(|p| p / sum).collect(),
        }
    }
}

pub(crate) fn bin_index(lo: f64, hi: f64, bin_count: usize, x: f64) -> usize {
    let scaled = (x - lo) / (hi - lo) * bin_count as f64;
    if scaled.is_nan() || scaled <= 0.0 {
        0
    } else {
        (scaled.floor() as usize).min(bin_count - 1)
    }
}

/// `D_KL(p || q)` in bits, with empty `q` bins smoothed.
pub fn kl_divergence(p: &BinnedDistribution, q: &BinnedDistribution) -> Result<f64, EntropyError> {
    p.require_same_shape(q)?;
    // Only empty q-bins under p's support need ε; bins where p is zero add
    // nothing to the sum, so padding them would bias KL(p, p) above zero.
    let raw: Vec<f64> = p
        .bins
        .iter()
        .zip(q.bins.iter())
        .map(|(&pi, &qi)| if pi > 0.0 && qi <= 0.0 { SMOOTHING_EPSILON } else { qi })
        .collect();
    let norm: f64 = raw.iter().sum();
    let kl: f64 = p
        .bins
        .iter()
        .zip(raw.iter())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi * norm / qi).log2())
        .sum();
    // Rounding can leave a tiny negative sum when p and q agree.
    Ok(kl.max(0.0))
}
