//! Scoring and decision rules: likelihood ratio against the baseline, the
//! two-hypothesis posterior, the convexity signal and the fused verdict.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::BaselineError;
use crate::clustering::ClusterError;
use crate::entropy::{second_difference_at, BinnedDistribution, EntropyError, MAX_ENTROPY};
use crate::hierarchy::{HierarchyError, LevelState};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
    #[error("deviation {0} outside [0, 8]")]
    InvalidDeviation(f64),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("baseline has no distribution for level `{0}`")]
    MissingLevel(String),
    #[error("alert has no onset")]
    MissingOnset,
    #[error("alert raised at {raised_at}s precedes onset {onset_at}s")]
    NegativeLatency { raised_at: f64, onset_at: f64 },
}

fn default_observation_windows() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// κ, bits.
    pub kl_threshold: f64,
    /// τ, exclusive of 0 and 1.
    pub posterior_threshold: f64,
    /// m, consecutive windows with a positive second difference.
    pub convexity_run: usize,
    pub window_seconds: f64,
    pub outlier_weight: f64,
    /// Windows of level deviations pooled into the KL estimate.
    #[serde(default = "default_observation_windows")]
    pub observation_windows: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kl_threshold: 1.0,
            posterior_threshold: 0.9,
            convexity_run: 3,
            window_seconds: 1.0,
            outlier_weight: 0.2,
            observation_windows: default_observation_windows(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: String| Err(DetectorError::InvalidConfig(m));
        if !(self.kl_threshold.is_finite() && self.kl_threshold >= 0.0) {
            return bad(format!("kl_threshold {} must be non-negative", self.kl_threshold));
        }
        if !(self.posterior_threshold > 0.0 && self.posterior_threshold < 1.0) {
            return bad(format!("posterior_threshold {} must lie in (0, 1)", self.posterior_threshold));
        }
        if self.convexity_run == 0 {
            return bad("convexity_run must be positive".into());
        }
        if !(self.window_seconds.is_finite() && self.window_seconds > 0.0) {
            return bad(format!("window_seconds {} must be positive", self.window_seconds));
        }
        if !(0.0..=1.0).contains(&self.outlier_weight) {
            return bad(format!("outlier_weight {} must lie in [0, 1]", self.outlier_weight));
        }
        if self.observation_windows == 0 {
            return bad("observation_windows must be positive".into());
        }
        Ok(())
    }

    /// `(1 - w) * posterior + w * outlier`.
    pub fn fuse(&self, posterior: f64, outlier: f64) -> f64 {
        ((1.0 - self.outlier_weight) * posterior + self.outlier_weight * outlier).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationScore {
    pub source_id: String,
    pub timestamp: f64,
    pub kl: f64,
    pub d2h: f64,
    pub posterior: f64,
    pub outlier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign,
    Ransomware,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Ransomware => "ransomware",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub source_id: String,
    pub label: Label,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub source_id: String,
    pub raised_at: f64,
    pub onset_at: Option<f64>,
    pub latency_ms: Option<f64>,
    pub score: DeviationScore,
}

impl Alert {
    /// Fills `latency_ms` from the onset; an alert may not precede its onset.
    pub fn new(
        source_id: impl Into<String>,
        raised_at: f64,
        onset_at: Option<f64>,
        score: DeviationScore,
    ) -> Result<Self, DetectorError> {
        let latency_ms = match onset_at {
            Some(onset) if raised_at < onset => {
                return Err(DetectorError::NegativeLatency {
                    raised_at,
                    onset_at: onset,
                })
            }
            Some(onset) => Some((raised_at - onset) * 1000.0),
            None => None,
        };
        Ok(Self {
            source_id: source_id.into(),
            raised_at,
            onset_at,
            latency_ms,
            score,
        })
    }
}

/// `f(B|A) / f(B|¬A)` at the deviation's bin, both distributions ε-smoothed.
pub fn likelihood_ratio(
    deviation: f64,
    baseline: &BinnedDistribution,
    attack_model: &BinnedDistribution,
) -> Result<f64, DetectorError> {
    if !(0.0..=MAX_ENTROPY).contains(&deviation) {
        return Err(DetectorError::InvalidDeviation(deviation));
    }
    baseline.require_same_shape(attack_model)?;
    let q = baseline.smoothed();
    let a = attack_model.smoothed();
    Ok(a.mass_at(deviation) / q.mass_at(deviation))
}

/// Normalized two-hypothesis Bayes: `p·lr / (p·lr + 1 − p)`.
pub fn posterior(prior: f64, lr: f64) -> f64 {
    let p = prior.clamp(0.0, 1.0);
    let lr = lr.max(0.0);
    if p == 0.0 {
        return 0.0;
    }
    if lr.is_infinite() {
        return 1.0;
    }
    let num = p * lr;
    let den = num + (1.0 - p);
    if den == 0.0 {
        0.0
    } else {
        (num / den).clamp(0.0, 1.0)
    }
}

/// True iff the latest `m` second differences of the level series are all
/// strictly positive. A spacing gap breaks the run.
pub fn convexity_signal(level_state: &LevelState, m: usize) -> Result<bool, DetectorError> {
    let series = &level_state.series;
    if series.len() < m + 2 {
        return Err(EntropyError::InsufficientSamples {
            needed: m + 2,
            got: series.len(),
        }
        .into());
    }
    for back in 0..m {
        match second_difference_at(series, back) {
            Ok(d2) if d2 > 0.0 => {}
            Ok(_) | Err(EntropyError::IrregularSpacing { .. }) => return Ok(false),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

/// Applies the fused-confidence threshold and the KL/convexity gate.
pub fn fuse_and_decide(score: &DeviationScore, config: &DetectorConfig, convexity: bool) -> Verdict {
    let confidence = config.fuse(score.posterior, score.outlier);
    let gate = score.kl >= config.kl_threshold || convexity;
    let label = if confidence >= config.posterior_threshold && gate {
        Label::Ransomware
    } else {
        Label::Benign
    };
    Verdict {
        source_id: score.source_id.clone(),
        label,
        confidence,
    }
}

/// Per-source verdict state. Once a source turns ransomware the verdict is
/// frozen and exactly one alert is produced.
#[derive(Debug, Clone, Default)]
pub struct VerdictLatch {
    frozen: Option<Verdict>,
    last: Option<Verdict>,
}

impl VerdictLatch {
    pub fn is_latched(&self) -> bool {
        self.frozen.is_some()
    }

    /// Records a fresh verdict; returns the alert on the first benign to
    /// ransomware transition. `onset_at` is attached only when the alert does
    /// not precede it.
    pub fn observe(
        &mut self,
        verdict: Verdict,
        score: &DeviationScore,
        alert_source: &str,
        onset_at: Option<f64>,
    ) -> Option<Alert> {
        if self.frozen.is_some() {
            return None;
        }
        if verdict.label == Label::Ransomware {
            let onset = onset_at.filter(|&o| score.timestamp >= o);
            self.frozen = Some(verdict);
            let alert = Alert::new(alert_source, score.timestamp, onset, score.clone())
                .expect("onset filtered to precede the alert");
            return Some(alert);
        }
        self.last = Some(verdict);
        None
    }

    /// Frozen verdict if latched, otherwise the latest benign one.
    pub fn current(&self) -> Option<&Verdict> {
        self.frozen.as_ref().or(self.last.as_ref())
    }
}

/// `(raised_at − onset_at) · 1000`.
pub fn detection_latency(alert: &Alert) -> Result<f64, DetectorError> {
    let onset = alert.onset_at.ok_or(DetectorError::MissingOnset)?;
    if alert.raised_at < onset {
        return Err(DetectorError::NegativeLatency {
            raised_at: alert.raised_at,
            onset_at: onset,
        });
    }
    Ok((alert.raised_at - onset) * 1000.0)
}
