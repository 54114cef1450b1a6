//! Hierarchical entropy-disruption detection.
//!
//! Event streams (file writes, reads, network payloads) are reduced to byte
//! histograms, routed into weighted hierarchy levels and scored by how far
//! their entropy changes depart from a benign baseline.

pub mod baseline;
pub mod clustering;
pub mod detector;
pub mod engine;
pub mod entropy;
pub mod hierarchy;
pub mod report;
pub mod simulate;
pub mod trace;

pub use baseline::{BaselineError, BaselineProfile};
pub use clustering::ClusterError;
pub use detector::{Alert, DetectorConfig, DetectorError, Label, Verdict};
pub use engine::{detect_trace, DetectionContext, TraceOutcome};
pub use entropy::{ByteHistogram, EntropyError};
pub use hierarchy::{HierarchyConfig, HierarchyError};
pub use report::{MetricsReport, ReportError, RunConfig};
pub use simulate::{simulate_scenario, ScenarioKind, ScenarioSpec};
pub use trace::{EventRecord, Trace, TraceError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Report(#[from] ReportError),
}
