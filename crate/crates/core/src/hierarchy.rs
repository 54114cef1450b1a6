//! Hierarchy levels, source routing and the weighted level aggregates.

use std::collections::{BTreeMap, HashSet};

use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{second_difference, EntropyError, EntropySeries, WindowConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HierarchyError {
    #[error("hierarchy has no levels")]
    NoLevels,
    #[error("duplicate level id `{0}`")]
    DuplicateLevel(String),
    #[error("level `{level}` has invalid weight {weight}")]
    InvalidWeight { level: String, weight: f64 },
    #[error("weights sum to zero but normalization was requested")]
    ZeroTotalWeight,
    #[error("level `{level}`: bad pattern `{pattern}`: {reason}")]
    InvalidPattern {
        level: String,
        pattern: String,
        reason: String,
    },
    #[error("level `{0}` has no member entropies")]
    EmptyLevel(String),
    #[error("no value supplied for level `{0}`")]
    MissingLevelValue(String),
    #[error("level `{level}`: {source}")]
    Series {
        level: String,
        #[source]
        source: EntropyError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelKind {
    Filesystem,
    Process,
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub level_id: String,
    pub kind: LevelKind,
    pub weight: f64,
    #[serde(default)]
    pub path_patterns: Vec<String>,
}

impl LevelConfig {
    pub fn new(level_id: &str, kind: LevelKind, weight: f64, patterns: &[&str]) -> Self {
        Self {
            level_id: level_id.to_string(),
            kind,
            weight,
            path_patterns: patterns.iter().map(|p| p.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub levels: Vec<LevelConfig>,
    #[serde(default = "default_normalize")]
    pub normalize: bool,
}

fn default_normalize() -> bool {
    true
}

impl Default for HierarchyConfig {
    /// User files, system files and network traffic, weighted 0.5/0.3/0.2.
    fn default() -> Self {
        Self {
            levels: vec![
                LevelConfig::new("user", LevelKind::Filesystem, 0.5, &["/home/**"]),
                LevelConfig::new(
                    "system",
                    LevelKind::Filesystem,
                    0.3,
                    &["/var/**", "/etc/**", "/usr/**"],
                ),
                LevelConfig::new("network", LevelKind::Network, 0.2, &["net://**"]),
            ],
            normalize: true,
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<(), HierarchyError> {
        if self.levels.is_empty() {
            return Err(HierarchyError::NoLevels);
        }
        let mut seen = HashSet::new();
        for level in &self.levels {
            if !seen.insert(level.level_id.as_str()) {
                return Err(HierarchyError::DuplicateLevel(level.level_id.clone()));
            }
            if !(level.weight.is_finite() && level.weight >= 0.0) {
                return Err(HierarchyError::InvalidWeight {
                    level: level.level_id.clone(),
                    weight: level.weight,
                });
            }
        }
        if self.normalize && self.levels.iter().map(|l| l.weight).sum::<f64>() <= 0.0 {
            return Err(HierarchyError::ZeroTotalWeight);
        }
        Ok(())
    }

    /// Weights as used by the aggregates, normalized to sum 1 when requested.
    pub fn effective_weights(&self) -> Result<Vec<(&str, f64)>, HierarchyError> {
        self.validate()?;
        let total: f64 = self.levels.iter().map(|l| l.weight).sum();
        let scale = if self.normalize { 1.0 / total } else { 1.0 };
        Ok(self
            .levels
            .iter()
            .map(|l| (l.level_id.as_str(), l.weight * scale))
            .collect())
    }

    pub fn level(&self, level_id: &str) -> Option<&LevelConfig> {
        self.levels.iter().find(|l| l.level_id == level_id)
    }

    pub fn level_ids(&self) -> impl Iterator<Item = &str> {
        self.levels.iter().map(|l| l.level_id.as_str())
    }

    /// Compiles the path patterns into a [`Router`].
    pub fn router(&self) -> Result<Router, HierarchyError> {
        self.validate()?;
        let mut builder = GlobSetBuilder::new();
        let mut owners = Vec::new();
        for (idx, level) in self.levels.iter().enumerate() {
            for pattern in &level.path_patterns {
                let glob = Glob::new(pattern).map_err(|e| HierarchyError::InvalidPattern {
                    level: level.level_id.clone(),
                    pattern: pattern.clone(),
                    reason: e.to_string(),
                })?;
                builder.add(glob);
                owners.push(idx);
            }
        }
        let set = builder.build().map_err(|e| HierarchyError::InvalidPattern {
            level: String::new(),
            pattern: String::new(),
            reason: e.to_string(),
        })?;
        let default_level = self
            .levels
            .iter()
            .position(|l| l.kind == LevelKind::Filesystem)
            .unwrap_or(0);
        Ok(Router {
            level_ids: self.levels.iter().map(|l| l.level_id.clone()).collect(),
            kinds: self.levels.iter().map(|l| l.kind).collect(),
            owners,
            set,
            default_level,
        })
    }
}

/// Compiled routing table from source paths to level ids.
#[derive(Debug, Clone)]
pub struct Router {
    level_ids: Vec<String>,
    kinds: Vec<LevelKind>,
    owners: Vec<usize>,
    set: GlobSet,
    default_level: usize,
}

impl Router {
    /// First level (in declaration order) with a matching pattern; otherwise
    /// the first level of the hinted kind; otherwise the first filesystem level.
    pub fn route(&self, source_path: &str, hint: Option<LevelKind>) -> &str {
        let first_match = self
            .set
            .matches(source_path)
            .into_iter()
            .map(|i| self.owners[i])
            .min();
        let idx = first_match
            .or_else(|| hint.and_then(|k| self.kinds.iter().position(|&kind| kind == k)))
            .unwrap_or(self.default_level);
        &self.level_ids[idx]
    }

    pub fn default_level(&self) -> &str {
        &self.level_ids[self.default_level]
    }
}

/// Routes one path, compiling the configuration on the fly.
///
/// Prefer [`HierarchyConfig::router`] when routing many paths.
pub fn route_source(config: &HierarchyConfig, source_path: &str) -> Result<String, HierarchyError> {
    Ok(config.router()?.route(source_path, None).to_string())
}

/// Live aggregate of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelState {
    pub level_id: String,
    pub series: EntropySeries,
    pub source_count: usize,
}

impl LevelState {
    pub fn new(level_id: &str, window: WindowConfig) -> Result<Self, HierarchyError> {
        let series = EntropySeries::new(level_id, level_id, window).map_err(|source| {
            HierarchyError::Series {
                level: level_id.to_string(),
                source,
            }
        })?;
        Ok(Self {
            level_id: level_id.to_string(),
            series,
            source_count: 0,
        })
    }
}

/// Mean of the member-source entropies, appended to the level series at
/// `timestamp`.
pub fn level_entropy(
    state: &mut LevelState,
    timestamp: f64,
    member_entropies: &[f64],
) -> Result<f64, HierarchyError> {
    if member_entropies.is_empty() {
        return Err(HierarchyError::EmptyLevel(state.level_id.clone()));
    }
    let mean = member_entropies.iter().sum::<f64>() / member_entropies.len() as f64;
    state
        .series
        .push(timestamp, mean)
        .map_err(|source| HierarchyError::Series {
            level: state.level_id.clone(),
            source,
        })?;
    state.source_count = member_entropies.len();
    Ok(mean)
}

/// `sum_i w_i * H(L_i)`.
pub fn aggregate_entropy(
    config: &HierarchyConfig,
    level_values: &BTreeMap<String, f64>,
) -> Result<f64, HierarchyError> {
    config
        .effective_weights()?
        .into_iter()
        .map(|(id, w)| {
            level_values
                .get(id)
                .map(|h| w * h)
                .ok_or_else(|| HierarchyError::MissingLevelValue(id.to_string()))
        })
        .sum()
}

/// `sum_i w_i * d²H(L_i)/dt²` over the latest samples of each level.
pub fn aggregate_second_derivative(
    config: &HierarchyConfig,
    level_states: &BTreeMap<String, LevelState>,
) -> Result<f64, HierarchyError> {
    let mut total = 0.0;
    for (id, w) in config.effective_weights()? {
        let state = level_states
            .get(id)
            .ok_or_else(|| HierarchyError::MissingLevelValue(id.to_string()))?;
        let d2 = second_difference(&state.series).map_err(|source| HierarchyError::Series {
            level: id.to_string(),
            source,
        })?;
        total += w * d2;
    }
    Ok(total)
}
