//! Baseline profiles: per-level distributions of entropy deviations observed
//! under benign activity, plus the prior probability of an attack.
//!
//! Profiles are stored as a single JSON document carrying a CRC-32 of the
//! compact serialization of every other field.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::entropy::{bin_index, BinnedDistribution, EntropyError, DEFAULT_BINS, MAX_ENTROPY};

pub const PROFILE_VERSION: u32 = 1;

/// Fewest deviations a level needs before a baseline is fitted for it.
pub const MIN_SAMPLES_PER_LEVEL: usize = 30;

pub const DEFAULT_PRIOR: f64 = 0.01;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("level `{level}` has {got} samples, need at least {MIN_SAMPLES_PER_LEVEL}")]
    TooFewSamples { level: String, got: usize },
    #[error("prior {0} outside [0, 1]")]
    InvalidPrior(f64),
    #[error("observation window is empty")]
    EmptyWindow,
    #[error("unsupported profile version {0}")]
    UnsupportedVersion(u64),
    #[error("corrupt profile: {0}")]
    CorruptProfile(String),
    #[error("invalid distribution for level `{level}`: {source}")]
    Distribution {
        level: String,
        #[source]
        source: EntropyError,
    },
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelBaseline {
    pub distribution: BinnedDistribution,
    pub sample_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineProfile {
    pub version: u32,
    pub per_level: BTreeMap<String, LevelBaseline>,
    pub prior: f64,
    /// Seconds since the Unix epoch; zero under a frozen clock.
    pub created_at: f64,
    /// Names of the inputs the profile was fitted from.
    pub provenance: Vec<String>,
}

impl BaselineProfile {
    pub fn level(&self, level_id: &str) -> Option<&LevelBaseline> {
        self.per_level.get(level_id)
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(0.0..=1.0).contains(&self.prior) {
            return Err(BaselineError::InvalidPrior(self.prior));
        }
        for (level, lb) in &self.per_level {
            lb.distribution
                .validate()
                .map_err(|source| BaselineError::Distribution {
                    level: level.clone(),
                    source,
                })?;
        }
        Ok(())
    }
}

/// Clamps a raw entropy change into the deviation support `[0, 8]`.
pub fn deviation(delta_h: f64) -> f64 {
    delta_h.abs().min(MAX_ENTROPY)
}

fn bin_counts(samples: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; DEFAULT_BINS];
    for &x in samples {
        counts[bin_index(0.0, MAX_ENTROPY, DEFAULT_BINS, x)] += 1;
    }
    counts
}

/// Normalized 64-bin histogram over `[0, 8]` of the window's deviations.
pub fn empirical_distribution(window_samples: &[f64]) -> Result<BinnedDistribution, BaselineError> {
    if window_samples.is_empty() {
        return Err(BaselineError::EmptyWindow);
    }
    let n = window_samples.len() as f64;
    let bins = bin_counts(window_samples)
        .into_iter()
        .map(|c| c as f64 / n)
        .collect();
    BinnedDistribution::new(0.0, MAX_ENTROPY, bins).map_err(|source| BaselineError::Distribution {
        level: String::new(),
        source,
    })
}

/// Smoothed deviation distribution for one pool of samples.
pub fn fit_distribution(level: &str, samples: &[f64]) -> Result<BinnedDistribution, BaselineError> {
    if samples.len() < MIN_SAMPLES_PER_LEVEL {
        return Err(BaselineError::TooFewSamples {
            level: level.to_string(),
            got: samples.len(),
        });
    }
    Ok(empirical_distribution(samples)?.smoothed())
}

/// Fits one smoothed deviation distribution per level.
pub fn fit_baseline(
    benign_samples: &BTreeMap<String, Vec<f64>>,
    prior: f64,
) -> Result<BaselineProfile, BaselineError> {
    if !(0.0..=1.0).contains(&prior) {
        return Err(BaselineError::InvalidPrior(prior));
    }
    let mut per_level = BTreeMap::new();
    for (level, samples) in benign_samples {
        let distribution = fit_distribution(level, samples)?;
        per_level.insert(
            level.clone(),
            LevelBaseline {
                distribution,
                sample_count: samples.len() as u64,
            },
        );
    }
    Ok(BaselineProfile {
        version: PROFILE_VERSION,
        per_level,
        prior,
        created_at: 0.0,
        provenance: Vec::new(),
    })
}

#[derive(Serialize, Deserialize)]
struct LevelRecord {
    level_id: String,
    lo: f64,
    hi: f64,
    bins: Vec<f64>,
    sample_count: u64,
}

#[derive(Serialize, Deserialize)]
struct ProfileBody {
    version: u32,
    prior: f64,
    created_at: f64,
    #[serde(default)]
    provenance: Vec<String>,
    levels: Vec<LevelRecord>,
}

impl From<&BaselineProfile> for ProfileBody {
    fn from(p: &BaselineProfile) -> Self {
        ProfileBody {
            version: p.version,
            prior: p.prior,
            created_at: p.created_at,
            provenance: p.provenance.clone(),
            levels: p
                .per_level
                .iter()
                .map(|(id, lb)| LevelRecord {
                    level_id: id.clone(),
                    lo: lb.distribution.lo(),
                    hi: lb.distribution.hi(),
                    bins: lb.distribution.bins().to_vec(),
                    sample_count: lb.sample_count,
                })
                .collect(),
        }
    }
}

fn body_crc(body: &ProfileBody) -> u32 {
    let bytes = serde_json::to_vec(body).expect("profile body serializes");
    crc32fast::hash(&bytes)
}

/// Serializes a profile to its JSON document form.
pub fn profile_to_json(profile: &BaselineProfile) -> Result<String, BaselineError> {
    profile.validate()?;
    let body = ProfileBody::from(profile);
    let crc = body_crc(&body);
    let mut doc = serde_json::to_value(&body).expect("profile body serializes");
    doc["crc32"] = Value::from(crc);
    Ok(serde_json::to_string_pretty(&doc).expect("value serializes") + "\n")
}

/// Parses and verifies a profile document.
pub fn profile_from_json(text: &str) -> Result<BaselineProfile, BaselineError> {
    let mut doc: Value =
        serde_json::from_str(text).map_err(|e| BaselineError::CorruptProfile(e.to_string()))?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| BaselineError::CorruptProfile("not a JSON object".into()))?;
    let version = obj
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| BaselineError::CorruptProfile("missing version".into()))?;
    if version != u64::from(PROFILE_VERSION) {
        return Err(BaselineError::UnsupportedVersion(version));
    }
    let stored_crc = obj
        .remove("crc32")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| BaselineError::CorruptProfile("missing crc32".into()))?;
    let body: ProfileBody =
        serde_json::from_value(doc).map_err(|e| BaselineError::CorruptProfile(e.to_string()))?;
    let actual = body_crc(&body);
    if u64::from(actual) != stored_crc {
        return Err(BaselineError::CorruptProfile(format!(
            "checksum mismatch: stored {stored_crc:08x}, computed {actual:08x}"
        )));
    }
    let mut per_level = BTreeMap::new();
    for rec in body.levels {
        let distribution = BinnedDistribution::new(rec.lo, rec.hi, rec.bins).map_err(|e| {
            BaselineError::CorruptProfile(format!("level `{}`: {e}", rec.level_id))
        })?;
        per_level.insert(
            rec.level_id,
            LevelBaseline {
                distribution,
                sample_count: rec.sample_count,
            },
        );
    }
    let profile = BaselineProfile {
        version: body.version,
        per_level,
        prior: body.prior,
        created_at: body.created_at,
        provenance: body.provenance,
    };
    profile
        .validate()
        .map_err(|e| BaselineError::CorruptProfile(e.to_string()))?;
    Ok(profile)
}

pub fn save_profile(profile: &BaselineProfile, path: &Path) -> Result<(), BaselineError> {
    let text = profile_to_json(profile)?;
    fs::write(path, text).map_err(|source| BaselineError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_profile(path: &Path) -> Result<BaselineProfile, BaselineError> {
    let text = fs::read_to_string(path).map_err(|source| BaselineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    profile_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::SMOOTHING_EPSILON;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_level(samples: Vec<f64>) -> BTreeMap<String, Vec<f64>> {
        [("user".to_string(), samples)].into_iter().collect()
    }

    /// Straight counting oracle: for each bin, scan every sample.
    fn counting_oracle(samples: &[f64]) -> Vec<f64> {
        let width = 8.0 / 64.0;
        (0..64)
            .map(|b| {
                let lo = b as f64 * width;
                let hi = lo + width;
                samples
                    .iter()
                    .filter(|&&x| (x >= lo && x < hi) || (b == 63 && x >= hi))
                    .count() as f64
                    / samples.len() as f64
            })
            .collect()
    }

    #[test]
    fn uniform_fill() {
        let samples: Vec<f64> = (0..64).map(|i| i as f64 * 0.125 + 0.0625).collect();
        let p = fit_baseline(&one_level(samples), 0.01).unwrap();
        for &b in p.level("user").unwrap().distribution.bins() {
            assert!((b - 1.0 / 64.0).abs() < 1e-15);
        }
    }

    #[test]
    fn point_mass_is_smoothed() {
        let p = fit_baseline(&one_level(vec![3.3; 40]), 0.01).unwrap();
        let d = &p.level("user").unwrap().distribution;
        let eps_prime = SMOOTHING_EPSILON / (1.0 + 63.0 * SMOOTHING_EPSILON);
        let hot = d.bin_index(3.3);
        assert!((d.bins()[hot] - 1.0 / (1.0 + 63.0 * SMOOTHING_EPSILON)).abs() < 1e-12);
        for (i, &b) in d.bins().iter().enumerate() {
            if i != hot {
                assert!((b - eps_prime).abs() < 1e-20);
            }
        }
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_baseline(&one_level(vec![1.0; 29]), 0.01),
            Err(BaselineError::TooFewSamples { ref level, got: 29 }) if level == "user"
        ));
        assert!(matches!(
            fit_baseline(&one_level(vec![1.0; 30]), 1.5),
            Err(BaselineError::InvalidPrior(_))
        ));
    }

    #[test]
    fn empirical_examples() {
        let d = empirical_distribution(&[7.5]).unwrap();
        assert_eq!(d.bins()[60], 1.0);
        let d = empirical_distribution(&[2.01, 2.05]).unwrap();
        assert_eq!(d.bins()[16], 1.0);
        assert!(matches!(empirical_distribution(&[]), Err(BaselineError::EmptyWindow)));
    }

    #[test]
    fn empirical_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..=8.0)).collect();
        let d = empirical_distribution(&samples).unwrap();
        assert_eq!(d.bins(), counting_oracle(&samples).as_slice());
    }

    #[test]
    fn corrupt_and_version_gates() {
        let p = fit_baseline(&one_level(vec![0.2; 30]), 0.05).unwrap();
        let text = profile_to_json(&p).unwrap();
        assert!(matches!(
            profile_from_json(&text[..text.len() / 2]),
            Err(BaselineError::CorruptProfile(_))
        ));
        let tampered = text.replace("\"prior\": 0.05", "\"prior\": 0.06");
        assert_ne!(tampered, text);
        assert!(matches!(
            profile_from_json(&tampered),
            Err(BaselineError::CorruptProfile(_))
        ));
        let future = text.replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(
            profile_from_json(&future),
            Err(BaselineError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn save_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let mut p = fit_baseline(&one_level(vec![0.3; 31]), 0.01).unwrap();
        p.provenance = vec!["a.trace".into()];
        p.created_at = 1_700_000_000.25;
        save_profile(&p, &path).unwrap();
        assert_eq!(load_profile(&path).unwrap(), p);
        assert!(matches!(
            load_profile(&dir.path().join("missing.json")),
            Err(BaselineError::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn fitted_distributions_valid_and_roundtrip(
            levels in prop::collection::btree_map("[a-z]{1,6}", prop::collection::vec(0.0f64..8.0, 30..120), 1..4),
            prior in 0.0f64..=1.0,
        ) {
            let p = fit_baseline(&levels, prior).unwrap();
            for lb in p.per_level.values() {
                let sum: f64 = lb.distribution.bins().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(lb.distribution.bins().iter().all(|&b| b >= 0.0));
            }
            prop_assert_eq!(&fit_baseline(&levels, prior).unwrap(), &p);
            let back = profile_from_json(&profile_to_json(&p).unwrap()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
