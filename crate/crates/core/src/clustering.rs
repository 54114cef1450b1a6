//! Average-linkage agglomerative clustering of per-source entropy features,
//! and dendrogram-based outlier scoring.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::MAX_ENTROPY;

pub const FEATURE_COUNT: usize = 4;

/// Clusters no larger than this fraction of the batch count as "small" when
/// scoring outliers.
pub const SMALL_CLUSTER_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("need at least 2 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("threshold quantile {0} outside (0, 1)")]
    InvalidQuantile(f64),
    #[error("feature vector `{0}` is not finite or has mean entropy outside [0, 8]")]
    InvalidFeatures(String),
    #[error("dendrogram has {leaves} leaves but {vectors} vectors were supplied")]
    DendrogramMismatch { leaves: usize, vectors: usize },
}

/// `(mean entropy, max |ΔH|, max d²H/dt², KL vs level baseline)` of one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub source_id: String,
    pub features: [f64; FEATURE_COUNT],
}

impl FeatureVector {
    pub fn new(source_id: impl Into<String>, features: [f64; FEATURE_COUNT]) -> Self {
        Self {
            source_id: source_id.into(),
            features,
        }
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let finite = self.features.iter().all(|f| f.is_finite());
        if !finite || !(0.0..=MAX_ENTROPY).contains(&self.features[0]) {
            return Err(ClusterError::InvalidFeatures(self.source_id.clone()));
        }
        Ok(())
    }
}

/// Per-feature min-max scaling fitted over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    min: [f64; FEATURE_COUNT],
    range: [f64; FEATURE_COUNT],
}

impl MinMaxScaler {
    pub fn fit(batch: &[FeatureVector]) -> Self {
        let mut min = [f64::INFINITY; FEATURE_COUNT];
        let mut max = [f64::NEG_INFINITY; FEATURE_COUNT];
        for v in batch {
            for k in 0..FEATURE_COUNT {
                min[k] = min[k].min(v.features[k]);
                max[k] = max[k].max(v.features[k]);
            }
        }
        let mut range = [0.0; FEATURE_COUNT];
        for k in 0..FEATURE_COUNT {
            if batch.is_empty() {
                min[k] = 0.0;
            } else {
                range[k] = max[k] - min[k];
            }
        }
        Self { min, range }
    }

    /// Maps each feature into `[0, 1]`; constant features map to 0.
    pub fn scale(&self, v: &FeatureVector) -> [f64; FEATURE_COUNT] {
        std::array::from_fn(|k| {
            if self.range[k] > 0.0 {
                (v.features[k] - self.min[k]) / self.range[k]
            } else {
                0.0
            }
        })
    }
}

/// Euclidean distance between two vectors after batch min-max scaling.
pub fn pairwise_distance(a: &FeatureVector, b: &FeatureVector, scaler: &MinMaxScaler) -> f64 {
    euclidean(&scaler.scale(a), &scaler.scale(b))
}

pub(crate) fn euclidean(a: &[f64; FEATURE_COUNT], b: &[f64; FEATURE_COUNT]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One agglomeration step. Leaves are clusters `0..n`; the k-th merge creates
/// cluster `n + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub height: f64,
    pub new_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub n_leaves: usize,
}

/// Pair ordering: distance first, then the smaller cluster id, then the larger.
fn pair_key_cmp(a: (f64, usize, usize), b: (f64, usize, usize)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

struct Linkage {
    dist: Vec<f64>,
    n: usize,
    ids: Vec<usize>,
    sizes: Vec<usize>,
    active: Vec<bool>,
    nearest: Vec<Option<(f64, usize)>>,
}

impl Linkage {
    fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.dist[i * self.n + j] = v;
        self.dist[j * self.n + i] = v;
    }

    fn key(&self, i: usize, j: usize) -> (f64, usize, usize) {
        let (a, b) = (self.ids[i], self.ids[j]);
        (self.d(i, j), a.min(b), a.max(b))
    }

    fn recompute_nearest(&mut self, i: usize) {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for j in 0..self.n {
            if j == i || !self.active[j] {
                continue;
            }
            let k = self.key(i, j);
            let better = match best {
                None => true,
                Some((d, lo, hi, _)) => pair_key_cmp(k, (d, lo, hi)) == Ordering::Less,
            };
            if better {
                best = Some((k.0, k.1, k.2, j));
            }
        }
        self.nearest[i] = best.map(|(d, _, _, j)| (d, j));
    }
}

/// Average-linkage agglomerative clustering.
///
/// Distances are min-max-scaled Euclidean over the batch, cluster distances
/// are maintained with the Lance-Williams update, and each row caches its
/// nearest active neighbour. Ties resolve to the smallest `(id_a, id_b)`.
pub fn agglomerate(vectors: &[FeatureVector]) -> Result<Dendrogram, ClusterError> {
    let n = vectors.len();
    if n < 2 {
        return Err(ClusterError::TooFewVectors(n));
    }
    for v in vectors {
        v.validate()?;
    }
    let scaler = MinMaxScaler::fit(vectors);
    let scaled: Vec<_> = vectors.iter().map(|v| scaler.scale(v)).collect();

    let mut lk = Linkage {
        dist: vec![0.0; n * n],
        n,
        ids: (0..n).collect(),
        sizes: vec![1; n],
        active: vec![true; n],
        nearest: vec![None; n],
    };
    for i in 0..n {
        for j in (i + 1)..n {
            lk.set(i, j, euclidean(&scaled[i], &scaled[j]));
        }
    }
    for i in 0..n {
        lk.recompute_nearest(i);
    }

    let mut merges = Vec::with_capacity(n - 1);
    let mut last_height = 0.0f64;
    for step in 0..(n - 1) {
        let mut best: Option<((f64, usize, usize), usize, usize)> = None;
        for i in 0..n {
            if !lk.active[i] {
                continue;
            }
            if let Some((_, j)) = lk.nearest[i] {
                let k = lk.key(i, j);
                if best.is_none_or(|(bk, _, _)| pair_key_cmp(k, bk) == Ordering::Less) {
                    best = Some((k, i, j));
                }
            }
        }
        let ((height, id_lo, id_hi), i, j) = best.expect("at least two active clusters");
        // Keep the merged cluster in the lower slot.
        let (keep, drop) = if i < j { (i, j) } else { (j, i) };
        let (size_keep, size_drop) = (lk.sizes[keep], lk.sizes[drop]);
        let total = size_keep + size_drop;
        for k in 0..n {
            if k == keep || k == drop || !lk.active[k] {
                continue;
            }
            let merged = (size_keep as f64 * lk.d(keep, k) + size_drop as f64 * lk.d(drop, k))
                / total as f64;
            lk.set(keep, k, merged);
        }
        lk.active[drop] = false;
        lk.nearest[drop] = None;
        lk.sizes[keep] = total;
        lk.ids[keep] = n + step;

        // Average linkage is monotone; absorb rounding below the previous height.
        let height = height.max(last_height);
        last_height = height;
        merges.push(Merge {
            cluster_a: id_lo,
            cluster_b: id_hi,
            height,
            new_size: total,
        });

        lk.recompute_nearest(keep);
        for k in 0..n {
            if k == keep || !lk.active[k] {
                continue;
            }
            match lk.nearest[k] {
                Some((_, nb)) if nb == keep || nb == drop => lk.recompute_nearest(k),
                Some((d, nb)) => {
                    let current = {
                        let (a, b) = (lk.ids[k], lk.ids[nb]);
                        (d, a.min(b), a.max(b))
                    };
                    if pair_key_cmp(lk.key(k, keep), current) == Ordering::Less {
                        lk.nearest[k] = Some((lk.d(k, keep), keep));
                    }
                }
                None => lk.recompute_nearest(k),
            }
        }
    }
    Ok(Dendrogram { merges, n_leaves: n })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub scores: BTreeMap<String, f64>,
    pub flagged: BTreeSet<String>,
}

/// Scores each source by the normalized height at which its small cluster
/// (at most 10% of the batch, or a singleton) was last merged, and flags the
/// scores strictly above the `threshold_quantile` of all scores.
pub fn outliers(
    dendrogram: &Dendrogram,
    vectors: &[FeatureVector],
    threshold_quantile: f64,
) -> Result<OutlierReport, ClusterError> {
    if !(threshold_quantile > 0.0 && threshold_quantile < 1.0) {
        return Err(ClusterError::InvalidQuantile(threshold_quantile));
    }
    let n = dendrogram.n_leaves;
    if n != vectors.len() || dendrogram.merges.len() + 1 != n {
        return Err(ClusterError::DendrogramMismatch {
            leaves: n,
            vectors: vectors.len(),
        });
    }
    let small = ((SMALL_CLUSTER_FRACTION * n as f64).floor() as usize).max(1);
    // Members are tracked only while a cluster is still small.
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut last_small = vec![0.0f64; n];
    let mut max_height = 0.0f64;
    for m in &dendrogram.merges {
        max_height = max_height.max(m.height);
        let mut joined = Vec::new();
        for c in [m.cluster_a, m.cluster_b] {
            if let Some(ms) = members.get_mut(c).and_then(Option::take) {
                for &leaf in &ms {
                    last_small[leaf] = m.height;
                }
                joined.extend(ms);
            }
        }
        members.push(if m.new_size <= small { Some(joined) } else { None });
    }
    let scores: Vec<f64> = last_small
        .iter()
        .map(|&h| if max_height > 0.0 { h / max_height } else { 0.0 })
        .collect();
    let cut = quantile(&scores, threshold_quantile);
    let mut report = OutlierReport::default();
    for (v, &s) in vectors.iter().zip(scores.iter()) {
        let entry = report.scores.entry(v.source_id.clone()).or_insert(s);
        *entry = entry.max(s);
        if s > cut {
            report.flagged.insert(v.source_id.clone());
        }
    }
    Ok(report)
}

/// Linearly interpolated sample quantile.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
