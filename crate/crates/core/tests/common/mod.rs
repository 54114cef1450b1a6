#![allow(dead_code)]

use std::collections::BTreeMap;

use entrosentinel::baseline::{fit_baseline, BaselineProfile, DEFAULT_PRIOR};
use entrosentinel::clustering::{Dendrogram, FeatureVector, Merge, FEATURE_COUNT};
use entrosentinel::engine::collect_deviations;
use entrosentinel::hierarchy::HierarchyConfig;
use entrosentinel::simulate::{simulate_scenario, ScenarioKind, ScenarioSpec};
use entrosentinel::trace::Trace;

pub const RANSOMWARE_SEEDS: std::ops::Range<u64> = 1000..1100;
pub const BENIGN_SEEDS: std::ops::Range<u64> = 2000..2100;
pub const COMPRESSOR_SEEDS: std::ops::Range<u64> = 3000..3100;
/// Held out from the evaluation corpus; used only to fit the baseline.
pub const BASELINE_SEEDS: std::ops::Range<u64> = 5000..5050;

pub fn simulate(kind: ScenarioKind, seed: u64) -> Trace {
    simulate_scenario(&ScenarioSpec::new(kind, seed)).expect("default spec is valid")
}

/// The 300-trace evaluation corpus, tagged with a stable file name.
pub fn corpus() -> Vec<(String, Trace)> {
    let mut out = Vec::new();
    for (kind, seeds) in [
        (ScenarioKind::Ransomware, RANSOMWARE_SEEDS),
        (ScenarioKind::BenignEdit, BENIGN_SEEDS),
        (ScenarioKind::Compressor, COMPRESSOR_SEEDS),
    ] {
        for seed in seeds {
            out.push((format!("{}_{seed}.jsonl", kind.as_str()), simulate(kind, seed)));
        }
    }
    out
}

pub fn baseline_traces() -> Vec<Trace> {
    BASELINE_SEEDS
        .map(|s| simulate(ScenarioKind::BenignEdit, s))
        .collect()
}

pub fn fit_default_baseline(traces: &[Trace]) -> BaselineProfile {
    let hierarchy = HierarchyConfig::default();
    let mut samples = BTreeMap::new();
    for t in traces {
        collect_deviations(&hierarchy, 1.0, &t.records, &mut samples).unwrap();
    }
    fit_baseline(&samples, DEFAULT_PRIOR).unwrap()
}

/// Reference average linkage: every step recomputes the mean leaf-to-leaf
/// distance of every active cluster pair from scratch.
pub fn naive_average_linkage(vectors: &[FeatureVector]) -> Dendrogram {
    let n = vectors.len();
    let mut lo = [f64::INFINITY; FEATURE_COUNT];
    let mut hi = [f64::NEG_INFINITY; FEATURE_COUNT];
    for v in vectors {
        for k in 0..FEATURE_COUNT {
            lo[k] = lo[k].min(v.features[k]);
            hi[k] = hi[k].max(v.features[k]);
        }
    }
    let scaled: Vec<[f64; FEATURE_COUNT]> = vectors
        .iter()
        .map(|v| {
            let mut s = [0.0; FEATURE_COUNT];
            for k in 0..FEATURE_COUNT {
                let r = hi[k] - lo[k];
                s[k] = if r > 0.0 { (v.features[k] - lo[k]) / r } else { 0.0 };
            }
            s
        })
        .collect();
    let leaf = |i: usize, j: usize| -> f64 {
        (0..FEATURE_COUNT)
            .map(|k| (scaled[i][k] - scaled[j][k]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    // (cluster id, members)
    let mut active: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let (ia, ma) = &active[a];
                let (ib, mb) = &active[b];
                let mut sum = 0.0;
                for &x in ma {
                    for &y in mb {
                        sum += leaf(x, y);
                    }
                }
                let d = sum / (ma.len() * mb.len()) as f64;
                let key = (d, (*ia).min(*ib), (*ia).max(*ib), a, b);
                let better = match best {
                    None => true,
                    Some(bk) => (key.0, key.1, key.2) < (bk.0, bk.1, bk.2),
                };
                if better {
                    best = Some(key);
                }
            }
        }
        let (d, id_lo, id_hi, a, b) = best.expect("at least two clusters");
        let mut members = active[a].1.clone();
        members.extend(active[b].1.iter().copied());
        active.remove(b);
        active.remove(a);
        merges.push(Merge {
            cluster_a: id_lo,
            cluster_b: id_hi,
            height: d,
            new_size: members.len(),
        });
        active.push((n + step, members));
    }
    Dendrogram { merges, n_leaves: n }
}
