mod common;

use proptest::prelude::*;

use entrosentinel::simulate::{simulate_scenario, ScenarioKind, ScenarioSpec};
use entrosentinel::trace::{read_trace_from, write_trace_to, Op, Trace};

use common::simulate;

fn user_write_mean(trace: &Trace, from: f64, to: f64) -> Option<f64> {
    let hs: Vec<f64> = trace
        .records
        .iter()
        .filter(|r| r.timestamp >= from && r.timestamp < to)
        .filter(|r| r.op == Op::Write && r.source_path.starts_with("/home/"))
        .map(|r| r.histogram.entropy())
        .collect();
    (!hs.is_empty()).then(|| hs.iter().sum::<f64>() / hs.len() as f64)
}

#[test]
fn benign_edit_stays_below_ciphertext_range() {
    for seed in 0..100 {
        let t = simulate(ScenarioKind::BenignEdit, seed);
        for r in &t.records {
            let h = r.histogram.entropy();
            assert!(h <= 5.5 + 1e-12, "seed {seed}: {} at {} has H = {h}", r.source_path, r.timestamp);
        }
    }
}

#[test]
fn ransomware_label_matches_entropy_shift() {
    for seed in 0..50 {
        let t = simulate(ScenarioKind::Ransomware, seed);
        let onset = t.metadata.onset_at.expect("ransomware carries onset");
        let end = t.metadata.scenario.as_ref().unwrap().duration;
        let pre = user_write_mean(&t, 0.0, onset).unwrap();
        let post = user_write_mean(&t, end - 10.0, end).unwrap();
        assert!(post - pre >= 2.0, "seed {seed}: pre {pre} post {post}");
    }
}

#[test]
fn records_carry_no_payload_bytes() {
    let t = simulate(ScenarioKind::Ransomware, 3);
    let mut buf = Vec::new();
    write_trace_to(&t, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    for line in text.lines().skip(1) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in &keys {
            assert!(
                ["timestamp", "source_path", "level_hint", "op", "bytes", "histogram"].contains(k),
                "unexpected field {k}"
            );
        }
    }
}

fn serialize(t: &Trace) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace_to(t, &mut buf).unwrap();
    buf
}

fn kind() -> impl Strategy<Value = ScenarioKind> {
    prop_oneof![
        Just(ScenarioKind::BenignEdit),
        Just(ScenarioKind::Compressor),
        Just(ScenarioKind::Ransomware)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_is_a_function_of_the_spec(k in kind(), seed in any::<u64>(), duration in 2.0f64..40.0, files in 1usize..20) {
        let mut spec = ScenarioSpec::new(k, seed);
        spec.duration = duration;
        spec.file_count = files;
        let a = simulate_scenario(&spec).unwrap();
        let b = simulate_scenario(&spec).unwrap();
        prop_assert_eq!(serialize(&a), serialize(&b));
        prop_assert!(a.records.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        prop_assert!(a.records.iter().all(|r| r.timestamp >= 0.0 && r.timestamp <= duration));
    }

    #[test]
    fn simulated_traces_round_trip(k in kind(), seed in any::<u64>(), duration in 2.0f64..30.0) {
        let mut spec = ScenarioSpec::new(k, seed);
        spec.duration = duration;
        let t = simulate_scenario(&spec).unwrap();
        let bytes = serialize(&t);
        let back = read_trace_from(std::io::Cursor::new(&bytes)).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(serialize(&back), bytes);
    }
}
