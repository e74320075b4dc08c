use std::path::PathBuf;

use osmec::sim::report::mean;
use osmec::sim::{run_scenario, EventKind, EventLog, MetricsReport, RunOutcome, Scenario};

fn bundled(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"));
    Scenario::load(&path).unwrap()
}

fn run(name: &str) -> RunOutcome {
    let out = run_scenario(&bundled(name)).unwrap();
    assert!(out.failures.is_empty(), "{name}: {:?}", &out.failures[..out.failures.len().min(5)]);
    out
}

#[test]
fn fig7_1_parallel_beats_sequential_for_both_templates() {
    let out = run("fig7_1");
    let r = &out.report;
    for class in ["intensive_computation", "high_throughput"] {
        let par = r.durations(class, "parallel");
        let seq = r.durations(class, "sequential");
        assert_eq!(par.len(), 1000);
        assert_eq!(seq.len(), 1000);
        assert!(mean(&par).unwrap() < mean(&seq).unwrap(), "{class}");
    }
    let gap = |mode| {
        (mean(&r.durations("intensive_computation", mode)).unwrap() - mean(&r.durations("high_throughput", mode)).unwrap()).abs()
    };
    assert!(gap("parallel") < gap("sequential"));
    assert_eq!(r.histogram.len(), 4 * 20);
    assert!(out.system.mano().vim().is_conserved());
}

#[test]
fn fig7_2_compute_ordering() {
    let r = run("fig7_2").report;
    let m = |s| mean(&r.compute_times(s)).unwrap();
    assert!(m("face_recognition") > m("prime_sum"));
    assert!(m("prime_sum") > m("sum"));
    assert_eq!(r.compute_times("sum").len(), 1000);
}

#[test]
fn fig8_memory_held_until_release() {
    let out = run("fig8");
    let log = out.log();
    let done: Vec<_> = log.of_kind(EventKind::ServiceCompleted).collect();
    assert_eq!(done.len(), 2);
    for c in done {
        let inst = c.subject_field("inst").unwrap();
        let of = |k| log.of_kind(k).find(|e| e.subject_field("inst") == Some(inst)).unwrap();
        assert_eq!(of(EventKind::CpuReleased).t, c.t);
        let mem = of(EventKind::MemoryReleased);
        assert_eq!(mem.t.as_micros() - c.t.as_micros(), 2_000_000);
    }
    let face_mem = log
        .of_kind(EventKind::ResourceGranted)
        .filter_map(|e| e.field_parse::<u64>("memory_kb"))
        .max()
        .unwrap();
    assert_eq!(face_mem, 83_900);
}

#[test]
fn fig9_gap_grows_with_size() {
    let r = run("fig9").report;
    let rows = &r.video_by_size;
    assert_eq!(rows.len(), 5);
    let gaps: Vec<f64> = rows.iter().map(|row| row.cloud_tx.unwrap() - row.edge_tx.unwrap()).collect();
    assert!(gaps.windows(2).all(|w| w[1] > w[0]), "{gaps:?}");
    for row in rows {
        assert!((row.edge_compute.unwrap() - 0.14).abs() <= 0.02);
        assert!((row.cloud_compute.unwrap() - 0.14).abs() <= 0.02);
    }
}

#[test]
fn containers_cardinality() {
    let out = run("containers");
    let log = out.log();
    let started: Vec<_> = log.of_kind(EventKind::ContainerStarted).collect();
    assert_eq!(started.len(), 4);
    assert_eq!(log.count(EventKind::Converted), 1);
    assert_eq!(out.report.completed, 4);
}

#[test]
fn report_recomputes_from_persisted_log() {
    let out = run("fig8");
    let text = out.log().to_text();
    let reparsed = EventLog::parse_text(&text).unwrap();
    assert_eq!(MetricsReport::from_log(&reparsed), out.report);
}

#[test]
fn empty_request_list() {
    let s = Scenario::from_json("{}", None).unwrap();
    let out = run_scenario(&s).unwrap();
    assert!(out.report.instantiation.is_empty());
    assert_eq!(out.report.log_hash.len(), 16);
}
