//! The nine acceptance criteria, each reported as one PASS/FAIL line.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use osmec::mano::{
    Components, GrantId, InstanceId, InstantiationMode, ManagedNf, NodeId, NodeSpec, PodId, ResourceVector, Template, Vim,
};
use osmec::mano::ContainerFault;
use osmec::nf::NfKind;
use osmec::sim::report::mean;
use osmec::sim::{
    measure_instantiation, run_scenario, sample_usage, EventKind, EventLog, RunOutcome, Scenario, Submission, System,
};
use osmec::workloads::{compute_prime_sum, compute_sum, serve_video, Bandwidths, Location, WorkloadConfig};
use osmec::SimTime;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bundled(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Same request set with fewer repetitions.
fn shortened(mut s: Scenario, repeat: u32) -> Scenario {
    for r in &mut s.requests {
        r.repeat = r.repeat.min(repeat);
    }
    s
}

fn run(s: &Scenario) -> Result<RunOutcome, String> {
    let out = run_scenario(s).map_err(|e| e.to_string())?;
    ensure(out.failures.is_empty(), || format!("{}: delivery failures {:?}", s.name, out.failures.first()))?;
    Ok(out)
}

fn class_of_instances(log: &EventLog) -> BTreeMap<String, String> {
    log.of_kind(EventKind::TemplateSelected)
        .filter_map(|e| Some((e.subject_field("inst")?.to_string(), e.field("class")?.to_string())))
        .collect()
}

fn check_cardinality(out: &RunOutcome) -> Result<(), String> {
    let log = out.log();
    let classes = class_of_instances(log);
    let count_instances = |c: &str| classes.values().filter(|v| *v == c).count();
    let count_started = |c: &str| {
        log.of_kind(EventKind::ContainerStarted)
            .filter(|e| e.subject_field("inst").and_then(|i| classes.get(i)).map(String::as_str) == Some(c))
            .count()
    };
    for (class, n) in [("intensive_computation", 3), ("high_throughput", 1)] {
        ensure(count_instances(class) == n, || format!("{class}: {} instances, want {n}", count_instances(class)))?;
        ensure(count_started(class) == n, || format!("{class}: {} containers, want {n}", count_started(class)))?;
    }
    Ok(())
}

fn criterion_1() -> Check {
    let started = Instant::now();
    let out = run(&bundled("containers"))?;
    check_cardinality(&out)?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("3 intensive containers/instances, 1 high-throughput, {elapsed:.2?}"))
}

fn random_template(rng: &mut ChaCha8Rng, containers: usize) -> (Template, Vec<SimTime>) {
    let mut t = Template::builtins().into_iter().next().expect("builtin");
    t.managed_nfs.retain(|n| n.nf_kind != NfKind::App);
    t.container_costs.clear();
    t.service_profiles.clear();
    let mut costs = Vec::new();
    for i in 0..containers {
        let id = format!("app{i}");
        let cost = SimTime::from_secs(rng.gen_range(1..=100));
        t.managed_nfs.push(ManagedNf::new(&id, NfKind::App));
        t.container_costs.insert(id, cost);
        costs.push(cost);
    }
    t.validate().expect("generated template is valid");
    (t, costs)
}

fn criterion_2() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let overhead = SimTime::from_secs(1);
    for case in 0..1000 {
        let n = rng.gen_range(2..=6);
        let (t, costs) = random_template(&mut rng, n);
        let par = measure_instantiation(&t, InstantiationMode::Parallel, overhead).map_err(|e| e.to_string())?;
        let seq = measure_instantiation(&t, InstantiationMode::Sequential, overhead).map_err(|e| e.to_string())?;
        let max = costs.iter().copied().max().unwrap();
        let sum = costs.iter().fold(SimTime::ZERO, |a, c| a + *c);
        ensure(par < seq, || format!("case {case}: parallel {par} not below sequential {seq}"))?;
        ensure(par == overhead + max && seq == overhead + sum, || format!("case {case}: {par}/{seq} vs {costs:?}"))?;
    }
    for case in 0..100 {
        let (t, _) = random_template(&mut rng, 1);
        let par = measure_instantiation(&t, InstantiationMode::Parallel, overhead).map_err(|e| e.to_string())?;
        let seq = measure_instantiation(&t, InstantiationMode::Sequential, overhead).map_err(|e| e.to_string())?;
        ensure(par == seq, || format!("1-container case {case}: {par} != {seq}"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 templates parallel < sequential, 100 single-container equal, {elapsed:.2?}"))
}

fn check_fig8(out: &RunOutcome) -> Result<(), String> {
    let log = out.log();
    let done: Vec<_> = log.of_kind(EventKind::ServiceCompleted).collect();
    ensure(done.len() == 2, || format!("{} completions", done.len()))?;
    for c in done {
        let inst = c.subject_field("inst").unwrap();
        let of = |k| log.of_kind(k).filter(|e| e.subject_field("inst") == Some(inst)).collect::<Vec<_>>();
        let cpu = of(EventKind::CpuReleased);
        let mem = of(EventKind::MemoryReleased);
        ensure(cpu.len() == 1 && cpu[0].t == c.t, || format!("inst {inst}: CpuReleased not at completion"))?;
        ensure(mem.len() == 1 && mem[0].t == c.t + SimTime::from_secs(2), || format!("inst {inst}: MemoryReleased not 2 s later"))?;
        ensure(mem[0].field("reason") == Some("manual"), || "memory release not manual".into())?;
    }
    let face = log
        .of_kind(EventKind::ServiceCompleted)
        .find(|e| e.field("service") == Some("face_recognition"))
        .ok_or("no face completion")?;
    let held = sample_usage(log, None, Some((face.t, face.t))).last().map(|u| (u.cpu, u.memory_mb));
    ensure(held == Some((0, 83.9)), || format!("held after face completion: {held:?}"))?;
    Ok(())
}

fn criterion_3() -> Check {
    let out = run(&bundled("fig8"))?;
    check_fig8(&out)?;
    Ok("CPU released at completion, 83.9 MB held for 2.0 s until manual release".into())
}

fn cpu_plateau(log: &EventLog, service: &str) -> Option<u64> {
    let inst = log
        .of_kind(EventKind::TemplateSelected)
        .find(|e| e.field("service") == Some(service))?
        .subject_field("inst")?
        .to_string();
    let granted = log.of_kind(EventKind::ResourceGranted).find(|e| e.subject_field("inst") == Some(inst.as_str()))?;
    sample_usage(log, None, Some((granted.t, granted.t))).last().map(|u| u.cpu)
}

fn check_ordering(out: &RunOutcome) -> Result<(f64, f64, f64), String> {
    let r = &out.report;
    let m = |s| mean(&r.compute_times(s)).ok_or(format!("no {s} samples"));
    let (face, prime, sum) = (m("face_recognition")?, m("prime_sum")?, m("sum")?);
    ensure(face > prime && prime > sum, || format!("means face {face} prime {prime} sum {sum}"))?;
    Ok((face, prime, sum))
}

fn criterion_4() -> Check {
    let out = run(&bundled("fig8"))?;
    let face = cpu_plateau(out.log(), "face_recognition").ok_or("no face plateau")? as f64;
    let prime = cpu_plateau(out.log(), "prime_sum").ok_or("no prime plateau")? as f64;
    let ratio = face / prime;
    ensure((ratio - 4.0).abs() <= 0.2, || format!("plateau ratio {ratio}"))?;
    let cfg = WorkloadConfig::default();
    let work_ratio = cfg.prime_sum_work * cfg.face_work_factor / cfg.prime_sum_work;
    ensure((work_ratio - 4.0).abs() <= 0.2, || format!("work ratio {work_ratio}"))?;
    let base = shortened(bundled("fig7_2"), 100);
    for seed in 0..20 {
        let out = run(&Scenario { seed, ..base.clone() })?;
        check_ordering(&out).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok(format!("cpu plateau ratio {ratio:.2}; face > prime_sum > sum in 20/20 seeds"))
}

fn check_fig9(out: &RunOutcome) -> Result<(), String> {
    let rows = &out.report.video_by_size;
    ensure(rows.len() >= 2, || "fewer than two sizes".into())?;
    let mut last_gap = f64::NEG_INFINITY;
    for row in rows {
        let (Some(e), Some(c)) = (row.edge_tx, row.cloud_tx) else {
            return Err(format!("size {} lacks an edge or cloud sample", row.size_mb));
        };
        ensure(c - e > last_gap, || format!("gap not increasing at {} MB", row.size_mb))?;
        last_gap = c - e;
    }
    let computes: Vec<f64> = out.report.video.iter().map(|v| v.compute_time.as_secs_f64()).collect();
    let m = mean(&computes).unwrap_or(0.0);
    ensure((m - 0.14).abs() <= 0.02, || format!("mean compute {m}"))?;
    let first = computes.first().copied().unwrap_or(0.0);
    ensure(computes.iter().all(|c| *c == first), || "compute varies with size".into())?;
    Ok(())
}

fn criterion_5() -> Check {
    let out = run(&bundled("fig9"))?;
    check_fig9(&out)?;
    let bw = Bandwidths::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let compute = SimTime::from_secs_f64(0.14);
    for _ in 0..1000 {
        let mut sizes: Vec<f64> = (0..rng.gen_range(2..8)).map(|_| rng.gen_range(1.0..2000.0)).collect();
        sizes.sort_by(f64::total_cmp);
        sizes.dedup();
        let gaps: Vec<f64> = sizes
            .iter()
            .map(|s| {
                let e = serve_video(*s, Location::Edge, &bw, compute);
                let c = serve_video(*s, Location::Cloud, &bw, compute);
                c.transmission_time.as_secs_f64() - e.transmission_time.as_secs_f64()
            })
            .collect();
        ensure(gaps.windows(2).all(|w| w[1] > w[0]), || format!("gaps {gaps:?} for sizes {sizes:?}"))?;
    }
    Ok(format!("{} sizes with growing gap; compute mean 0.14 s", out.report.video_by_size.len()))
}

const PIPELINE: [EventKind; 6] = [
    EventKind::TemplateSelected,
    EventKind::ParamsInserted,
    EventKind::NfResolved,
    EventKind::ParamsUpdated,
    EventKind::PodAssigned,
    EventKind::ResourceGranted,
];

fn is_subsequence(trace: &[EventKind], pattern: &[EventKind]) -> bool {
    let mut it = trace.iter();
    pattern.iter().all(|p| it.any(|k| k == p))
}

/// Returns the number of successful traces checked.
fn check_traces(out: &RunOutcome) -> Result<usize, String> {
    let log = out.log();
    let protocol: BTreeMap<&str, &str> = log
        .of_kind(EventKind::ProtocolIdentified)
        .filter_map(|e| Some((e.subject_field("req")?, e.field("protocol")?)))
        .collect();
    let by_req = log.by_subject("req");
    let mut checked = 0;
    for (req, events) in &by_req {
        let kinds: Vec<EventKind> = events.iter().map(|e| e.kind).collect();
        if !kinds.contains(&EventKind::ServiceCompleted) {
            continue;
        }
        let legacy = protocol.get(req.as_str()) == Some(&"legacy");
        let containers = kinds.iter().filter(|k| **k == EventKind::ContainerStarted).count();
        let mut pattern = vec![EventKind::RequestReceived, EventKind::ProtocolIdentified];
        if legacy {
            pattern.push(EventKind::Converted);
        }
        pattern.extend(PIPELINE);
        pattern.extend(std::iter::repeat_n(EventKind::ContainerStarted, containers));
        pattern.extend([EventKind::InstanceActive, EventKind::ServiceCompleted]);
        ensure(containers >= 1, || format!("req {req}: no container started"))?;
        ensure(is_subsequence(&kinds, &pattern), || format!("req {req}: trace {kinds:?}"))?;
        ensure(legacy == kinds.contains(&EventKind::Converted), || format!("req {req}: Converted iff legacy violated"))?;
        let times: Vec<SimTime> = events.iter().map(|e| e.t).collect();
        ensure(times.windows(2).all(|w| w[0] <= w[1]), || format!("req {req}: time goes backwards"))?;
        checked += 1;
    }
    Ok(checked)
}

fn mixed_protocols() -> Scenario {
    let mut s = bundled("containers");
    s.name = "mixed".into();
    let extra: Vec<_> = s
        .requests
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.t += SimTime::from_secs(400);
            r.protocol = match r.protocol {
                osmec::nf::cpcf::ProtocolKind::Http => osmec::nf::cpcf::ProtocolKind::Legacy,
                osmec::nf::cpcf::ProtocolKind::Legacy => osmec::nf::cpcf::ProtocolKind::Http,
            };
            r
        })
        .collect();
    s.requests.extend(extra);
    s.manual_releases.clear();
    s
}

fn criterion_6() -> Check {
    let mut total = 0;
    for s in [mixed_protocols(), bundled("fig8"), bundled("fig9"), shortened(bundled("fig7_2"), 50)] {
        let out = run(&s)?;
        total += check_traces(&out).map_err(|e| format!("{}: {e}", s.name))?;
    }
    ensure(total > 0, || "no successful traces".into())?;
    Ok(format!("{total} successful traces conform"))
}

fn conserved(vim: &Vim, caps: &BTreeMap<NodeId, ResourceVector>) -> bool {
    let free = vim.free_snapshot();
    caps.iter().all(|(node, cap)| {
        let live: ResourceVector = vim.grants().filter(|g| g.node_id == *node).map(|g| g.live_amount()).sum();
        live + free[node] == *cap
    })
}

fn fuzz_vim(events: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vim = Vim::new();
    let mut caps = BTreeMap::new();
    for n in 0..3 {
        let cap = ResourceVector::new(4000, 8192.0, 10_000, 1000);
        vim.add_node(NodeId(n), cap);
        caps.insert(NodeId(n), cap);
    }
    let mut grants: Vec<GrantId> = Vec::new();
    for step in 0..events {
        match rng.gen_range(0..10) {
            0..=3 => {
                let amount = ResourceVector::new(
                    rng.gen_range(0..1500),
                    rng.gen_range(0.0..3000.0),
                    rng.gen_range(0..3000),
                    rng.gen_range(0..300),
                );
                let node = NodeId(rng.gen_range(0..3));
                let before = vim.free_snapshot();
                match vim.allocate(node, amount, InstanceId(step as u64), PodId(step as u64)) {
                    Ok(g) => grants.push(g.grant_id),
                    Err(_) => ensure(vim.free_snapshot() == before, || format!("step {step}: failed allocate moved the pool"))?,
                }
            }
            4..=5 if !grants.is_empty() => {
                let g = grants[rng.gen_range(0..grants.len())];
                vim.release(g, Components::CPU).map_err(|e| e.to_string())?;
            }
            6..=7 if !grants.is_empty() => {
                let g = grants[rng.gen_range(0..grants.len())];
                vim.release(g, Components::MEMORY_AND_OTHER).map_err(|e| e.to_string())?;
            }
            _ if !grants.is_empty() => {
                // fault: the whole grant is rolled back
                let g = grants.swap_remove(rng.gen_range(0..grants.len()));
                vim.release(g, Components::ALL).map_err(|e| e.to_string())?;
            }
            _ => {}
        }
        ensure(conserved(&vim, &caps), || format!("step {step}: conservation broken"))?;
    }
    Ok(())
}

fn failed_instantiation_restores_pool() -> Result<(), String> {
    // container failure
    let mut s = Scenario { warm_images: true, ..Scenario::default() };
    s.faults.container_failures.push(ContainerFault { request: 1, container: "face_recognition".into() });
    let mut system = System::boot(&s).map_err(|e| e.to_string())?;
    let before = system.mano().vim().free_snapshot();
    let sub = Submission {
        request_id: 1,
        service_class: "intensive_computation".into(),
        service_name: "face_recognition".into(),
        input: serde_json::json!({ "image_id": "x" }),
        mode: InstantiationMode::Parallel,
        protocol: osmec::nf::cpcf::ProtocolKind::Http,
        origin: "test".into(),
    };
    system.submit(&sub).map_err(|e| e.to_string())?;
    system.run(None);
    ensure(system.log().count(EventKind::InstanceFailed) == 1, || "fault did not fail the instance".into())?;
    ensure(system.mano().vim().free_snapshot() == before, || "pool not restored after container failure".into())?;

    // exhausted cluster
    let small = Scenario {
        nodes: vec![NodeSpec { capacity: ResourceVector::new(100, 10.0, 10, 1), idle_pods: 1 }],
        ..Scenario::default()
    };
    let mut system = System::boot(&small).map_err(|e| e.to_string())?;
    let before = system.mano().vim().free_snapshot();
    let resp = system.submit(&sub).map_err(|e| e.to_string())?;
    ensure(resp.error_code().as_deref() == Some("ClusterExhausted"), || format!("got {:?}", resp.error_code()))?;
    ensure(system.mano().vim().free_snapshot() == before, || "pool not restored after exhaustion".into())?;
    Ok(())
}

fn criterion_7() -> Check {
    fuzz_vim(10_000, 7)?;
    failed_instantiation_restores_pool()?;
    for s in [bundled("containers"), bundled("fig8"), shortened(bundled("fig7_1"), 50)] {
        let out = run(&s)?;
        ensure(out.system.mano().vim().is_conserved(), || format!("{}: not conserved", s.name))?;
    }
    Ok("10^4 fuzzed events conserved; failed instantiations restore the pool".into())
}

fn criterion_8() -> Check {
    let started = Instant::now();
    let mut oracle: u128 = 0;
    for n in 0..=10_000u64 {
        if n >= 2 && (2..n).take_while(|d| d * d <= n).all(|d| n % d != 0) {
            oracle += u128::from(n);
        }
        let got = compute_prime_sum(n);
        ensure(got == oracle, || format!("prime_sum({n}) = {got}, oracle {oracle}"))?;
    }
    ensure(compute_prime_sum(10) == 17, || "prime_sum(10) != 17".into())?;
    let mut running: u128 = 0;
    for n in 0..=1_000_000u64 {
        running += u128::from(n);
        ensure(compute_sum(n) == running, || format!("sum({n})"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("prime_sum n<=10^4, sum n<=10^6, {elapsed:.2?}"))
}

fn criterion_9() -> Check {
    let names = ["containers", "fig7_1", "fig7_2", "fig8", "fig9"];
    for name in names {
        let s = bundled(name);
        let a = run(&s)?;
        let b = run(&s)?;
        ensure(a.log().to_text() == b.log().to_text(), || format!("{name}: logs differ"))?;
        ensure(a.report.log_hash == b.report.log_hash, || format!("{name}: hashes differ"))?;
    }
    for seed in [1001, 2002] {
        let c = run(&Scenario { seed, ..bundled("containers") })?;
        check_cardinality(&c)?;
        check_traces(&c)?;
        let f8 = run(&Scenario { seed, ..bundled("fig8") })?;
        check_fig8(&f8)?;
        let f9 = run(&Scenario { seed, ..bundled("fig9") })?;
        check_fig9(&f9)?;
        let f72 = run(&Scenario { seed, ..shortened(bundled("fig7_2"), 100) })?;
        check_ordering(&f72)?;
        let f71 = run(&Scenario { seed, ..shortened(bundled("fig7_1"), 100) })?;
        for class in ["intensive_computation", "high_throughput"] {
            let p = mean(&f71.report.durations(class, "parallel")).unwrap_or(f64::NAN);
            let q = mean(&f71.report.durations(class, "sequential")).unwrap_or(f64::NAN);
            ensure(p < q, || format!("seed {seed} {class}: parallel {p} vs sequential {q}"))?;
        }
        for out in [&c, &f8, &f9, &f72, &f71] {
            ensure(out.system.mano().vim().is_conserved(), || format!("seed {seed}: not conserved"))?;
        }
    }
    Ok(format!("{} bundled scenarios byte-identical across runs; other seeds keep criteria", names.len()))
}

type Criterion = (&'static str, fn() -> Check);

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("container cardinality", criterion_1),
        ("parallel dominance", criterion_2),
        ("cpu/memory release asymmetry", criterion_3),
        ("cost ratios", criterion_4),
        ("video gap shape", criterion_5),
        ("workflow conformance", criterion_6),
        ("resource conservation", criterion_7),
        ("compute oracles", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        // written to the raw handle so the lines survive output capture
        let line = match result {
            Ok(detail) => format!("PASS {}: {name} ({detail})\n", i + 1),
            Err(why) => {
                failed.push(i + 1);
                format!("FAIL {}: {name} ({why})\n", i + 1)
            }
        };
        let _ = std::io::stderr().write_all(line.as_bytes());
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
