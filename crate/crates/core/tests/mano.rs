use serde_json::json;

use osmec::bus::{Message, Method};
use osmec::mano::{client, InstanceId, InstanceState, InstantiationMode, MANO};
use osmec::nf::cpcf::ProtocolKind;
use osmec::sim::{run_scenario, EventKind, Scenario, Submission, System};
use osmec::SimTime;

fn submission(id: u64, class: &str, name: &str, input: serde_json::Value) -> Submission {
    Submission {
        request_id: id,
        service_class: class.into(),
        service_name: name.into(),
        input,
        mode: InstantiationMode::Parallel,
        protocol: ProtocolKind::Http,
        origin: "test".into(),
    }
}

fn warm() -> System {
    System::boot(&Scenario { warm_images: true, container_jitter: 0.0, ..Scenario::default() }).unwrap()
}

#[test]
fn prime_sum_request_completes_with_17() {
    let mut sys = warm();
    let resp = sys.submit(&submission(1, "intensive_computation", "prime_sum", json!({ "n": 10 }))).unwrap();
    assert!(resp.is_success(), "{}", resp.error_detail());
    sys.run(None);
    let inst = sys.mano().instance(InstanceId(1)).unwrap();
    assert_eq!(inst.state, InstanceState::MemoryHeld);
    assert_eq!(inst.result.as_ref().unwrap()["value"], 17);
}

#[test]
fn manual_release_paths() {
    let mut sys = warm();
    sys.submit(&submission(1, "intensive_computation", "face_recognition", json!({ "image_id": "a" }))).unwrap();
    // containers are not up yet
    let err = client::release_memory(&mut sys.bus, InstanceId(1), "test").unwrap_err();
    assert_eq!(err.code(), Some("WrongState"));
    sys.run(None);
    let free_before = sys.mano().vim().free_snapshot();
    let first = client::release_memory(&mut sys.bus, InstanceId(1), "test").unwrap();
    assert!(!first.noop);
    assert_ne!(sys.mano().vim().free_snapshot(), free_before);
    let second = client::release_memory(&mut sys.bus, InstanceId(1), "test").unwrap();
    assert!(second.noop);
    assert_eq!(sys.log().count(EventKind::MemoryReleased), 1);
    let unknown = client::release_memory(&mut sys.bus, InstanceId(99), "test").unwrap_err();
    assert_eq!(unknown.code(), Some("UnknownInstance"));
    assert!(!sys.bus.is_registered("app-1"));
}

#[test]
fn unknown_class_and_service_rejected() {
    let mut sys = warm();
    let resp = sys.submit(&submission(1, "batch", "sum", json!({}))).unwrap();
    assert_eq!(resp.error_code().as_deref(), Some("UnknownServiceClass"));
    let resp = sys.submit(&submission(2, "high_throughput", "sum", json!({}))).unwrap();
    assert_eq!(resp.error_code().as_deref(), Some("UnknownService"));
    assert_eq!(sys.log().count(EventKind::RequestRejected), 2);
    assert!(sys.mano().instances().next().is_none());
}

#[test]
fn state_goes_through_api_server() {
    let mut sys = warm();
    let rev = client::state_put(&mut sys.bus, "custom/key", b"v1").unwrap();
    let got = client::state_get(&mut sys.bus, "custom/key").unwrap().unwrap();
    assert_eq!(got["value"], "v1");
    assert_eq!(got["revision"], rev);
    assert_eq!(client::state_get(&mut sys.bus, "missing").unwrap(), None);
    let writes = sys.log().of_kind(EventKind::StateWrite).count();
    assert_eq!(writes as u64, sys.mano().store().revision());
}

#[test]
fn node_failure_fails_running_instances_and_rolls_back() {
    let text = r#"{
        "seed": 3,
        "warm_images": true,
        "nodes": [{"capacity": {"cpu": 8000, "memory": 4096, "storage": 10000, "bandwidth": 1000}, "idle_pods": 1}],
        "requests": [{"t": 0, "service_class": "high_throughput", "service_name": "video",
                      "input": {"video_id": "v", "size_mb": 100000}}],
        "faults": {"node_failures": [{"node": 0, "t": 3, "recover_after": 60}]}
    }"#;
    let out = run_scenario(&Scenario::from_json(text, None).unwrap()).unwrap();
    let log = out.log();
    assert_eq!(log.count(EventKind::InstanceFailed), 1);
    assert!(log.of_kind(EventKind::FaultEvent).any(|e| e.subject_field("pod").is_some()));
    assert_eq!(log.count(EventKind::NodeRegistered), 2);
    let mano = out.system.mano();
    assert!(mano.vim().is_conserved());
    assert!(mano.vim().grants().all(|g| !g.is_live()));
    let failed_at = log.of_kind(EventKind::InstanceFailed).next().unwrap().t;
    assert!(failed_at > SimTime::from_secs(3) && failed_at <= SimTime::from_secs(3 + 5 * 5));
}

#[test]
fn container_fault_rolls_back() {
    let text = r#"{
        "warm_images": true,
        "requests": [{"t": 0, "service_class": "intensive_computation", "service_name": "sum", "input": {"n": 5}},
                     {"t": 0, "service_class": "intensive_computation", "service_name": "prime_sum", "input": {"n": 5}}],
        "faults": {"container_failures": [{"request": 2, "container": "prime_sum"}]}
    }"#;
    let out = run_scenario(&Scenario::from_json(text, None).unwrap()).unwrap();
    let log = out.log();
    assert_eq!(log.count(EventKind::InstanceFailed), 1);
    assert_eq!(log.count(EventKind::ServiceCompleted), 1);
    let rollback = log.of_kind(EventKind::CpuReleased).filter(|e| e.field("reason") == Some("rollback")).count();
    assert_eq!(rollback, 1);
    assert!(out.system.mano().vim().is_conserved());
}

#[test]
fn templates_route_lists_both() {
    let mut sys = warm();
    let ts = client::templates(&mut sys.bus).unwrap();
    assert_eq!(ts.len(), 2);
    let m = Message::request(Method::Get, "/ebi/mano/nodes/0").unwrap();
    let resp = sys.bus.send_request(MANO, m).unwrap();
    assert!(resp.is_success());
}
