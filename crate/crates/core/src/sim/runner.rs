//! Boots a complete edge system on one bus and drives a scenario through it.

use serde_json::json;

use super::config::{Scenario, ScheduledRequest};
use super::log::EventLog;
use super::report::MetricsReport;
use crate::bus::{Bus, BusConfig, BusError, Message, Method};
use crate::mano::{client as mano_client, InstantiationMode, Mano, ManoConfig, NodeSpec, ReleaseRule, TemplateError, MANO};
use crate::nf::asf::Asf;
use crate::nf::cpcf::{Cpcf, ProtocolKind, ServiceRequest};
use crate::nf::nrf::{self, Nrf};
use crate::nf::srf::{self, Srf};
use crate::nf::udm::Udm;
use crate::nf::upf::Upf;
use crate::nf::{NfError, NfKind, ASF, CPCF, NRF, SRF, UDM, UPF};
use crate::time::SimTime;
use crate::workloads::video::{VcacheEndpoint, VCACHE};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("boot failed: {0}")]
    Boot(#[from] NfError),
}

/// A user request as it reaches the access side.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub request_id: u64,
    pub service_class: String,
    pub service_name: String,
    pub input: serde_json::Value,
    pub mode: InstantiationMode,
    pub protocol: ProtocolKind,
    pub origin: String,
}

impl Submission {
    pub fn from_scheduled(r: &ScheduledRequest, origin: &str) -> Self {
        Submission {
            request_id: r.request_id,
            service_class: r.spec.service_class.clone(),
            service_name: r.spec.service_name.clone(),
            input: r.spec.input.clone(),
            mode: r.spec.mode,
            protocol: r.spec.protocol,
            origin: origin.to_string(),
        }
    }

    /// The CPCF ingest message: an SBM/1 frame or an `XMEC1` frame as body.
    pub fn ingest_message(&self) -> Message {
        let sr = ServiceRequest {
            service_class: self.service_class.clone(),
            service_name: self.service_name.clone(),
            input: self.input.clone(),
            mode: self.mode,
            origin: self.origin.clone(),
        };
        let payload = match self.protocol {
            ProtocolKind::Http => sr.to_http(self.request_id).to_bytes(),
            ProtocolKind::Legacy => sr.to_legacy(),
        };
        let base = Message::request(Method::Post, "/sbi/cpcf/ingest")
            .and_then(|m| m.with_header("x-request-id", self.request_id.to_string()))
            .and_then(|m| m.with_header("x-origin", self.origin.clone()))
            .expect("static headers");
        // a class that cannot travel as a header is left out; the CPCF rejects it
        base.clone().with_header("x-service-class", self.service_class.clone()).unwrap_or(base).with_body(payload)
    }
}

/// Every NF, the MANO and the video cache on one bus.
pub struct System {
    pub bus: Bus,
}

impl System {
    pub fn boot(s: &Scenario) -> Result<System, RunError> {
        let mut bus = Bus::with_config(s.seed, BusConfig { hop_latency: s.hop_latency, ..BusConfig::default() });
        let config = ManoConfig {
            overhead: s.overhead,
            container_jitter: s.container_jitter,
            workload: s.workload.clone(),
            release_rules: s
                .manual_releases
                .iter()
                .filter_map(|r| r.after_completion.map(|after| ReleaseRule { selector: r.instance_selector.clone(), after }))
                .collect(),
            container_faults: s.faults.container_failures.clone(),
            ..ManoConfig::default()
        };
        bus.register_endpoint(UDM, Udm::new())?;
        bus.register_endpoint(NRF, Nrf::new(s.fetch_delay))?;
        bus.register_endpoint(SRF, Srf)?;
        bus.register_endpoint(CPCF, Cpcf)?;
        bus.register_endpoint(ASF, Asf)?;
        bus.register_endpoint(UPF, Upf)?;
        bus.register_endpoint(VCACHE, VcacheEndpoint::new(s.workload.cache_storage_mb, s.catalog.clone()))?;
        bus.register_endpoint(MANO, Mano::new(s.templates.clone(), config)?)?;

        for t in &s.templates {
            for nf in &t.managed_nfs {
                let d = nf.descriptor();
                if d.nf_kind == NfKind::App {
                    srf::client::register(&mut bus, &d, t.app_class)?;
                } else {
                    nrf::client::store(&mut bus, &d)?;
                }
            }
        }
        if s.warm_images {
            bus.with_endpoint::<Nrf, _>(NRF, |n, _| n.prefetch_all());
        }
        for n in &s.nodes {
            mano_client::register_node(&mut bus, n)?;
        }
        ::log::info!("booted {} node(s), {} template(s), seed {}", s.nodes.len(), s.templates.len(), s.seed);
        Ok(System { bus })
    }

    pub fn mano(&self) -> &Mano {
        self.bus.endpoint::<Mano>(MANO).expect("MANO is registered at boot")
    }

    pub fn log(&self) -> &EventLog {
        self.bus.log()
    }

    pub fn schedule_submission(&mut self, at: SimTime, sub: &Submission) {
        self.bus.schedule(at, CPCF, sub.ingest_message());
    }

    /// Delivers `sub` now and returns the MANO's reply.
    pub fn submit(&mut self, sub: &Submission) -> Result<Message, BusError> {
        self.bus.send_request(CPCF, sub.ingest_message())
    }

    pub fn schedule_release(&mut self, at: SimTime, selector: &crate::mano::InstanceSelector) {
        let m = Message::request(Method::Post, "/ebi/mano/releases")
            .and_then(|m| m.with_header("x-origin", "script"))
            .expect("static path")
            .with_json(&json!({ "selector": selector.to_string() }));
        self.bus.schedule(at, MANO, m);
    }

    /// Runs the agenda; returns a line for every delivery that failed.
    pub fn run(&mut self, until: Option<SimTime>) -> Vec<String> {
        self.bus
            .run_until(until)
            .into_iter()
            .map(|(due, result)| {
                let what = format!("{} {} @{}", due.target, due.msg.path().unwrap_or(""), due.at);
                match result {
                    Ok(resp) => format!("{what}: {} {}", resp.error_code().unwrap_or_default(), resp.error_detail()),
                    Err(e) => format!("{what}: {e}"),
                }
            })
            .collect()
    }
}

pub struct RunOutcome {
    pub system: System,
    pub report: MetricsReport,
    /// Deliveries answered with an error.
    pub failures: Vec<String>,
}

impl RunOutcome {
    pub fn log(&self) -> &EventLog {
        self.system.log()
    }
}

/// Executes every request of `s` on a freshly booted system.
pub fn run_scenario(s: &Scenario) -> Result<RunOutcome, RunError> {
    let mut system = System::boot(s)?;
    for r in s.scheduled_requests() {
        system.schedule_submission(r.t, &Submission::from_scheduled(&r, "scenario"));
    }
    for r in &s.manual_releases {
        if let Some(t) = r.t {
            system.schedule_release(t, &r.instance_selector);
        }
    }
    let interval = system.mano().config().heartbeat_interval;
    let intervals = system.mano().config().liveness_intervals;
    for f in &s.faults.node_failures {
        let silence = Message::request(Method::Post, format!("/ebi/mano/nodes/{}/silence", f.node)).expect("valid path");
        system.bus.schedule(f.t, MANO, silence);
        let mut tick_at = f.t;
        for _ in 0..intervals + 2 {
            tick_at += interval;
            system.bus.schedule(tick_at, MANO, Message::request(Method::Post, "/ebi/mano/controller/tick").expect("static path"));
        }
        if let Some(after) = f.recover_after {
            let spec: &NodeSpec = &s.nodes[f.node.0 as usize];
            let m = Message::request(Method::Post, "/ebi/mano/nodes").expect("static path").with_json(spec);
            system.bus.schedule(f.t + after, MANO, m);
        }
    }
    let failures = system.run(s.until);
    let report = MetricsReport::from_log(system.log());
    ::log::info!("{}: {} events, {} completed, {} failed deliveries", s.name, system.log().len(), report.completed, failures.len());
    Ok(RunOutcome { system, report, failures })
}
