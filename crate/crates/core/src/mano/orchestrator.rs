//! The MANO endpoint: master node (API server, scheduler, controller,
//! state store), node agents and the VIM, driven by bus messages.
//!
//! | path | method | purpose |
//! |---|---|---|
//! | `/ebi/mano/requests` | POST | service request (JSON or legacy TLV) |
//! | `/ebi/mano/instances/{id}` | GET | instance view |
//! | `/ebi/mano/instances/{id}/release-memory` | POST | manual release |
//! | `/ebi/mano/instances/{id}/complete` | POST | service finished (scheduled) |
//! | `/ebi/mano/releases` | POST | release every instance matching a selector |
//! | `/ebi/mano/pods/{pod}/containers/{nf}/started` | POST | node-agent report (scheduled) |
//! | `/ebi/mano/nodes` | POST | register a node |
//! | `/ebi/mano/nodes/{id}` | GET | node view |
//! | `/ebi/mano/nodes/{id}/silence` | POST | stop a node's heartbeats |
//! | `/ebi/mano/controller/tick` | POST | liveness scan |
//! | `/ebi/mano/templates` | GET | template catalog |
//! | `/ebi/state/{key}` | GET, PUT | API-server entry to the state store |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::mpsc::Receiver;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cluster::{Cluster, ClusterError, DEFAULT_HEARTBEAT_INTERVAL, DEFAULT_LIVENESS_INTERVALS};
use super::instance::{Instance, InstanceState, LifecycleError};
use super::resources::{Components, ResourceGrant, ResourceVector, Vim, VimError};
use super::state::{StateRecord, StateStore};
use super::template::{validate_catalog, Template, TemplateError, ALL_SERVICES};
use super::{GrantId, InstanceId, NodeId, PodId, MANO};
use crate::bus::{Bus, Endpoint, Message, Method, Status};
use crate::nf::cpcf::ServiceRequest;
use crate::nf::udm::{self, ACTIVE_APPS, CHARGING};
use crate::nf::{asf, nrf, NfError, ServiceClass, StorageClass};
use crate::sim::{EventKind, Fields};
use crate::time::SimTime;
use crate::workloads::app::{app_endpoint_name, invoke_message, AppEndpoint, InvokeRequest, InvokeResult};
use crate::workloads::{charge, Rates, Usage, WorkloadConfig};

pub const DEFAULT_OVERHEAD: SimTime = SimTime::from_secs(1);

/// Which instances a scripted release applies to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstanceSelector {
    Request(u64),
    Service(String),
    All,
}

impl InstanceSelector {
    pub fn matches(&self, inst: &Instance) -> bool {
        match self {
            InstanceSelector::Request(r) => inst.request_id == *r,
            InstanceSelector::Service(s) => inst.service_name == *s,
            InstanceSelector::All => true,
        }
    }
}

impl fmt::Display for InstanceSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceSelector::Request(r) => write!(f, "request:{r}"),
            InstanceSelector::Service(s) => write!(f, "service:{s}"),
            InstanceSelector::All => f.write_str("all"),
        }
    }
}

impl FromStr for InstanceSelector {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "all" => Ok(InstanceSelector::All),
            Some(("request", r)) => r.parse().map(InstanceSelector::Request).map_err(|_| format!("bad request index {r:?}")),
            Some(("service", name)) if !name.is_empty() => Ok(InstanceSelector::Service(name.to_string())),
            _ => Err(format!("selector {s:?} is not all, request:<index> or service:<name>")),
        }
    }
}

impl Serialize for InstanceSelector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InstanceSelector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Memory held by completed instances matching `selector` is released
/// `after` their completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseRule {
    pub selector: InstanceSelector,
    pub after: SimTime,
}

/// Injected startup failure of one container of one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerFault {
    pub request: u64,
    pub container: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManoConfig {
    /// Non-container setup time before the first container starts.
    pub overhead: SimTime,
    /// Relative spread applied to container startup costs.
    pub container_jitter: f64,
    pub heartbeat_interval: SimTime,
    pub liveness_intervals: u32,
    pub workload: WorkloadConfig,
    pub release_rules: Vec<ReleaseRule>,
    pub container_faults: Vec<ContainerFault>,
}

impl Default for ManoConfig {
    fn default() -> Self {
        ManoConfig {
            overhead: DEFAULT_OVERHEAD,
            container_jitter: 0.1,
            heartbeat_interval: DEFAULT_HEARTBEAT_INTERVAL,
            liveness_intervals: DEFAULT_LIVENESS_INTERVALS,
            workload: WorkloadConfig::default(),
            release_rules: Vec::new(),
            container_faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ManoError {
    #[error("unknown service class {0:?}")]
    UnknownServiceClass(String),
    #[error("template for {class} has no service {name:?}")]
    UnknownService { class: ServiceClass, name: String },
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("instance {instance} is {state}")]
    WrongState { instance: InstanceId, state: InstanceState },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Vim(#[from] VimError),
    #[error(transparent)]
    Nf(#[from] NfError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error("container {container} of pod {pod} failed to start")]
    ContainerStartFailure { pod: PodId, container: String },
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl ManoError {
    pub fn code(&self) -> String {
        match self {
            ManoError::UnknownServiceClass(_) => "UnknownServiceClass".into(),
            ManoError::UnknownService { .. } => "UnknownService".into(),
            ManoError::UnknownInstance(_) => "UnknownInstance".into(),
            ManoError::WrongState { .. } => "WrongState".into(),
            ManoError::UnknownNode(_) => "UnknownNode".into(),
            ManoError::Cluster(ClusterError::ClusterExhausted(_)) => "ClusterExhausted".into(),
            ManoError::Cluster(_) => "ClusterError".into(),
            ManoError::Vim(VimError::InsufficientResources { .. }) => "InsufficientResources".into(),
            ManoError::Vim(VimError::ZeroRequest) => "ZeroRequest".into(),
            ManoError::Vim(_) => "VimError".into(),
            ManoError::Nf(e) => e.code().unwrap_or("NfUnavailable").into(),
            ManoError::Lifecycle(_) => "IllegalTransition".into(),
            ManoError::ContainerStartFailure { .. } => "ContainerStartFailure".into(),
            ManoError::BadRequest(_) => "BadRequest".into(),
        }
    }

    fn status(&self) -> Status {
        match self {
            ManoError::UnknownServiceClass(_) | ManoError::BadRequest(_) => Status::BAD_REQUEST,
            ManoError::UnknownInstance(_) | ManoError::UnknownNode(_) => Status::NOT_FOUND,
            ManoError::WrongState { .. } | ManoError::Lifecycle(_) => Status::CONFLICT,
            ManoError::Cluster(_) | ManoError::Vim(_) => Status::UNAVAILABLE,
            ManoError::UnknownService { .. } | ManoError::Nf(_) | ManoError::ContainerStartFailure { .. } => {
                Status::UNPROCESSABLE
            }
        }
    }

    fn to_message(&self) -> Message {
        Message::error(self.status(), &self.code(), self)
    }
}

/// Reply to a service request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub request_id: u64,
    pub instance_id: InstanceId,
    pub state: InstanceState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseOutcome {
    pub instance_id: InstanceId,
    pub state: InstanceState,
    /// True when the memory had already been released.
    pub noop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub capacity: ResourceVector,
    #[serde(default)]
    pub idle_pods: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultReport {
    pub node: NodeId,
    pub pod: Option<PodId>,
    pub instance: Option<InstanceId>,
}

#[derive(Debug, Clone)]
struct Activation {
    pending: BTreeSet<String>,
    count: usize,
}

/// NF's MANO as a single serialized endpoint.
pub struct Mano {
    templates: BTreeMap<ServiceClass, Template>,
    instances: BTreeMap<InstanceId, Instance>,
    cluster: Cluster,
    vim: Vim,
    store: StateStore,
    config: ManoConfig,
    next_instance: u64,
    activations: BTreeMap<InstanceId, Activation>,
    usage: BTreeMap<InstanceId, InvokeResult>,
}

impl Mano {
    pub fn new(templates: Vec<Template>, config: ManoConfig) -> Result<Mano, TemplateError> {
        validate_catalog(&templates)?;
        Ok(Mano {
            templates: templates.into_iter().map(|t| (t.app_class, t)).collect(),
            instances: BTreeMap::new(),
            cluster: Cluster::new(config.heartbeat_interval, config.liveness_intervals),
            vim: Vim::new(),
            store: StateStore::new(),
            config,
            next_instance: 0,
            activations: BTreeMap::new(),
            usage: BTreeMap::new(),
        })
    }

    pub fn templates(&self) -> impl Iterator<Item = &Template> {
        self.templates.values()
    }

    pub fn template(&self, class: ServiceClass) -> Option<&Template> {
        self.templates.get(&class)
    }

    pub fn instance(&self, id: InstanceId) -> Option<&Instance> {
        self.instances.get(&id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.instances.values()
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn vim(&self) -> &Vim {
        &self.vim
    }

    pub fn store(&self) -> &StateStore {
        &self.store
    }

    pub fn config(&self) -> &ManoConfig {
        &self.config
    }

    pub fn watch(&mut self, prefix: &str) -> Receiver<StateRecord> {
        self.store.watch(prefix)
    }

    // ---- API server ----

    /// The only path to the state store. Every write is logged.
    fn api_put(&mut self, bus: &mut Bus, key: &str, value: Vec<u8>) -> u64 {
        let rev = self.store.put(key, value);
        bus.record(EventKind::StateWrite, format!("key={key}"), Fields::new().with("rev", rev).with("via", "apiserver"));
        rev
    }

    fn put_json(&mut self, bus: &mut Bus, key: &str, value: Value) -> u64 {
        let bytes = serde_json::to_vec(&value).expect("JSON value encodes");
        self.api_put(bus, key, bytes)
    }

    fn put_instance(&mut self, bus: &mut Bus, id: InstanceId) {
        let inst = &self.instances[&id];
        let v = json!({ "state": inst.state, "node": inst.node, "pods": inst.pods, "grants": inst.grants });
        self.put_json(bus, &format!("instances/{id}"), v);
    }

    fn put_pod(&mut self, bus: &mut Bus, id: PodId) {
        let v = serde_json::to_value(self.cluster.pod(id)).expect("pod encodes");
        self.put_json(bus, &format!("pods/{id}"), v);
    }

    fn put_grant(&mut self, bus: &mut Bus, id: GrantId) {
        let v = serde_json::to_value(self.vim.grant(id)).expect("grant encodes");
        self.put_json(bus, &format!("grants/{id}"), v);
    }

    fn transition(&mut self, bus: &mut Bus, id: InstanceId, to: InstanceState) -> Result<(), ManoError> {
        let now = bus.now();
        self.instances.get_mut(&id).ok_or(ManoError::UnknownInstance(id))?.transition(to, now)?;
        self.put_instance(bus, id);
        Ok(())
    }

    fn subject(&self, id: InstanceId) -> String {
        self.instances.get(&id).map(Instance::subject).unwrap_or_else(|| format!("inst={id}"))
    }

    // ---- nodes ----

    pub fn register_node(&mut self, spec: &NodeSpec, bus: &mut Bus) -> Result<NodeId, ManoError> {
        let node = self.cluster.add_node(spec.capacity, bus.now());
        self.vim.add_node(node, spec.capacity);
        bus.record(
            EventKind::NodeRegistered,
            format!("node={node}"),
            resource_fields(Fields::new(), &spec.capacity).with("idle_pods", spec.idle_pods),
        );
        self.put_json(bus, &format!("nodes/{node}"), json!({ "capacity": spec.capacity, "failed": false }));
        for _ in 0..spec.idle_pods {
            let pod = self.cluster.add_idle_pod(node)?;
            bus.record(EventKind::PodCreated, format!("node={node} pod={pod}"), Fields::new().with("state", "Idle"));
            self.put_pod(bus, pod);
        }
        Ok(node)
    }

    // ---- template selection ----

    /// Creates an instance in Selected: predefined parameters go into the
    /// template's UDM table, every managed NF is resolved through the NRF,
    /// then the parameters are updated with the selection.
    pub fn select_template(&mut self, req: &ServiceRequest, request_id: u64, bus: &mut Bus) -> Result<InstanceId, ManoError> {
        let class: ServiceClass =
            req.service_class.parse().map_err(|_| ManoError::UnknownServiceClass(req.service_class.clone()))?;
        let template = self.templates.get(&class).ok_or_else(|| ManoError::UnknownServiceClass(req.service_class.clone()))?;
        if !template.serves(&req.service_name) {
            return Err(ManoError::UnknownService { class, name: req.service_name.clone() });
        }
        let template = template.clone();
        self.next_instance += 1;
        let id = InstanceId(self.next_instance);
        let inst = Instance::new(id, &template.template_id, request_id, class, &req.service_name, req.mode, req.input.clone(), bus.now());
        self.instances.insert(id, inst);
        let subject = self.subject(id);
        bus.record(
            EventKind::TemplateSelected,
            subject.clone(),
            Fields::new()
                .with("template", &template.template_id)
                .with("class", class)
                .with("service", &req.service_name)
                .with("mode", req.mode)
                .with("origin", if req.origin.is_empty() { "-" } else { &req.origin }),
        );
        self.put_instance(bus, id);

        match self.configure_parameters(&template, id, &subject, bus) {
            Ok(()) => Ok(id),
            Err(e) => {
                self.fail_instance(id, &e.code(), bus);
                Err(e)
            }
        }
    }

    fn configure_parameters(&mut self, t: &Template, id: InstanceId, subject: &str, bus: &mut Bus) -> Result<(), ManoError> {
        let table = &t.attributes.table;
        let arity = t.attributes.schema.len();
        udm::client::create_table(bus, table, &t.attributes.schema)?;
        let selection_key = format!("{id}:selection");
        let mut rows: Vec<Vec<String>> = t
            .attributes
            .rows
            .iter()
            .map(|r| {
                let mut row = r.clone();
                row[0] = format!("{id}:{}", r[0]);
                row
            })
            .collect();
        rows.push(padded(vec![selection_key.clone(), "pending".into()], arity));
        for row in &rows {
            udm::client::insert(bus, table, row)?;
        }
        bus.record(EventKind::ParamsInserted, subject, Fields::new().with("table", table).with("rows", rows.len()));

        let mut remote = 0;
        for nf in &t.managed_nfs {
            let r = nrf::client::resolve(bus, &nf.nf_id, subject)?;
            remote += usize::from(r.source == StorageClass::Remote);
            bus.record(
                EventKind::NfResolved,
                format!("{subject} nf={}", nf.nf_id),
                Fields::new().with("kind", nf.nf_kind).with("source", r.source).with("image", &r.image_ref),
            );
        }

        let inst = &self.instances[&id];
        let chosen: Vec<String> = t
            .dedicated()
            .filter(|n| n.nf_kind != crate::nf::NfKind::App || inst.service_name == ALL_SERVICES || n.nf_id == inst.service_name)
            .map(|n| n.nf_id.clone())
            .collect();
        let row = padded(vec![selection_key.clone(), chosen.join("+")], arity);
        udm::client::update(bus, table, &selection_key, &row)?;
        bus.record(
            EventKind::ParamsUpdated,
            subject,
            Fields::new().with("table", table).with("selection", chosen.join("+")).with("remote", remote),
        );
        Ok(())
    }

    // ---- instantiation ----

    /// Environment configuration, resource allocation, then activation. The
    /// first two complete now; activation schedules the node agent's
    /// container-started reports.
    pub fn instantiate(&mut self, id: InstanceId, bus: &mut Bus) -> Result<(), ManoError> {
        let result = self.instantiate_steps(id, bus);
        if let Err(e) = &result {
            self.fail_instance(id, &e.code(), bus);
        }
        result
    }

    fn instantiate_steps(&mut self, id: InstanceId, bus: &mut Bus) -> Result<(), ManoError> {
        let inst = self.instances.get(&id).ok_or(ManoError::UnknownInstance(id))?;
        if inst.state != InstanceState::Selected {
            return Err(ManoError::WrongState { instance: id, state: inst.state });
        }
        let template = self.templates[&inst.service_class].clone();
        let service = inst.service_name.clone();
        let mode = inst.mode;
        let subject = inst.subject();
        let requirements = template.requirements_for(&service);

        // (1) environment configuration
        let (pod, created) = self.cluster.locate_idle_pod(requirements, &self.vim)?;
        let node = self.cluster.pod(pod).expect("located pod exists").node_id;
        if created {
            bus.record(EventKind::PodCreated, format!("node={node} pod={pod}"), Fields::new().with("state", "Idle"));
        }
        self.cluster.assign(pod, id)?;
        {
            let inst = self.instances.get_mut(&id).expect("checked");
            inst.node = Some(node);
            inst.pods.push(pod);
        }
        self.put_pod(bus, pod);
        bus.record(EventKind::PodAssigned, format!("{subject} pod={pod}"), Fields::new().with("node", node));
        self.transition(bus, id, InstanceState::Configured)?;

        // (2) resource allocation
        let grant = self.vim.allocate(node, requirements, id, pod)?;
        self.instances.get_mut(&id).expect("checked").grants.push(grant.grant_id);
        self.put_grant(bus, grant.grant_id);
        bus.record(
            EventKind::ResourceGranted,
            format!("{subject} node={node} grant={}", grant.grant_id),
            resource_fields(Fields::new(), &grant.amount),
        );
        self.transition(bus, id, InstanceState::ResourcesAllocated)?;

        // (3) activation by the node agent
        let mut containers = template.containers_for(&service);
        if containers.is_empty() {
            return Err(ManoError::UnknownService { class: template.app_class, name: service });
        }
        for (_, cost) in containers.iter_mut() {
            *cost = bus.kernel_mut().jitter(*cost, self.config.container_jitter);
        }
        let start = bus.now() + self.config.overhead;
        let plan = self.cluster.plan_startup(pod, &containers, mode, start)?;
        for (container, at) in &plan {
            let m = Message::request(Method::Post, format!("/ebi/mano/pods/{pod}/containers/{container}/started"))
                .expect("valid path");
            bus.schedule(*at, MANO, m);
        }
        self.activations.insert(
            id,
            Activation { pending: plan.iter().map(|(c, _)| c.clone()).collect(), count: plan.len() },
        );
        Ok(())
    }

    fn container_started(&mut self, pod: PodId, container: &str, bus: &mut Bus) -> Result<Value, ManoError> {
        let id = self.cluster.pod(pod).and_then(|p| p.instance).ok_or(ClusterError::UnknownPod(pod))?;
        let Some(activation) = self.activations.get(&id) else {
            return Ok(json!({ "ignored": true }));
        };
        if !activation.pending.contains(container) {
            return Ok(json!({ "ignored": true }));
        }
        let inst = &self.instances[&id];
        let subject = format!("{} pod={pod}", inst.subject());
        let faulty = self.config.container_faults.iter().any(|f| f.request == inst.request_id && f.container == container);
        if faulty {
            bus.record(
                EventKind::FaultEvent,
                subject,
                Fields::new().with("kind", "container_start_failure").with("container", container),
            );
            self.cluster.fail_pod(pod)?;
            self.put_pod(bus, pod);
            self.fail_instance(id, "ContainerStartFailure", bus);
            return Err(ManoError::ContainerStartFailure { pod, container: container.to_string() });
        }
        bus.record(EventKind::ContainerStarted, subject.clone(), Fields::new().with("container", container));
        let activation = self.activations.get_mut(&id).expect("checked");
        activation.pending.remove(container);
        if !activation.pending.is_empty() {
            return Ok(json!({ "instance": id, "pending": activation.pending.len() }));
        }
        let count = activation.count;
        self.activations.remove(&id);
        self.cluster.mark_running(pod)?;
        self.put_pod(bus, pod);
        bus.record(EventKind::PodRunning, subject, Fields::new().with("containers", count));
        self.transition(bus, id, InstanceState::Active)?;
        let mode = self.instances[&id].mode;
        bus.record(EventKind::InstanceActive, self.subject(id), Fields::new().with("mode", mode).with("containers", count));
        if let Err(e) = self.serve(id, bus) {
            self.fail_instance(id, &e.code(), bus);
            return Err(e);
        }
        Ok(json!({ "instance": id, "state": self.instances[&id].state }))
    }

    /// Publishes the running APP, lets the ASF locate it and invokes it; the
    /// completion is scheduled after the service time.
    fn serve(&mut self, id: InstanceId, bus: &mut Bus) -> Result<(), ManoError> {
        let inst = &self.instances[&id];
        if inst.service_name == ALL_SERVICES {
            // a bare template instantiation has no service to run
            let m = Message::request(Method::Post, format!("/ebi/mano/instances/{id}/complete")).expect("valid path");
            bus.schedule(bus.now(), MANO, m);
            return Ok(());
        }
        let (class, service, input, subject) = (inst.service_class, inst.service_name.clone(), inst.input.clone(), inst.subject());
        let cache_on_miss = self.templates[&class].has_action("cache_video");
        let endpoint = app_endpoint_name(id);
        let app = AppEndpoint::new(id, &service, self.config.workload.clone(), cache_on_miss);
        bus.register_endpoint(&endpoint, app).map_err(NfError::from)?;
        bus.record(EventKind::EndpointRegistered, subject.clone(), Fields::new().with("endpoint", &endpoint));
        let row = vec![id.to_string(), class.as_str().to_string(), service.clone(), endpoint.clone()];
        udm::client::insert(bus, ACTIVE_APPS, &row)?;

        let selected = asf::client::select(bus, class, &service)?;
        let req = InvokeRequest { subject: subject.clone(), input };
        let resp = bus.send_request(&selected.endpoint, invoke_message(&selected.endpoint, &req)).map_err(NfError::from)?;
        if !resp.is_success() {
            return Err(ManoError::Nf(NfError::Rejected {
                endpoint: selected.endpoint,
                status: resp.status().map_or(0, |s| s.code()),
                code: resp.error_code().unwrap_or_else(|| "Unknown".into()),
                detail: resp.error_detail(),
            }));
        }
        let result: InvokeResult = resp
            .json()
            .map_err(|e| NfError::Decode { endpoint: selected.endpoint.clone(), detail: e.to_string() })?;
        bus.record(
            EventKind::ServiceInvoked,
            subject,
            Fields::new().with("service", &service).with("endpoint", &selected.endpoint),
        );
        let done = bus.now() + result.service_time();
        let m = Message::request(Method::Post, format!("/ebi/mano/instances/{id}/complete"))
            .expect("valid path")
            .with_json(&result);
        bus.schedule(done, MANO, m);
        self.usage.insert(id, result);
        Ok(())
    }

    /// Service done: the CPU goes back to the pool at once, the memory stays
    /// held until a manual release.
    fn complete(&mut self, id: InstanceId, bus: &mut Bus) -> Result<Value, ManoError> {
        let inst = self.instances.get(&id).ok_or(ManoError::UnknownInstance(id))?;
        if inst.state != InstanceState::Active {
            return Err(ManoError::WrongState { instance: id, state: inst.state });
        }
        let usage = self.usage.get(&id).cloned().unwrap_or(InvokeResult {
            result: Value::Null,
            compute_time: SimTime::ZERO,
            transfer_time: SimTime::ZERO,
            cpu_work: 0.0,
            memory_mb: 0.0,
        });
        let subject = inst.subject();
        let service = inst.service_name.clone();
        let class = inst.service_class;
        self.transition(bus, id, InstanceState::Completed)?;
        self.instances.get_mut(&id).expect("checked").result = Some(usage.result.clone());
        bus.record(
            EventKind::ServiceCompleted,
            subject.clone(),
            Fields::new()
                .with("service", &service)
                .with("compute", usage.compute_time)
                .with("transfer", usage.transfer_time)
                .with("result", compact(&usage.result)),
        );
        for gid in self.instances[&id].grants.clone() {
            self.release_grant(id, gid, Components::CPU, "completed", None, bus)?;
        }
        self.transition(bus, id, InstanceState::MemoryHeld)?;
        if udm::client::query(bus, ACTIVE_APPS, &id.to_string())?.is_some() {
            udm::client::delete(bus, ACTIVE_APPS, &id.to_string())?;
        }

        let template = &self.templates[&class];
        if template.has_action("charge") {
            let rate = |k: &str| template.attribute(k).and_then(|v| v.parse().ok()).unwrap_or(0.0);
            let rates = Rates { cpu: rate("rate_cpu"), mem: rate("rate_mem") };
            let used = Usage { cpu_work: usage.cpu_work, memory_mb_time: usage.memory_mb * usage.service_time().as_secs_f64() };
            let record = charge(id, self.instances[&id].state, used, rates).expect("instance is completed");
            udm::client::insert(bus, CHARGING, &record.to_row())?;
            bus.record(EventKind::Charged, subject, Fields::new().with("cost", record.cost).with("cpu_work", record.cpu_work_consumed));
        }

        let now = bus.now();
        let inst = &self.instances[&id];
        if let Some(rule) = self.config.release_rules.iter().find(|r| r.selector.matches(inst)) {
            let m = Message::request(Method::Post, format!("/ebi/mano/instances/{id}/release-memory"))
                .and_then(|m| m.with_header("x-origin", "script"))
                .expect("valid path");
            bus.schedule(now + rule.after, MANO, m);
        }
        Ok(json!({ "instance": id, "state": self.instances[&id].state }))
    }

    fn release_grant(&mut self, id: InstanceId, gid: GrantId, c: Components, reason: &str, origin: Option<&str>, bus: &mut Bus) -> Result<(), ManoError> {
        let node = self.vim.grant(gid).map(|g| g.node_id).ok_or(VimError::UnknownGrant(gid))?;
        let returned = self.vim.release(gid, c)?;
        if returned.is_zero() {
            return Ok(());
        }
        let subject = format!("{} node={node} grant={gid}", self.subject(id));
        if returned.cpu > 0 {
            bus.record(EventKind::CpuReleased, subject.clone(), Fields::new().with("cpu", returned.cpu).with("reason", reason));
        }
        let rest = ResourceVector { cpu: 0, ..returned };
        if !rest.is_zero() {
            let mut fields = resource_fields(Fields::new(), &rest).with("reason", reason);
            if let Some(o) = origin {
                fields = fields.with("origin", o);
            }
            bus.record(EventKind::MemoryReleased, subject, fields);
        }
        self.put_grant(bus, gid);
        Ok(())
    }

    /// Manual release of the memory a completed instance still holds.
    pub fn release_memory(&mut self, id: InstanceId, origin: &str, bus: &mut Bus) -> Result<ReleaseOutcome, ManoError> {
        let inst = self.instances.get(&id).ok_or(ManoError::UnknownInstance(id))?;
        match inst.state {
            InstanceState::Released => return Ok(ReleaseOutcome { instance_id: id, state: inst.state, noop: true }),
            InstanceState::Completed | InstanceState::MemoryHeld => {}
            state => return Err(ManoError::WrongState { instance: id, state }),
        }
        if inst.state == InstanceState::Completed {
            self.transition(bus, id, InstanceState::MemoryHeld)?;
        }
        for gid in self.instances[&id].grants.clone() {
            self.release_grant(id, gid, Components::MEMORY_AND_OTHER, "manual", Some(origin), bus)?;
        }
        self.transition(bus, id, InstanceState::Released)?;
        for pod in self.instances[&id].pods.clone() {
            self.cluster.terminate_pod(pod)?;
            self.put_pod(bus, pod);
        }
        let endpoint = app_endpoint_name(id);
        if bus.is_registered(&endpoint) {
            bus.deregister(&endpoint).map_err(NfError::from)?;
        }
        Ok(ReleaseOutcome { instance_id: id, state: InstanceState::Released, noop: false })
    }

    /// Failure from any pre-Released state: every grant is returned in full.
    fn fail_instance(&mut self, id: InstanceId, reason: &str, bus: &mut Bus) {
        let Some(inst) = self.instances.get(&id) else { return };
        if inst.state.is_terminal() {
            return;
        }
        for gid in inst.grants.clone() {
            let _ = self.release_grant(id, gid, Components::ALL, "rollback", None, bus);
        }
        for pod in self.instances[&id].pods.clone() {
            let _ = self.cluster.fail_pod(pod);
            self.put_pod(bus, pod);
        }
        self.activations.remove(&id);
        let endpoint = app_endpoint_name(id);
        if bus.is_registered(&endpoint) {
            let _ = bus.deregister(&endpoint);
            let _ = udm::client::delete(bus, ACTIVE_APPS, &id.to_string());
        }
        let subject = self.subject(id);
        let _ = self.transition(bus, id, InstanceState::Failed);
        bus.record(EventKind::InstanceFailed, subject, Fields::new().with("reason", reason));
    }

    /// Marks silent nodes failed and fails everything that ran on them.
    pub fn controller_tick(&mut self, bus: &mut Bus) -> Vec<FaultReport> {
        let now = bus.now();
        let mut reports = Vec::new();
        for (node, pods) in self.cluster.controller_scan(now) {
            self.put_json(bus, &format!("nodes/{node}"), json!({ "failed": true }));
            if pods.is_empty() {
                bus.record(EventKind::FaultEvent, format!("node={node}"), Fields::new().with("kind", "node_silent"));
                reports.push(FaultReport { node, pod: None, instance: None });
            }
            for pod in pods {
                let instance = self.cluster.pod(pod).and_then(|p| p.instance);
                bus.record(
                    EventKind::FaultEvent,
                    format!("node={node} pod={pod}"),
                    Fields::new().with("kind", "node_silent").with("instance", instance.map_or("-".into(), |i| i.to_string())),
                );
                self.put_pod(bus, pod);
                if let Some(i) = instance {
                    self.fail_instance(i, "NodeFailure", bus);
                }
                reports.push(FaultReport { node, pod: Some(pod), instance });
            }
        }
        reports
    }

    fn release_matching(&mut self, selector: &InstanceSelector, origin: &str, bus: &mut Bus) -> Vec<ReleaseOutcome> {
        let ids: Vec<InstanceId> = self
            .instances
            .values()
            .filter(|i| selector.matches(i) && matches!(i.state, InstanceState::Completed | InstanceState::MemoryHeld))
            .map(|i| i.instance_id)
            .collect();
        ids.into_iter().filter_map(|id| self.release_memory(id, origin, bus).ok()).collect()
    }

    fn handle_request(&mut self, req: &Message, bus: &mut Bus) -> Result<RequestOutcome, ManoError> {
        let request_id: u64 = req.header("x-request-id").and_then(|v| v.parse().ok()).unwrap_or(0);
        let parsed = if req.header("x-origin-protocol") == Some("legacy") {
            ServiceRequest::from_tlv(req.body()).map_err(|e| ManoError::BadRequest(e.to_string()))
        } else {
            req.json::<ServiceRequest>().map_err(|e| ManoError::BadRequest(e.to_string()))
        };
        let result = parsed.and_then(|sr| {
            let id = self.select_template(&sr, request_id, bus)?;
            self.instantiate(id, bus)?;
            Ok(RequestOutcome { request_id, instance_id: id, state: self.instances[&id].state })
        });
        if let Err(e) = &result {
            if self.instances.values().all(|i| i.request_id != request_id || request_id == 0) {
                bus.record(EventKind::RequestRejected, format!("req={request_id}"), Fields::new().with("error", e.code()));
            }
        }
        result
    }
}

fn padded(mut row: Vec<String>, arity: usize) -> Vec<String> {
    row.resize(arity.max(1), String::new());
    row.truncate(arity.max(1));
    row
}

fn compact(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::Object(m) if m.len() == 1 => {
            let (k, v) = m.iter().next().expect("one entry");
            match v {
                Value::String(s) => format!("{k}:{s}"),
                other => format!("{k}:{other}"),
            }
        }
        other => other.to_string(),
    }
}

fn resource_fields(f: Fields, r: &ResourceVector) -> Fields {
    f.with("cpu", r.cpu).with("memory_kb", r.memory_kb).with("storage", r.storage).with("bandwidth", r.bandwidth)
}

fn reply<T: Serialize>(status: Status, r: Result<T, ManoError>) -> Message {
    match r {
        Ok(v) => Message::json_response(status, &v),
        Err(e) => e.to_message(),
    }
}

impl Endpoint for Mano {
    fn handle(&mut self, req: &Message, bus: &mut Bus) -> Message {
        let segs = req.segments();
        let method = req.method();
        let parse_id = |s: &str| s.parse::<u64>().map_err(|_| ManoError::BadRequest(format!("bad id {s:?}")));
        let origin = req.header("x-origin").unwrap_or("-");
        match (method, segs.as_slice()) {
            (Some(Method::Post), ["mano", "requests"]) => reply(Status::ACCEPTED, self.handle_request(req, bus)),
            (Some(Method::Get), ["mano", "templates"]) => Message::json_response(Status::OK, &self.templates().collect::<Vec<_>>()),
            (Some(Method::Get), ["mano", "instances"]) => {
                Message::json_response(Status::OK, &self.instances().collect::<Vec<_>>())
            }
            (Some(Method::Get), ["mano", "instances", id]) => reply(
                Status::OK,
                parse_id(id).and_then(|id| self.instance(InstanceId(id)).cloned().ok_or(ManoError::UnknownInstance(InstanceId(id)))),
            ),
            (Some(Method::Post), ["mano", "instances", id, "release-memory"]) => {
                reply(Status::OK, parse_id(id).and_then(|id| self.release_memory(InstanceId(id), origin, bus)))
            }
            (Some(Method::Post), ["mano", "instances", id, "complete"]) => {
                reply(Status::OK, parse_id(id).and_then(|id| self.complete(InstanceId(id), bus)))
            }
            (Some(Method::Post), ["mano", "releases"]) => match req.json::<Value>() {
                Ok(v) => match v.get("selector").and_then(Value::as_str).map(str::parse::<InstanceSelector>) {
                    Some(Ok(sel)) => Message::json_response(Status::OK, &self.release_matching(&sel, origin, bus)),
                    Some(Err(e)) => Message::error(Status::BAD_REQUEST, "BadSelector", e),
                    None => Message::error(Status::BAD_REQUEST, "BadSelector", "selector missing"),
                },
                Err(e) => Message::error(Status::BAD_REQUEST, "BadBody", e),
            },
            (Some(Method::Post), ["mano", "pods", pod, "containers", container, "started"]) => {
                reply(Status::OK, parse_id(pod).and_then(|p| self.container_started(PodId(p), container, bus)))
            }
            (Some(Method::Post), ["mano", "nodes"]) => match req.json::<NodeSpec>() {
                Ok(spec) => reply(Status::CREATED, self.register_node(&spec, bus).map(|n| json!({ "node_id": n }))),
                Err(e) => Message::error(Status::BAD_REQUEST, "BadBody", e),
            },
            (Some(Method::Get), ["mano", "nodes", id]) => reply(
                Status::OK,
                parse_id(id).and_then(|n| {
                    let node = NodeId(n as u32);
                    let view = self.cluster.node(node).ok_or(ManoError::UnknownNode(node))?;
                    let pods: Vec<_> = view.pods.iter().filter_map(|p| self.cluster.pod(*p)).collect();
                    Ok(json!({
                        "node": view,
                        "pods": pods,
                        "free": self.vim.free(node),
                        "last_heartbeat": view.last_heartbeat(bus.now(), self.cluster.heartbeat_interval),
                    }))
                }),
            ),
            (Some(Method::Post), ["mano", "nodes", id, "silence"]) => reply(
                Status::OK,
                parse_id(id).and_then(|n| {
                    let node = NodeId(n as u32);
                    self.cluster.silence(node, bus.now()).map_err(|_| ManoError::UnknownNode(node))?;
                    Ok(json!({ "node": node, "silent": true }))
                }),
            ),
            (Some(Method::Post), ["mano", "controller", "tick"]) => {
                Message::json_response(Status::OK, &self.controller_tick(bus))
            }
            (Some(Method::Get), ["state", key @ ..]) if !key.is_empty() => {
                let key = key.join("/");
                match self.store.get(&key) {
                    Some((value, revision)) => Message::json_response(
                        Status::OK,
                        &json!({ "key": key, "value": String::from_utf8_lossy(value), "revision": revision }),
                    ),
                    None => Message::error(Status::NOT_FOUND, "Absent", key),
                }
            }
            (Some(Method::Put), ["state", key @ ..]) if !key.is_empty() => {
                let key = key.join("/");
                let revision = self.api_put(bus, &key, req.body().to_vec());
                Message::json_response(Status::OK, &json!({ "key": key, "revision": revision }))
            }
            _ => Message::error(Status::NOT_FOUND, "NoRoute", req.path().unwrap_or("")),
        }
    }
}

/// Grants currently reserved on behalf of an instance.
pub fn live_grants<'a>(vim: &'a Vim, id: InstanceId) -> impl Iterator<Item = &'a ResourceGrant> + 'a {
    vim.grants().filter(move |g| g.instance_id == id && g.is_live())
}

pub mod client {
    use super::*;
    use crate::nf::call_json;

    pub fn submit(bus: &mut Bus, req: &ServiceRequest, request_id: u64) -> Result<RequestOutcome, NfError> {
        call_json(bus, MANO, req.to_http(request_id))
    }

    pub fn instance(bus: &mut Bus, id: InstanceId) -> Result<Value, NfError> {
        call_json(bus, MANO, Message::request(Method::Get, format!("/ebi/mano/instances/{id}"))?)
    }

    pub fn release_memory(bus: &mut Bus, id: InstanceId, origin: &str) -> Result<ReleaseOutcome, NfError> {
        let m = Message::request(Method::Post, format!("/ebi/mano/instances/{id}/release-memory"))?.with_header("x-origin", origin)?;
        call_json(bus, MANO, m)
    }

    pub fn register_node(bus: &mut Bus, spec: &NodeSpec) -> Result<NodeId, NfError> {
        let v: Value = call_json(bus, MANO, Message::request(Method::Post, "/ebi/mano/nodes")?.with_json(spec))?;
        v.get("node_id")
            .and_then(Value::as_u64)
            .map(|n| NodeId(n as u32))
            .ok_or_else(|| NfError::Decode { endpoint: MANO.into(), detail: "node_id missing".into() })
    }

    pub fn templates(bus: &mut Bus) -> Result<Vec<Template>, NfError> {
        call_json(bus, MANO, Message::request(Method::Get, "/ebi/mano/templates")?)
    }

    pub fn state_get(bus: &mut Bus, key: &str) -> Result<Option<Value>, NfError> {
        match call_json(bus, MANO, Message::request(Method::Get, format!("/ebi/state/{key}"))?) {
            Ok(v) => Ok(Some(v)),
            Err(e) if e.code() == Some("Absent") => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn state_put(bus: &mut Bus, key: &str, value: &[u8]) -> Result<u64, NfError> {
        let v: Value = call_json(bus, MANO, Message::request(Method::Put, format!("/ebi/state/{key}"))?.with_body(value.to_vec()))?;
        Ok(v.get("revision").and_then(Value::as_u64).unwrap_or(0))
    }
}
