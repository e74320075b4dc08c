//! Scenario files: JSON describing nodes, templates, a timed request list,
//! scripted releases and faults.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::mano::{ContainerFault, InstanceSelector, InstantiationMode, NodeId, NodeSpec, ResourceVector, Template, TemplateError};
use crate::nf::cpcf::ProtocolKind;
use crate::nf::nrf::DEFAULT_FETCH_DELAY;
use crate::time::SimTime;
use crate::workloads::{Bandwidths, CatalogEntry, WorkloadConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}, column {column}: field `{field}`: {msg}")]
    Parse { line: usize, column: usize, field: String, msg: String },
    #[error("field `{field}`: {msg}")]
    Invalid { field: String, msg: String },
    #[error("field `{field}`: {source}")]
    Template { field: String, source: TemplateError },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, msg: impl fmt::Display) -> Self {
        ConfigError::Invalid { field: field.into(), msg: msg.to_string() }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Parse { line, .. } => Some(*line),
            ConfigError::Template { source: TemplateError::Parse { line, .. }, .. } => Some(*line),
            _ => None,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, ConfigError::Io { .. })
    }
}

/// Parses JSON with the offending field path in the error.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.to_string();
        let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
        ConfigError::Parse { line: inner.line(), column: inner.column(), field, msg }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub t: SimTime,
    pub service_class: String,
    pub service_name: String,
    #[serde(default)]
    pub input: Value,
    #[serde(default)]
    pub mode: InstantiationMode,
    #[serde(default = "default_protocol")]
    pub protocol: ProtocolKind,
    /// Number of copies, `every` seconds apart.
    #[serde(default = "one")]
    pub repeat: u32,
    #[serde(default)]
    pub every: SimTime,
}

fn default_protocol() -> ProtocolKind {
    ProtocolKind::Http
}

fn one() -> u32 {
    1
}

/// A release either at a fixed time or a delay after each matching
/// instance completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReleaseSpec {
    pub instance_selector: InstanceSelector,
    #[serde(default)]
    pub t: Option<SimTime>,
    #[serde(default)]
    pub after_completion: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFailure {
    /// Index into `nodes`; node ids are assigned in that order from 0.
    pub node: NodeId,
    pub t: SimTime,
    /// A replacement node registers this long after the failure.
    #[serde(default)]
    pub recover_after: Option<SimTime>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSpec {
    pub container_failures: Vec<ContainerFault>,
    pub node_failures: Vec<NodeFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    name: String,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_nodes")]
    nodes: Vec<NodeSpec>,
    /// Inline templates or `{"file": path}` references. Absent means the
    /// two built-in templates.
    #[serde(default)]
    templates: Option<Vec<Value>>,
    #[serde(default)]
    requests: Vec<RequestSpec>,
    #[serde(default)]
    bandwidths: Option<Bandwidths>,
    #[serde(default)]
    workload: Option<WorkloadConfig>,
    #[serde(default)]
    manual_releases: Vec<ReleaseSpec>,
    #[serde(default)]
    faults: FaultSpec,
    #[serde(default)]
    warm_images: bool,
    #[serde(default)]
    catalog: Vec<CatalogEntry>,
    #[serde(default = "default_overhead")]
    overhead: SimTime,
    #[serde(default = "default_container_jitter")]
    container_jitter: f64,
    #[serde(default)]
    hop_latency: SimTime,
    #[serde(default = "default_fetch_delay")]
    fetch_delay: SimTime,
    #[serde(default)]
    until: Option<SimTime>,
}

fn default_nodes() -> Vec<NodeSpec> {
    vec![NodeSpec { capacity: ResourceVector::new(16_000, 32_768.0, 500_000, 10_000), idle_pods: 4 }]
}

fn default_overhead() -> SimTime {
    crate::mano::orchestrator::DEFAULT_OVERHEAD
}

fn default_container_jitter() -> f64 {
    0.1
}

fn default_fetch_delay() -> SimTime {
    DEFAULT_FETCH_DELAY
}

/// One request after `repeat` expansion. Ids follow arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledRequest {
    pub request_id: u64,
    pub t: SimTime,
    pub spec: RequestSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub nodes: Vec<NodeSpec>,
    pub templates: Vec<Template>,
    pub requests: Vec<RequestSpec>,
    pub workload: WorkloadConfig,
    pub manual_releases: Vec<ReleaseSpec>,
    pub faults: FaultSpec,
    pub warm_images: bool,
    pub catalog: Vec<CatalogEntry>,
    pub overhead: SimTime,
    pub container_jitter: f64,
    pub hop_latency: SimTime,
    pub fetch_delay: SimTime,
    /// Stop time; by default the run drains the agenda.
    pub until: Option<SimTime>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: String::new(),
            seed: 0,
            nodes: default_nodes(),
            templates: Template::builtins(),
            requests: Vec::new(),
            workload: WorkloadConfig::default(),
            manual_releases: Vec::new(),
            faults: FaultSpec::default(),
            warm_images: false,
            catalog: Vec::new(),
            overhead: default_overhead(),
            container_jitter: default_container_jitter(),
            hop_latency: SimTime::ZERO,
            fetch_delay: DEFAULT_FETCH_DELAY,
            until: None,
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Scenario::from_json(&text, path.parent())
    }

    /// `base` resolves relative template file references.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Scenario, ConfigError> {
        let file: ScenarioFile = parse_json(text)?;
        let templates = match file.templates {
            None => Template::builtins(),
            Some(entries) => entries
                .into_iter()
                .enumerate()
                .map(|(i, v)| load_template(i, v, base))
                .collect::<Result<Vec<_>, _>>()?,
        };
        let mut workload = file.workload.unwrap_or_default();
        if let Some(bw) = file.bandwidths {
            workload.bandwidths = bw;
        }
        let s = Scenario {
            name: file.name,
            seed: file.seed,
            nodes: file.nodes,
            templates,
            requests: file.requests,
            workload,
            manual_releases: file.manual_releases,
            faults: file.faults,
            warm_images: file.warm_images,
            catalog: file.catalog,
            overhead: file.overhead,
            container_jitter: file.container_jitter,
            hop_latency: file.hop_latency,
            fetch_delay: file.fetch_delay,
            until: file.until,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nodes.is_empty() {
            return Err(ConfigError::invalid("nodes", "at least one node is required"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.capacity.is_zero() {
                return Err(ConfigError::invalid(format!("nodes[{i}].capacity"), "capacity must be non-zero"));
            }
        }
        crate::mano::template::validate_catalog(&self.templates)
            .map_err(|source| ConfigError::Template { field: "templates".into(), source })?;
        for (i, r) in self.requests.iter().enumerate() {
            if r.repeat == 0 {
                return Err(ConfigError::invalid(format!("requests[{i}].repeat"), "must be at least 1"));
            }
            if r.repeat > 1 && r.every == SimTime::ZERO {
                return Err(ConfigError::invalid(format!("requests[{i}].every"), "repeated requests need a positive interval"));
            }
        }
        for (i, r) in self.manual_releases.iter().enumerate() {
            if r.t.is_some() == r.after_completion.is_some() {
                return Err(ConfigError::invalid(
                    format!("manual_releases[{i}]"),
                    "exactly one of `t` and `after_completion` must be given",
                ));
            }
        }
        let total = self.scheduled_requests().len() as u64;
        for (i, f) in self.faults.container_failures.iter().enumerate() {
            if f.request == 0 || f.request > total {
                return Err(ConfigError::invalid(
                    format!("faults.container_failures[{i}].request"),
                    format!("request {} does not exist (1..={total})", f.request),
                ));
            }
        }
        for (i, f) in self.faults.node_failures.iter().enumerate() {
            if f.node.0 as usize >= self.nodes.len() {
                return Err(ConfigError::invalid(format!("faults.node_failures[{i}].node"), format!("no node {}", f.node)));
            }
        }
        if !(0.0..=1.0).contains(&self.container_jitter) {
            return Err(ConfigError::invalid("container_jitter", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Requests with `repeat` expanded, sorted by arrival time (stable), and
    /// numbered from 1.
    pub fn scheduled_requests(&self) -> Vec<ScheduledRequest> {
        let mut out: Vec<(SimTime, RequestSpec)> = Vec::new();
        for r in &self.requests {
            let mut t = r.t;
            for _ in 0..r.repeat {
                out.push((t, r.clone()));
                t += r.every;
            }
        }
        out.sort_by_key(|(t, _)| *t);
        out.into_iter()
            .enumerate()
            .map(|(i, (t, spec))| ScheduledRequest { request_id: i as u64 + 1, t, spec })
            .collect()
    }
}

fn load_template(index: usize, v: Value, base: Option<&Path>) -> Result<Template, ConfigError> {
    let field = format!("templates[{index}]");
    let file = v.as_object().filter(|o| o.len() == 1).and_then(|o| o.get("file")).and_then(Value::as_str);
    let text = match file {
        Some(f) => {
            let path = base.map_or_else(|| PathBuf::from(f), |b| b.join(f));
            std::fs::read_to_string(&path).map_err(|source| ConfigError::Io { path, source })?
        }
        None => v.to_string(),
    };
    Template::from_json(&text).map_err(|source| ConfigError::Template { field, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let s = Scenario::from_json("{}", None).unwrap();
        assert_eq!(s.templates.len(), 2);
        assert!(s.requests.is_empty());
        assert_eq!(s.nodes.len(), 1);
    }

    #[test]
    fn parse_error_names_line_and_field() {
        let text = "{\n  \"seed\": 1,\n  \"requests\": [{\"t\": \"soon\"}]\n}";
        let err = Scenario::from_json(text, None).unwrap_err();
        assert_eq!(err.line(), Some(3));
        assert!(err.to_string().contains("requests[0].t"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let err = Scenario::from_json("{\"seeds\": 1}", None).unwrap_err();
        assert!(err.to_string().contains("seeds"), "{err}");
    }

    #[test]
    fn release_needs_exactly_one_time() {
        let text = r#"{"manual_releases": [{"instance_selector": "all"}]}"#;
        let err = Scenario::from_json(text, None).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }));
    }

    #[test]
    fn repeat_expands_in_time_order() {
        let text = r#"{"requests": [
            {"t": 0, "service_class": "high_throughput", "service_name": "video", "repeat": 3, "every": 10},
            {"t": 5, "service_class": "intensive_computation", "service_name": "sum"}
        ]}"#;
        let s = Scenario::from_json(text, None).unwrap();
        let reqs = s.scheduled_requests();
        let names: Vec<_> = reqs.iter().map(|r| (r.request_id, r.spec.service_name.as_str())).collect();
        assert_eq!(names, vec![(1, "video"), (2, "sum"), (3, "video"), (4, "video")]);
    }

    #[test]
    fn template_file_reference() {
        let dir = tempfile::tempdir().unwrap();
        let t = &Template::builtins()[0];
        std::fs::write(dir.path().join("t.json"), serde_json::to_string(t).unwrap()).unwrap();
        let s = Scenario::from_json(r#"{"templates": [{"file": "t.json"}]}"#, Some(dir.path())).unwrap();
        assert_eq!(s.templates, vec![t.clone()]);
    }
}
