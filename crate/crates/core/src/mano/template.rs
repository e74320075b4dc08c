//! Three-tier application templates: managed NFs, attributes, actions.
//!
//! A template is a resource-free description. Resources, pods and
//! containers only exist once an instance is created from it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ResourceVector;
use crate::nf::{is_valid_id, NfDescriptor, NfKind, ServiceClass};
use crate::time::SimTime;

/// Requesting this service name activates every APP of the template.
pub const ALL_SERVICES: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManagedNf {
    pub nf_id: String,
    pub nf_kind: NfKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl ManagedNf {
    pub fn new(nf_id: &str, nf_kind: NfKind) -> Self {
        ManagedNf { nf_id: nf_id.to_string(), nf_kind, image_ref: None }
    }

    pub fn descriptor(&self) -> NfDescriptor {
        let mut d = NfDescriptor::new(&self.nf_id, self.nf_kind);
        if let Some(r) = &self.image_ref {
            d.image_ref = r.clone();
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attributes {
    pub table: String,
    pub schema: Vec<String>,
    #[serde(default)]
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub template_id: String,
    pub app_class: ServiceClass,
    pub managed_nfs: Vec<ManagedNf>,
    pub attributes: Attributes,
    #[serde(default)]
    pub actions: Vec<String>,
    pub resource_profile: ResourceVector,
    /// Startup cost per container, virtual seconds.
    #[serde(default)]
    pub container_costs: BTreeMap<String, SimTime>,
    /// Per-APP pod requirements overriding `resource_profile`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub service_profiles: BTreeMap<String, ResourceVector>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template JSON error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("invalid template {template_id:?}: {invariant} ({detail})")]
    InvalidTemplate { template_id: String, invariant: &'static str, detail: String },
}

impl TemplateError {
    pub fn invariant(&self) -> Option<&'static str> {
        match self {
            TemplateError::InvalidTemplate { invariant, .. } => Some(invariant),
            TemplateError::Parse { .. } => None,
        }
    }
}

impl Template {
    pub fn from_json(text: &str) -> Result<Template, TemplateError> {
        let t: Template = serde_json::from_str(text).map_err(|e| TemplateError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        t.validate()?;
        Ok(t)
    }

    fn invalid(&self, invariant: &'static str, detail: impl Into<String>) -> TemplateError {
        TemplateError::InvalidTemplate { template_id: self.template_id.clone(), invariant, detail: detail.into() }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if !is_valid_id(&self.template_id) {
            return Err(self.invalid("template id", "must be non-empty ASCII without '/' or ':'"));
        }
        let kinds: BTreeSet<NfKind> = self.managed_nfs.iter().map(|n| n.nf_kind).collect();
        let missing: Vec<String> =
            NfKind::SHARED.iter().filter(|k| !kinds.contains(k)).map(ToString::to_string).collect();
        if !missing.is_empty() {
            return Err(self.invalid("shared set", format!("managed_nfs lacks {}", missing.join(", "))));
        }
        let mut ids = BTreeSet::new();
        for nf in &self.managed_nfs {
            if let Err(e) = nf.descriptor().validate() {
                return Err(self.invalid("nf descriptor", e.to_string()));
            }
            if !ids.insert(nf.nf_id.as_str()) {
                return Err(self.invalid("unique nf ids", nf.nf_id.clone()));
            }
        }
        let a = &self.attributes;
        if !is_valid_id(&a.table) || a.schema.is_empty() {
            return Err(self.invalid("attributes", "table name and non-empty schema required"));
        }
        if let Some(row) = a.rows.iter().find(|r| r.len() != a.schema.len()) {
            return Err(self.invalid("attributes", format!("row {row:?} does not match schema arity {}", a.schema.len())));
        }
        if self.resource_profile.is_zero() {
            return Err(self.invalid("resource profile", "all-zero pod requirements"));
        }
        for app in self.apps() {
            if !self.container_costs.contains_key(&app.nf_id) {
                return Err(self.invalid("container costs", format!("no startup cost for {}", app.nf_id)));
            }
        }
        for id in self.container_costs.keys().chain(self.service_profiles.keys()) {
            if !self.apps().any(|a| &a.nf_id == id) {
                return Err(self.invalid("container costs", format!("{id} is not an APP of this template")));
            }
        }
        if self.service_profiles.values().any(ResourceVector::is_zero) {
            return Err(self.invalid("resource profile", "all-zero service profile"));
        }
        Ok(())
    }

    pub fn apps(&self) -> impl Iterator<Item = &ManagedNf> {
        self.managed_nfs.iter().filter(|n| n.nf_kind == NfKind::App)
    }

    /// NFs and APPs that are not part of the shared set.
    pub fn dedicated(&self) -> impl Iterator<Item = &ManagedNf> {
        self.managed_nfs.iter().filter(|n| !n.nf_kind.is_shared())
    }

    pub fn serves(&self, service_name: &str) -> bool {
        service_name == ALL_SERVICES || self.apps().any(|a| a.nf_id == service_name)
    }

    /// Containers one instance runs for `service_name`: the requested APP, or
    /// every APP for [`ALL_SERVICES`]. Each entry carries its startup cost.
    pub fn containers_for(&self, service_name: &str) -> Vec<(String, SimTime)> {
        self.apps()
            .filter(|a| service_name == ALL_SERVICES || a.nf_id == service_name)
            .map(|a| (a.nf_id.clone(), self.container_costs.get(&a.nf_id).copied().unwrap_or(SimTime::ZERO)))
            .collect()
    }

    pub fn requirements_for(&self, service_name: &str) -> ResourceVector {
        self.service_profiles.get(service_name).copied().unwrap_or(self.resource_profile)
    }

    /// Value of a predefined attribute row, looked up by its first column.
    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.rows.iter().find(|r| r.first().is_some_and(|k| k == key)).and_then(|r| r.get(1)).map(String::as_str)
    }

    pub fn has_action(&self, action: &str) -> bool {
        self.actions.iter().any(|a| a == action)
    }

    pub fn computation_intensive() -> Template {
        let mut t = Template {
            template_id: "computation_intensive".into(),
            app_class: ServiceClass::IntensiveComputation,
            managed_nfs: shared_nfs(),
            attributes: Attributes {
                table: "computation_intensive_params".into(),
                schema: vec!["key".into(), "value".into()],
                rows: vec![
                    vec!["rate_cpu".into(), "2".into()],
                    vec!["rate_mem".into(), "0.01".into()],
                    vec!["dispatch".into(), "asf_compute".into()],
                ],
            },
            actions: vec!["compute".into(), "charge".into()],
            resource_profile: ResourceVector::new(500, 20.0, 100, 10),
            container_costs: BTreeMap::new(),
            service_profiles: BTreeMap::new(),
        };
        t.managed_nfs.push(ManagedNf::new("asf_compute", NfKind::Asf));
        for (app, cost, cpu, mem) in
            [("sum", 3, 250, 20.0), ("prime_sum", 4, 500, 20.0), ("face_recognition", 6, 2000, 83.9)]
        {
            t.managed_nfs.push(ManagedNf::new(app, NfKind::App));
            t.container_costs.insert(app.into(), SimTime::from_secs(cost));
            t.service_profiles.insert(app.into(), ResourceVector::new(cpu, mem, 100, 10));
        }
        t
    }

    pub fn high_throughput() -> Template {
        let mut t = Template {
            template_id: "high_throughput".into(),
            app_class: ServiceClass::HighThroughput,
            managed_nfs: shared_nfs(),
            attributes: Attributes {
                table: "high_throughput_params".into(),
                schema: vec!["key".into(), "value".into()],
                rows: vec![
                    vec!["cache_policy".into(), "min_popularity".into()],
                    vec!["dispatch".into(), "asf_video".into()],
                ],
            },
            actions: vec!["cache_video".into(), "analyze_popularity".into(), "cloud_fallback".into()],
            resource_profile: ResourceVector::new(1000, 256.0, 2048, 100),
            container_costs: BTreeMap::new(),
            service_profiles: BTreeMap::new(),
        };
        t.managed_nfs.push(ManagedNf::new("asf_video", NfKind::Asf));
        t.managed_nfs.push(ManagedNf::new("video", NfKind::App));
        t.container_costs.insert("video".into(), SimTime::from_secs(5));
        t
    }

    pub fn builtins() -> Vec<Template> {
        vec![Template::computation_intensive(), Template::high_throughput()]
    }
}

fn shared_nfs() -> Vec<ManagedNf> {
    vec![
        ManagedNf::new("srf", NfKind::Srf),
        ManagedNf::new("cpcf", NfKind::Cpcf),
        ManagedNf::new("udm", NfKind::Udm),
        ManagedNf::new("nrf", NfKind::Nrf),
    ]
}

/// Validates each template and checks that no two share a dedicated NF.
pub fn validate_catalog(templates: &[Template]) -> Result<(), TemplateError> {
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    let mut classes = BTreeSet::new();
    for t in templates {
        t.validate()?;
        if !classes.insert(t.app_class) {
            return Err(t.invalid("one template per class", format!("{} already has a template", t.app_class)));
        }
        for nf in t.dedicated() {
            if let Some(other) = owner.insert(&nf.nf_id, &t.template_id) {
                return Err(t.invalid("disjoint dedicated sets", format!("{} also dedicated to {other}", nf.nf_id)));
            }
        }
    }
    Ok(())
}
