//! Instantiation time of one template, measured on a warm system.

use super::config::{RequestSpec, Scenario};
use super::runner::{run_scenario, RunError};
use crate::mano::template::ALL_SERVICES;
use crate::mano::{InstantiationMode, Template};
use crate::nf::cpcf::ProtocolKind;
use crate::time::SimTime;

#[derive(Debug, thiserror::Error)]
pub enum MeasureError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("instance never became active: {0}")]
    NotActive(String),
}

/// Virtual time from RequestReceived to InstanceActive for one instance
/// running every APP of `template`. Images are pre-pulled and container
/// costs are exact, so the result is the overhead plus the largest cost
/// (parallel) or the sum of costs (sequential).
pub fn measure_instantiation(template: &Template, mode: InstantiationMode, overhead: SimTime) -> Result<SimTime, MeasureError> {
    let scenario = Scenario {
        name: format!("measure-{}", template.template_id),
        templates: vec![template.clone()],
        requests: vec![RequestSpec {
            t: SimTime::ZERO,
            service_class: template.app_class.as_str().to_string(),
            service_name: ALL_SERVICES.to_string(),
            input: serde_json::Value::Null,
            mode,
            protocol: ProtocolKind::Http,
            repeat: 1,
            every: SimTime::ZERO,
        }],
        warm_images: true,
        container_jitter: 0.0,
        overhead,
        ..Scenario::default()
    };
    let out = run_scenario(&scenario)?;
    match out.report.instantiation.first() {
        Some(s) => Ok(s.duration),
        None => Err(MeasureError::NotActive(out.failures.join("; "))),
    }
}
