use std::fmt;

use serde::{Deserialize, Serialize};

use super::{GrantId, InstanceId, InstantiationMode, NodeId, PodId};
use crate::nf::ServiceClass;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstanceState {
    Selected,
    Configured,
    ResourcesAllocated,
    Active,
    Completed,
    MemoryHeld,
    Released,
    Failed,
}

impl InstanceState {
    pub const ALL: [InstanceState; 8] = [
        InstanceState::Selected,
        InstanceState::Configured,
        InstanceState::ResourcesAllocated,
        InstanceState::Active,
        InstanceState::Completed,
        InstanceState::MemoryHeld,
        InstanceState::Released,
        InstanceState::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InstanceState::Selected => "Selected",
            InstanceState::Configured => "Configured",
            InstanceState::ResourcesAllocated => "ResourcesAllocated",
            InstanceState::Active => "Active",
            InstanceState::Completed => "Completed",
            InstanceState::MemoryHeld => "MemoryHeld",
            InstanceState::Released => "Released",
            InstanceState::Failed => "Failed",
        }
    }

    pub fn can_transition(self, to: InstanceState) -> bool {
        use InstanceState::*;
        match (self, to) {
            (Released | Failed, _) => false,
            (_, Failed) => true,
            (Selected, Configured)
            | (Configured, ResourcesAllocated)
            | (ResourcesAllocated, Active)
            | (Active, Completed)
            | (Completed, MemoryHeld)
            | (MemoryHeld, Released) => true,
            _ => false,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, InstanceState::Released | InstanceState::Failed)
    }
}

impl fmt::Display for InstanceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal transition {from} -> {to}")]
pub struct LifecycleError {
    pub from: InstanceState,
    pub to: InstanceState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Instance {
    pub instance_id: InstanceId,
    pub template_id: String,
    pub request_id: u64,
    pub service_class: ServiceClass,
    pub service_name: String,
    pub mode: InstantiationMode,
    pub input: serde_json::Value,
    pub state: InstanceState,
    pub node: Option<NodeId>,
    pub pods: Vec<PodId>,
    pub grants: Vec<GrantId>,
    pub created_at: SimTime,
    pub active_at: Option<SimTime>,
    pub completed_at: Option<SimTime>,
    pub released_at: Option<SimTime>,
    pub result: Option<serde_json::Value>,
    pub history: Vec<(SimTime, InstanceState)>,
}

impl Instance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        instance_id: InstanceId,
        template_id: &str,
        request_id: u64,
        service_class: ServiceClass,
        service_name: &str,
        mode: InstantiationMode,
        input: serde_json::Value,
        now: SimTime,
    ) -> Self {
        Instance {
            instance_id,
            template_id: template_id.to_string(),
            request_id,
            service_class,
            service_name: service_name.to_string(),
            mode,
            input,
            state: InstanceState::Selected,
            node: None,
            pods: Vec::new(),
            grants: Vec::new(),
            created_at: now,
            active_at: None,
            completed_at: None,
            released_at: None,
            result: None,
            history: vec![(now, InstanceState::Selected)],
        }
    }

    pub fn transition(&mut self, to: InstanceState, now: SimTime) -> Result<(), LifecycleError> {
        if !self.state.can_transition(to) {
            return Err(LifecycleError { from: self.state, to });
        }
        self.state = to;
        self.history.push((now, to));
        match to {
            InstanceState::Active => self.active_at = Some(now),
            InstanceState::Completed => self.completed_at = Some(now),
            InstanceState::Released => self.released_at = Some(now),
            _ => {}
        }
        Ok(())
    }

    /// Subject fields identifying this instance in the event log.
    pub fn subject(&self) -> String {
        format!("req={} inst={}", self.request_id, self.instance_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use InstanceState::*;

    fn inst() -> Instance {
        Instance::new(
            InstanceId(1),
            "t",
            1,
            ServiceClass::IntensiveComputation,
            "sum",
            InstantiationMode::Parallel,
            serde_json::Value::Null,
            SimTime::ZERO,
        )
    }

    #[test]
    fn happy_path_is_legal() {
        let mut i = inst();
        for s in [Configured, ResourcesAllocated, Active, Completed, MemoryHeld, Released] {
            i.transition(s, SimTime::ZERO).unwrap();
        }
        assert_eq!(i.history.len(), 7);
    }

    #[test]
    fn skipping_is_illegal() {
        let mut i = inst();
        assert_eq!(i.transition(Active, SimTime::ZERO), Err(LifecycleError { from: Selected, to: Active }));
        assert!(!Released.can_transition(Failed));
        assert!(!Failed.can_transition(Failed));
        assert!(MemoryHeld.can_transition(Failed));
    }

    #[test]
    fn legal_relation_is_exactly_the_chain_plus_failure() {
        let chain = [Selected, Configured, ResourcesAllocated, Active, Completed, MemoryHeld, Released];
        for from in InstanceState::ALL {
            for to in InstanceState::ALL {
                let next_in_chain = chain.windows(2).any(|w| w[0] == from && w[1] == to);
                let to_failed = to == Failed && !from.is_terminal();
                assert_eq!(from.can_transition(to), next_in_chain || to_failed, "{from} -> {to}");
            }
        }
    }
}
