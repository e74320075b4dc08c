//! Secondary nodes and their pods: placement, container startup planning
//! and heartbeat-based failure detection.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{InstanceId, InstantiationMode, NodeId, PodId, ResourceVector, Vim};
use crate::time::SimTime;

pub const DEFAULT_HEARTBEAT_INTERVAL: SimTime = SimTime::from_secs(5);
pub const DEFAULT_LIVENESS_INTERVALS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PodState {
    Idle,
    Assigned,
    Running,
    Failed,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Pod {
    pub pod_id: PodId,
    pub node_id: NodeId,
    pub state: PodState,
    pub containers: Vec<String>,
    pub instance: Option<InstanceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub node_id: NodeId,
    pub capacity: ResourceVector,
    pub pods: Vec<PodId>,
    pub registered_at: SimTime,
    pub silent_since: Option<SimTime>,
    pub failed: bool,
    /// Sequential startups on this node are queued behind each other.
    pub script_busy_until: SimTime,
}

impl Node {
    /// Heartbeats go out every `interval` from registration until the node
    /// falls silent.
    pub fn last_heartbeat(&self, now: SimTime, interval: SimTime) -> SimTime {
        let upto = self.silent_since.map_or(now, |s| s.min(now));
        let since = upto.saturating_sub(self.registered_at).as_micros();
        let step = interval.as_micros().max(1);
        self.registered_at + SimTime::from_micros(since / step * step)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusterError {
    #[error("no node can host {0}")]
    ClusterExhausted(ResourceVector),
    #[error("unknown pod {0}")]
    UnknownPod(PodId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("pod {pod} is {state:?}, expected {expected:?}")]
    WrongPodState { pod: PodId, state: PodState, expected: PodState },
}

#[derive(Debug, Clone)]
pub struct Cluster {
    nodes: BTreeMap<NodeId, Node>,
    pods: BTreeMap<PodId, Pod>,
    next_node: u32,
    next_pod: u64,
    pub heartbeat_interval: SimTime,
    pub liveness_intervals: u32,
}

impl Default for Cluster {
    fn default() -> Self {
        Cluster::new(DEFAULT_HEARTBEAT_INTERVAL, DEFAULT_LIVENESS_INTERVALS)
    }
}

impl Cluster {
    pub fn new(heartbeat_interval: SimTime, liveness_intervals: u32) -> Self {
        Cluster { nodes: BTreeMap::new(), pods: BTreeMap::new(), next_node: 0, next_pod: 0, heartbeat_interval, liveness_intervals }
    }

    pub fn liveness_window(&self) -> SimTime {
        SimTime::from_micros(self.heartbeat_interval.as_micros() * u64::from(self.liveness_intervals))
    }

    /// Registers a node; the caller adds its pool to the VIM.
    pub fn add_node(&mut self, capacity: ResourceVector, now: SimTime) -> NodeId {
        let node_id = NodeId(self.next_node);
        self.next_node += 1;
        self.nodes.insert(
            node_id,
            Node {
                node_id,
                capacity,
                pods: Vec::new(),
                registered_at: now,
                silent_since: None,
                failed: false,
                script_busy_until: SimTime::ZERO,
            },
        );
        node_id
    }

    pub fn add_idle_pod(&mut self, node_id: NodeId) -> Result<PodId, ClusterError> {
        let node = self.nodes.get_mut(&node_id).ok_or(ClusterError::UnknownNode(node_id))?;
        self.next_pod += 1;
        let pod_id = PodId(self.next_pod);
        node.pods.push(pod_id);
        self.pods.insert(pod_id, Pod { pod_id, node_id, state: PodState::Idle, containers: Vec::new(), instance: None });
        Ok(pod_id)
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn pod(&self, id: PodId) -> Option<&Pod> {
        self.pods.get(&id)
    }

    pub fn pods(&self) -> impl Iterator<Item = &Pod> {
        self.pods.values()
    }

    fn pod_mut(&mut self, id: PodId) -> Result<&mut Pod, ClusterError> {
        self.pods.get_mut(&id).ok_or(ClusterError::UnknownPod(id))
    }

    /// An idle pod on a live node whose free pool covers `requirements`
    /// (lowest pod id first). Failing that, a new pod on the node with the
    /// largest free capacity, lowest node id on ties. The flag is true when
    /// the pod was created.
    pub fn locate_idle_pod(&mut self, requirements: ResourceVector, vim: &Vim) -> Result<(PodId, bool), ClusterError> {
        let fits = |n: &Node| !n.failed && vim.free(n.node_id).is_some_and(|f| requirements.fits_in(&f));
        let idle = self
            .pods
            .values()
            .filter(|p| p.state == PodState::Idle)
            .find(|p| self.nodes.get(&p.node_id).is_some_and(fits))
            .map(|p| p.pod_id);
        if let Some(pod) = idle {
            return Ok((pod, false));
        }
        let best = self
            .nodes
            .values()
            .filter(|n| fits(n))
            .map(|n| (n.node_id, vim.free(n.node_id).unwrap_or_default().magnitude()))
            .fold(None::<(NodeId, (u64, u64, u64, u64))>, |best, (id, mag)| match best {
                Some((_, m)) if m >= mag => best,
                _ => Some((id, mag)),
            });
        match best {
            Some((node, _)) => Ok((self.add_idle_pod(node)?, true)),
            None => Err(ClusterError::ClusterExhausted(requirements)),
        }
    }

    pub fn assign(&mut self, pod_id: PodId, instance: InstanceId) -> Result<(), ClusterError> {
        let pod = self.pod_mut(pod_id)?;
        if pod.state != PodState::Idle {
            return Err(ClusterError::WrongPodState { pod: pod_id, state: pod.state, expected: PodState::Idle });
        }
        pod.state = PodState::Assigned;
        pod.instance = Some(instance);
        Ok(())
    }

    /// Node-agent startup plan: the virtual time each container is up.
    /// Parallel startups all begin at `start`; sequential ones run one at a
    /// time through the node's queue.
    pub fn plan_startup(
        &mut self,
        pod_id: PodId,
        containers: &[(String, SimTime)],
        mode: InstantiationMode,
        start: SimTime,
    ) -> Result<Vec<(String, SimTime)>, ClusterError> {
        let pod = self.pods.get_mut(&pod_id).ok_or(ClusterError::UnknownPod(pod_id))?;
        if pod.state != PodState::Assigned {
            return Err(ClusterError::WrongPodState { pod: pod_id, state: pod.state, expected: PodState::Assigned });
        }
        pod.containers = containers.iter().map(|(c, _)| c.clone()).collect();
        let node = self.nodes.get_mut(&pod.node_id).ok_or(ClusterError::UnknownNode(pod.node_id))?;
        Ok(match mode {
            InstantiationMode::Parallel => containers.iter().map(|(c, cost)| (c.clone(), start + *cost)).collect(),
            InstantiationMode::Sequential => {
                let mut t = start.max(node.script_busy_until);
                let plan = containers
                    .iter()
                    .map(|(c, cost)| {
                        t += *cost;
                        (c.clone(), t)
                    })
                    .collect();
                node.script_busy_until = t;
                plan
            }
        })
    }

    pub fn mark_running(&mut self, pod_id: PodId) -> Result<(), ClusterError> {
        let pod = self.pod_mut(pod_id)?;
        if pod.state != PodState::Assigned || pod.containers.is_empty() {
            return Err(ClusterError::WrongPodState { pod: pod_id, state: pod.state, expected: PodState::Assigned });
        }
        pod.state = PodState::Running;
        Ok(())
    }

    pub fn fail_pod(&mut self, pod_id: PodId) -> Result<(), ClusterError> {
        let pod = self.pod_mut(pod_id)?;
        if matches!(pod.state, PodState::Assigned | PodState::Running) {
            pod.state = PodState::Failed;
        }
        Ok(())
    }

    pub fn terminate_pod(&mut self, pod_id: PodId) -> Result<(), ClusterError> {
        let pod = self.pod_mut(pod_id)?;
        if pod.state != PodState::Failed {
            pod.state = PodState::Terminated;
        }
        Ok(())
    }

    pub fn silence(&mut self, node_id: NodeId, now: SimTime) -> Result<(), ClusterError> {
        let node = self.nodes.get_mut(&node_id).ok_or(ClusterError::UnknownNode(node_id))?;
        node.silent_since.get_or_insert(now);
        Ok(())
    }

    /// Marks every node whose last heartbeat is older than the liveness
    /// window as failed, and fails its Assigned and Running pods. Returns the
    /// newly failed nodes with the pods that were active on them.
    pub fn controller_scan(&mut self, now: SimTime) -> Vec<(NodeId, Vec<PodId>)> {
        let window = self.liveness_window();
        let interval = self.heartbeat_interval;
        let mut out = Vec::new();
        for node in self.nodes.values_mut().filter(|n| !n.failed) {
            if now.saturating_sub(node.last_heartbeat(now, interval)) > window {
                node.failed = true;
                let mut affected = Vec::new();
                for pod_id in &node.pods {
                    let pod = self.pods.get_mut(pod_id).expect("node lists its pods");
                    if matches!(pod.state, PodState::Assigned | PodState::Running) {
                        pod.state = PodState::Failed;
                        affected.push(*pod_id);
                    }
                }
                out.push((node.node_id, affected));
            }
        }
        out
    }
}
