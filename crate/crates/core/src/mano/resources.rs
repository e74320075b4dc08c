//! Resource vectors and the VIM allocator over per-node pools.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use super::{GrantId, InstanceId, NodeId, PodId};

const KB_PER_MB: u64 = 1000;

/// Computing, caching and communication quantities.
///
/// Memory is kept in kilobytes (1 MB = 1000 kB) so that footprints such as
/// 83.9 MB are exact; it is read and written as fractional megabytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "WireVector", into = "WireVector")]
pub struct ResourceVector {
    /// Millicores.
    pub cpu: u64,
    pub memory_kb: u64,
    /// MB.
    pub storage: u64,
    /// Mbps.
    pub bandwidth: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireVector {
    #[serde(default)]
    cpu: u64,
    #[serde(default)]
    memory: f64,
    #[serde(default)]
    storage: u64,
    #[serde(default)]
    bandwidth: u64,
}

impl From<WireVector> for ResourceVector {
    fn from(w: WireVector) -> Self {
        ResourceVector::new(w.cpu, w.memory, w.storage, w.bandwidth)
    }
}

impl From<ResourceVector> for WireVector {
    fn from(r: ResourceVector) -> Self {
        WireVector { cpu: r.cpu, memory: r.memory_mb(), storage: r.storage, bandwidth: r.bandwidth }
    }
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector { cpu: 0, memory_kb: 0, storage: 0, bandwidth: 0 };

    /// `memory_mb` is rounded to the nearest kilobyte; negative values clamp to zero.
    pub fn new(cpu: u64, memory_mb: f64, storage: u64, bandwidth: u64) -> Self {
        let memory_kb = if memory_mb.is_finite() && memory_mb > 0.0 {
            (memory_mb * KB_PER_MB as f64).round() as u64
        } else {
            0
        };
        ResourceVector { cpu, memory_kb, storage, bandwidth }
    }

    pub fn memory_mb(&self) -> f64 {
        self.memory_kb as f64 / KB_PER_MB as f64
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    /// Componentwise `self <= other`.
    pub fn fits_in(&self, other: &ResourceVector) -> bool {
        self.cpu <= other.cpu
            && self.memory_kb <= other.memory_kb
            && self.storage <= other.storage
            && self.bandwidth <= other.bandwidth
    }

    pub fn checked_sub(&self, rhs: &ResourceVector) -> Option<ResourceVector> {
        Some(ResourceVector {
            cpu: self.cpu.checked_sub(rhs.cpu)?,
            memory_kb: self.memory_kb.checked_sub(rhs.memory_kb)?,
            storage: self.storage.checked_sub(rhs.storage)?,
            bandwidth: self.bandwidth.checked_sub(rhs.bandwidth)?,
        })
    }

    /// Scalar size used to rank nodes by free capacity.
    pub fn magnitude(&self) -> (u64, u64, u64, u64) {
        (self.cpu, self.memory_kb, self.storage, self.bandwidth)
    }

    pub fn select(&self, c: Components) -> ResourceVector {
        ResourceVector {
            cpu: if c.cpu { self.cpu } else { 0 },
            memory_kb: if c.memory { self.memory_kb } else { 0 },
            storage: if c.other { self.storage } else { 0 },
            bandwidth: if c.other { self.bandwidth } else { 0 },
        }
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;
    fn add(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector {
            cpu: self.cpu + rhs.cpu,
            memory_kb: self.memory_kb + rhs.memory_kb,
            storage: self.storage + rhs.storage,
            bandwidth: self.bandwidth + rhs.bandwidth,
        }
    }
}

impl Sub for ResourceVector {
    type Output = ResourceVector;
    /// # Panics
    /// On componentwise underflow.
    fn sub(self, rhs: ResourceVector) -> ResourceVector {
        self.checked_sub(&rhs).expect("resource vector underflow")
    }
}

impl std::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = ResourceVector>>(iter: I) -> Self {
        iter.fold(ResourceVector::ZERO, Add::add)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cpu={}m mem={:.3}MB sto={}MB bw={}Mbps",
            self.cpu,
            self.memory_mb(),
            self.storage,
            self.bandwidth
        )
    }
}

/// Which parts of a grant to return. `other` covers storage and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Components {
    pub cpu: bool,
    pub memory: bool,
    pub other: bool,
}

impl Components {
    pub const CPU: Components = Components { cpu: true, memory: false, other: false };
    pub const MEMORY: Components = Components { cpu: false, memory: true, other: false };
    pub const MEMORY_AND_OTHER: Components = Components { cpu: false, memory: true, other: true };
    pub const ALL: Components = Components { cpu: true, memory: true, other: true };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceGrant {
    pub grant_id: GrantId,
    pub instance_id: InstanceId,
    pub pod_id: PodId,
    pub node_id: NodeId,
    pub amount: ResourceVector,
    pub cpu_held: bool,
    pub memory_held: bool,
    pub other_held: bool,
}

impl ResourceGrant {
    pub fn held(&self) -> Components {
        Components { cpu: self.cpu_held, memory: self.memory_held, other: self.other_held }
    }

    /// The portion of `amount` still reserved.
    pub fn live_amount(&self) -> ResourceVector {
        self.amount.select(self.held())
    }

    pub fn is_live(&self) -> bool {
        self.cpu_held || self.memory_held || self.other_held
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VimError {
    #[error("zero-amount allocation rejected")]
    ZeroRequest,
    #[error("insufficient resources on node {node}: requested {requested}, free {free}")]
    InsufficientResources { node: NodeId, requested: ResourceVector, free: ResourceVector },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown grant {0}")]
    UnknownGrant(GrantId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Pool {
    pub capacity: ResourceVector,
    pub free: ResourceVector,
}

/// Atomic check-and-reserve allocator over the node resource pools.
#[derive(Debug, Clone, Default)]
pub struct Vim {
    pools: BTreeMap<NodeId, Pool>,
    grants: BTreeMap<GrantId, ResourceGrant>,
    next_grant: u64,
}

impl Vim {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: NodeId, capacity: ResourceVector) {
        self.pools.insert(node, Pool { capacity, free: capacity });
    }

    pub fn pool(&self, node: NodeId) -> Option<&Pool> {
        self.pools.get(&node)
    }

    pub fn pools(&self) -> impl Iterator<Item = (NodeId, &Pool)> {
        self.pools.iter().map(|(k, v)| (*k, v))
    }

    pub fn free(&self, node: NodeId) -> Option<ResourceVector> {
        self.pools.get(&node).map(|p| p.free)
    }

    pub fn grant(&self, id: GrantId) -> Option<&ResourceGrant> {
        self.grants.get(&id)
    }

    pub fn grants(&self) -> impl Iterator<Item = &ResourceGrant> {
        self.grants.values()
    }

    pub fn allocate(
        &mut self,
        node: NodeId,
        amount: ResourceVector,
        instance: InstanceId,
        pod: PodId,
    ) -> Result<ResourceGrant, VimError> {
        if amount.is_zero() {
            return Err(VimError::ZeroRequest);
        }
        let pool = self.pools.get_mut(&node).ok_or(VimError::UnknownNode(node))?;
        let free = pool.free.checked_sub(&amount).ok_or(VimError::InsufficientResources {
            node,
            requested: amount,
            free: pool.free,
        })?;
        pool.free = free;
        self.next_grant += 1;
        let grant = ResourceGrant {
            grant_id: GrantId(self.next_grant),
            instance_id: instance,
            pod_id: pod,
            node_id: node,
            amount,
            cpu_held: true,
            memory_held: true,
            other_held: true,
        };
        self.grants.insert(grant.grant_id, grant.clone());
        Ok(grant)
    }

    /// Returns the named components to the pool. Components already released
    /// are skipped, so repeated calls are no-ops. Yields the amount actually
    /// returned.
    pub fn release(&mut self, id: GrantId, components: Components) -> Result<ResourceVector, VimError> {
        let grant = self.grants.get_mut(&id).ok_or(VimError::UnknownGrant(id))?;
        let effective = Components {
            cpu: components.cpu && grant.cpu_held,
            memory: components.memory && grant.memory_held,
            other: components.other && grant.other_held,
        };
        let returned = grant.amount.select(effective);
        grant.cpu_held &= !effective.cpu;
        grant.memory_held &= !effective.memory;
        grant.other_held &= !effective.other;
        let pool = self.pools.get_mut(&grant.node_id).expect("grant node has a pool");
        pool.free = pool.free + returned;
        Ok(returned)
    }

    pub fn live_total(&self, node: NodeId) -> ResourceVector {
        self.grants.values().filter(|g| g.node_id == node).map(ResourceGrant::live_amount).sum()
    }

    /// Σ live grants + free = capacity, for every node.
    pub fn is_conserved(&self) -> bool {
        self.pools.iter().all(|(node, pool)| self.live_total(*node) + pool.free == pool.capacity)
    }

    pub fn free_snapshot(&self) -> BTreeMap<NodeId, ResourceVector> {
        self.pools.iter().map(|(n, p)| (*n, p.free)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node_cap() -> ResourceVector {
        ResourceVector::new(4000, 32768.0, 100_000, 1000)
    }

    fn vim() -> Vim {
        let mut v = Vim::new();
        v.add_node(NodeId(0), node_cap());
        v
    }

    #[test]
    fn allocate_decrements_free() {
        let mut v = vim();
        let g = v.allocate(NodeId(0), ResourceVector::new(1000, 512.0, 0, 100), InstanceId(1), PodId(1)).unwrap();
        assert_eq!(v.free(NodeId(0)).unwrap(), ResourceVector::new(3000, 32256.0, 100_000, 900));
        assert!(g.cpu_held && g.memory_held);
        assert!(v.is_conserved());
    }

    #[test]
    fn oversize_request_leaves_pool_untouched() {
        let mut v = vim();
        let err = v.allocate(NodeId(0), ResourceVector::new(5000, 0.0, 0, 0), InstanceId(1), PodId(1)).unwrap_err();
        assert!(matches!(err, VimError::InsufficientResources { .. }));
        assert_eq!(v.free(NodeId(0)).unwrap(), node_cap());
    }

    #[test]
    fn zero_request_rejected() {
        let mut v = vim();
        assert_eq!(v.allocate(NodeId(0), ResourceVector::ZERO, InstanceId(1), PodId(1)), Err(VimError::ZeroRequest));
    }

    #[test]
    fn partial_release_then_idempotent_memory_release() {
        let mut v = vim();
        let g = v.allocate(NodeId(0), ResourceVector::new(2000, 83.9, 0, 0), InstanceId(1), PodId(1)).unwrap();
        let back = v.release(g.grant_id, Components::CPU).unwrap();
        assert_eq!(back.cpu, 2000);
        let g2 = v.grant(g.grant_id).unwrap();
        assert!(!g2.cpu_held && g2.memory_held);
        assert_eq!(v.free(NodeId(0)).unwrap().cpu, 4000);
        assert_eq!(v.release(g.grant_id, Components::MEMORY).unwrap().memory_kb, 83_900);
        assert_eq!(v.release(g.grant_id, Components::MEMORY).unwrap(), ResourceVector::ZERO);
        assert!(v.is_conserved());
        assert_eq!(v.release(GrantId(99), Components::ALL), Err(VimError::UnknownGrant(GrantId(99))));
    }

    #[test]
    fn memory_megabytes_are_exact() {
        let r = ResourceVector::new(0, 83.9, 0, 0);
        assert_eq!(r.memory_kb, 83_900);
        assert_eq!(r.memory_mb(), 83.9);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<ResourceVector>(&json).unwrap(), r);
    }

    #[test]
    fn ordering_is_componentwise() {
        let a = ResourceVector::new(1, 1.0, 1, 1);
        let b = ResourceVector::new(2, 0.5, 2, 2);
        assert!(!a.fits_in(&b) && !b.fits_in(&a));
        assert!(a.fits_in(&(a + b)));
    }
}
