//! Management and orchestration: templates, instances, the cluster of
//! master and secondary nodes, the state store and the VIM.

pub mod cluster;
pub mod instance;
pub mod orchestrator;
pub mod resources;
pub mod state;
pub mod template;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cluster::{Cluster, ClusterError, Node, Pod, PodState};
pub use instance::{Instance, InstanceState, LifecycleError};
pub use orchestrator::{client, DEFAULT_OVERHEAD, live_grants, ContainerFault, FaultReport, InstanceSelector, Mano, ManoConfig, ManoError, NodeSpec, ReleaseOutcome, ReleaseRule, RequestOutcome};
pub use resources::{Components, Pool, ResourceGrant, ResourceVector, Vim, VimError};
pub use state::{StateRecord, StateStore};
pub use template::{ManagedNf, Template, TemplateError};

pub const MANO: &str = "mano";

macro_rules! id_type {
    ($name:ident, $repr:ty) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $repr);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }

        impl FromStr for $name {
            type Err = std::num::ParseIntError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.parse().map($name)
            }
        }
    };
}

id_type!(NodeId, u32);
id_type!(PodId, u64);
id_type!(InstanceId, u64);
id_type!(GrantId, u64);

/// Whether a pod's container startups overlap or run one after another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstantiationMode {
    #[default]
    Parallel,
    Sequential,
}

impl InstantiationMode {
    pub const ALL: [InstantiationMode; 2] = [InstantiationMode::Parallel, InstantiationMode::Sequential];

    pub fn as_str(self) -> &'static str {
        match self {
            InstantiationMode::Parallel => "parallel",
            InstantiationMode::Sequential => "sequential",
        }
    }
}

impl fmt::Display for InstantiationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InstantiationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel" => Ok(InstantiationMode::Parallel),
            "sequential" => Ok(InstantiationMode::Sequential),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}
