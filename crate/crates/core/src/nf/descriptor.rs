use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mano::ResourceVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceClass {
    IntensiveComputation,
    HighThroughput,
}

impl ServiceClass {
    pub const ALL: [ServiceClass; 2] = [ServiceClass::IntensiveComputation, ServiceClass::HighThroughput];

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceClass::IntensiveComputation => "intensive_computation",
            ServiceClass::HighThroughput => "high_throughput",
        }
    }
}

impl fmt::Display for ServiceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown service class {0:?}")]
pub struct UnknownServiceClass(pub String);

impl FromStr for ServiceClass {
    type Err = UnknownServiceClass;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownServiceClass(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NfKind {
    Udm,
    Nrf,
    Srf,
    Cpcf,
    Asf,
    Upf,
    App,
}

impl NfKind {
    /// General NFs every template shares; they run from local storage.
    pub const SHARED: [NfKind; 4] = [NfKind::Srf, NfKind::Cpcf, NfKind::Udm, NfKind::Nrf];

    pub fn is_shared(self) -> bool {
        Self::SHARED.contains(&self)
    }

    /// Storage class implied by the kind: dedicated NFs and APPs live in the
    /// remote image repository, everything else locally.
    pub fn storage_class(self) -> StorageClass {
        match self {
            NfKind::Asf | NfKind::App => StorageClass::Remote,
            _ => StorageClass::Local,
        }
    }
}

impl fmt::Display for NfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NfKind::Udm => "UDM",
            NfKind::Nrf => "NRF",
            NfKind::Srf => "SRF",
            NfKind::Cpcf => "CPCF",
            NfKind::Asf => "ASF",
            NfKind::Upf => "UPF",
            NfKind::App => "APP",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageClass {
    Local,
    Remote,
}

impl fmt::Display for StorageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StorageClass::Local => "local",
            StorageClass::Remote => "remote",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NfDescriptor {
    pub nf_id: String,
    pub nf_kind: NfKind,
    pub storage_class: StorageClass,
    pub image_ref: String,
    #[serde(default)]
    pub resource_request: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DescriptorError {
    #[error("{kind} NF {nf_id:?} must use {expected} storage")]
    StorageClassMismatch { nf_id: String, kind: NfKind, expected: StorageClass },
    #[error("NF id {0:?} must be non-empty ASCII without '/', ':' or whitespace")]
    BadId(String),
}

impl NfDescriptor {
    /// Descriptor with the kind's storage class and a default image reference.
    pub fn new(nf_id: &str, nf_kind: NfKind) -> Self {
        let storage_class = nf_kind.storage_class();
        let image_ref = match storage_class {
            StorageClass::Local => format!("local/{nf_id}:1"),
            StorageClass::Remote => format!("repo.remote/{nf_id}:1"),
        };
        NfDescriptor { nf_id: nf_id.to_string(), nf_kind, storage_class, image_ref, resource_request: ResourceVector::ZERO }
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        if !is_valid_id(&self.nf_id) {
            return Err(DescriptorError::BadId(self.nf_id.clone()));
        }
        let expected = self.nf_kind.storage_class();
        if self.storage_class != expected {
            return Err(DescriptorError::StorageClassMismatch {
                nf_id: self.nf_id.clone(),
                kind: self.nf_kind,
                expected,
            });
        }
        Ok(())
    }
}

pub(crate) fn is_valid_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_graphic() && b != b'/' && b != b':')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn storage_partition_holds_for_every_kind() {
        for kind in [NfKind::Udm, NfKind::Nrf, NfKind::Srf, NfKind::Cpcf, NfKind::Asf, NfKind::Upf, NfKind::App] {
            let d = NfDescriptor::new("x", kind);
            assert!(d.validate().is_ok());
            let general = kind.is_shared();
            let remote = d.storage_class == StorageClass::Remote;
            if general {
                assert!(!remote);
            }
            if matches!(kind, NfKind::Asf | NfKind::App) {
                assert!(remote);
            }
        }
    }

    #[test]
    fn mismatched_storage_rejected() {
        let mut d = NfDescriptor::new("udm", NfKind::Udm);
        d.storage_class = StorageClass::Remote;
        assert!(matches!(d.validate(), Err(DescriptorError::StorageClassMismatch { .. })));
        assert!(NfDescriptor::new("a/b", NfKind::App).validate().is_err());
    }

    #[test]
    fn service_class_names() {
        assert_eq!("high_throughput".parse::<ServiceClass>().unwrap(), ServiceClass::HighThroughput);
        assert!("unknown".parse::<ServiceClass>().is_err());
        assert_eq!(serde_json::to_string(&NfKind::Cpcf).unwrap(), "\"CPCF\"");
    }
}
