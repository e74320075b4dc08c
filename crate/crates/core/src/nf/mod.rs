//! The service-oriented network functions of the MEC layer. Each NF is a
//! single-owner state machine registered as a bus endpoint; NFs reach each
//! other only through bus requests.
//!
//! Endpoint paths (all JSON unless noted):
//!
//! | endpoint | path | methods |
//! |---|---|---|
//! | `udm` | `/sbi/udm/{table}` | GET (scan), POST (create) |
//! | `udm` | `/sbi/udm/{table}/{key}` | GET, POST, PUT, DELETE |
//! | `nrf` | `/sbi/nrf/images/{id}` | GET (resolve), POST (store) |
//! | `srf` | `/sbi/srf/apps` | POST |
//! | `asf` | `/sbi/asf/select` | POST |
//! | `upf` | `/sbi/upf/route` | POST |
//! | `cpcf` | `/sbi/cpcf/ingest` | POST (raw bytes) |

pub mod asf;
pub mod cpcf;
mod descriptor;
pub mod nrf;
pub mod srf;
pub mod udm;
pub mod upf;

pub use descriptor::{DescriptorError, NfDescriptor, NfKind, ServiceClass, StorageClass, UnknownServiceClass};
pub(crate) use descriptor::is_valid_id;

use serde::de::DeserializeOwned;

use crate::bus::{Bus, BusError, Message, MessageError};

pub const UDM: &str = "udm";
pub const NRF: &str = "nrf";
pub const SRF: &str = "srf";
pub const CPCF: &str = "cpcf";
pub const ASF: &str = "asf";
pub const UPF: &str = "upf";

/// Failure of a request made to an NF over the bus.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NfError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error("{endpoint} rejected request ({status} {code}): {detail}")]
    Rejected { endpoint: String, status: u16, code: String, detail: String },
    #[error("undecodable response from {endpoint}: {detail}")]
    Decode { endpoint: String, detail: String },
}

impl NfError {
    /// Error code carried by a rejection, e.g. `"KeyNotFound"`.
    pub fn code(&self) -> Option<&str> {
        match self {
            NfError::Rejected { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// Sends `m` and turns non-2xx responses into [`NfError::Rejected`].
pub fn call(bus: &mut Bus, target: &str, m: Message) -> Result<Message, NfError> {
    let resp = bus.send_request(target, m)?;
    if resp.is_success() {
        Ok(resp)
    } else {
        Err(NfError::Rejected {
            endpoint: target.to_string(),
            status: resp.status().map(|s| s.code()).unwrap_or(0),
            code: resp.error_code().unwrap_or_else(|| "Unknown".into()),
            detail: resp.error_detail(),
        })
    }
}

pub fn call_json<T: DeserializeOwned>(bus: &mut Bus, target: &str, m: Message) -> Result<T, NfError> {
    let resp = call(bus, target, m)?;
    resp.json().map_err(|e| NfError::Decode { endpoint: target.to_string(), detail: e.to_string() })
}

pub(crate) fn decode_body<T: DeserializeOwned>(req: &Message) -> Result<T, Message> {
    req.json().map_err(|e| Message::error(crate::bus::Status::BAD_REQUEST, "BadBody", e))
}
