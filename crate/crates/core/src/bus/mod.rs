//! Unified message bus shared by the SBI, NBI and EBI interfaces.

mod message;
mod router;

pub use message::{parse_message, serialize_message, Message, MessageError, MessageKind, Method, Namespace, Status, VERSION};
pub use router::{Bus, BusConfig, BusError, BusHandle, Endpoint, TraceEntry, TracePhase};
