//! Communication protocol conversion. Incoming user requests are either
//! SBM/1 frames, passed through untouched, or legacy `XMEC1` TLV frames,
//! re-encapsulated as `POST /ebi/mano/requests`.
//!
//! Legacy grammar: the magic `XMEC1` followed by TLV items, each a one-byte
//! tag, a two-byte big-endian length and that many value bytes.

use serde::{Deserialize, Serialize};

use super::{ServiceClass, CPCF};
use crate::bus::{parse_message, Bus, Endpoint, Message, MessageError, Method, Status};
use crate::mano::InstantiationMode;
use crate::sim::{EventKind, Fields};

pub const LEGACY_MAGIC: &[u8] = b"XMEC1";
pub const MANO_REQUESTS_PATH: &str = "/ebi/mano/requests";

pub const TAG_SERVICE_CLASS: u8 = 0x01;
pub const TAG_SERVICE_NAME: u8 = 0x02;
pub const TAG_INPUT: u8 = 0x03;
pub const TAG_ORIGIN: u8 = 0x04;
pub const TAG_MODE: u8 = 0x05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Http,
    Legacy,
}

impl ProtocolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::Http => "http",
            ProtocolKind::Legacy => "legacy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawServiceRequest {
    pub payload: Vec<u8>,
    pub service_class: ServiceClass,
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CpcfError {
    #[error("empty request payload")]
    EmptyPayload,
    #[error("payload matches neither SBM/1 nor the legacy grammar")]
    UnrecognizedProtocol,
    #[error("malformed legacy frame: {0}")]
    MalformedLegacy(String),
}

impl CpcfError {
    pub fn code(&self) -> &'static str {
        match self {
            CpcfError::EmptyPayload => "EmptyPayload",
            CpcfError::UnrecognizedProtocol => "UnrecognizedProtocol",
            CpcfError::MalformedLegacy(_) => "MalformedLegacy",
        }
    }
}

/// `Http` iff the payload is an SBM/1 request frame, `Legacy` iff it begins
/// with the legacy magic.
pub fn identify_protocol(r: &RawServiceRequest) -> Result<ProtocolKind, CpcfError> {
    if r.payload.is_empty() {
        return Err(CpcfError::EmptyPayload);
    }
    if r.payload.starts_with(LEGACY_MAGIC) {
        return Ok(ProtocolKind::Legacy);
    }
    match parse_message(&r.payload) {
        Ok(m) if m.is_request() => Ok(ProtocolKind::Http),
        _ => Err(CpcfError::UnrecognizedProtocol),
    }
}

pub fn convert(r: &RawServiceRequest) -> Result<Message, CpcfError> {
    match identify_protocol(r)? {
        ProtocolKind::Http => parse_message(&r.payload).map_err(|_| CpcfError::UnrecognizedProtocol),
        ProtocolKind::Legacy => {
            let body = &r.payload[LEGACY_MAGIC.len()..];
            decode_tlv(body)?;
            let build = || -> Result<Message, MessageError> {
                Ok(Message::request(Method::Post, MANO_REQUESTS_PATH)?
                    .with_header("x-origin-protocol", "legacy")?
                    .with_header("x-service-class", r.service_class.as_str())?
                    .with_header("x-origin", r.origin.clone())?
                    .with_body(body.to_vec()))
            };
            build().map_err(|e| CpcfError::MalformedLegacy(e.to_string()))
        }
    }
}

pub fn encode_tlv(items: &[(u8, &[u8])]) -> Vec<u8> {
    let mut out = Vec::new();
    for (tag, value) in items {
        let len = u16::try_from(value.len()).expect("TLV value longer than 65535 bytes");
        out.push(*tag);
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(value);
    }
    out
}

pub fn decode_tlv(mut body: &[u8]) -> Result<Vec<(u8, Vec<u8>)>, CpcfError> {
    let mut items = Vec::new();
    while !body.is_empty() {
        if body.len() < 3 {
            return Err(CpcfError::MalformedLegacy("truncated TLV header".into()));
        }
        let tag = body[0];
        let len = u16::from_be_bytes([body[1], body[2]]) as usize;
        body = &body[3..];
        if body.len() < len {
            return Err(CpcfError::MalformedLegacy(format!("tag {tag:#04x} wants {len} bytes, {} left", body.len())));
        }
        items.push((tag, body[..len].to_vec()));
        body = &body[len..];
    }
    Ok(items)
}

/// A user's service request as MANO consumes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    /// Kept as text so an unknown class reaches template selection and is
    /// reported there.
    pub service_class: String,
    pub service_name: String,
    #[serde(default)]
    pub input: serde_json::Value,
    #[serde(default)]
    pub mode: InstantiationMode,
    #[serde(default)]
    pub origin: String,
}

impl ServiceRequest {
    /// SBM/1 request frame addressed to MANO.
    pub fn to_http(&self, request_id: u64) -> Message {
        Message::request(Method::Post, MANO_REQUESTS_PATH)
            .and_then(|m| m.with_header("x-request-id", request_id.to_string()))
            .expect("static path and header")
            .with_json(self)
    }

    pub fn to_legacy(&self) -> Vec<u8> {
        let input = serde_json::to_vec(&self.input).expect("JSON value encodes");
        let mut out = LEGACY_MAGIC.to_vec();
        out.extend(encode_tlv(&[
            (TAG_SERVICE_CLASS, self.service_class.as_bytes()),
            (TAG_SERVICE_NAME, self.service_name.as_bytes()),
            (TAG_INPUT, &input),
            (TAG_ORIGIN, self.origin.as_bytes()),
            (TAG_MODE, self.mode.as_str().as_bytes()),
        ]));
        out
    }

    pub fn from_tlv(body: &[u8]) -> Result<ServiceRequest, CpcfError> {
        let bad = |what: &str| CpcfError::MalformedLegacy(what.to_string());
        let mut req = ServiceRequest {
            service_class: String::new(),
            service_name: String::new(),
            input: serde_json::Value::Null,
            mode: InstantiationMode::default(),
            origin: String::new(),
        };
        let text = |v: Vec<u8>| String::from_utf8(v).map_err(|_| bad("non-UTF-8 text field"));
        for (tag, value) in decode_tlv(body)? {
            match tag {
                TAG_SERVICE_CLASS => req.service_class = text(value)?,
                TAG_SERVICE_NAME => req.service_name = text(value)?,
                TAG_INPUT => req.input = serde_json::from_slice(&value).map_err(|_| bad("input is not JSON"))?,
                TAG_ORIGIN => req.origin = text(value)?,
                TAG_MODE => req.mode = text(value)?.parse().map_err(|_| bad("unknown mode"))?,
                _ => {}
            }
        }
        if req.service_class.is_empty() {
            return Err(bad("missing service class"));
        }
        Ok(req)
    }
}

/// Ingest message as the access side hands it to the CPCF.
pub fn ingest_message(raw: &RawServiceRequest, request_id: u64) -> Message {
    Message::request(Method::Post, "/sbi/cpcf/ingest")
        .and_then(|m| m.with_header("x-request-id", request_id.to_string()))
        .and_then(|m| m.with_header("x-service-class", raw.service_class.as_str()))
        .and_then(|m| m.with_header("x-origin", raw.origin.clone()))
        .expect("static headers")
        .with_body(raw.payload.clone())
}

#[derive(Debug, Default)]
pub struct Cpcf;

impl Cpcf {
    fn ingest(&mut self, req: &Message, bus: &mut Bus) -> Message {
        let request_id = req.header("x-request-id").unwrap_or("0").to_string();
        let subject = format!("req={request_id}");
        let origin = req.header("x-origin").unwrap_or("").to_string();
        bus.record(
            EventKind::RequestReceived,
            subject.clone(),
            Fields::new().with("origin", &origin).with("bytes", req.body().len()),
        );
        let class = req.header("x-service-class").unwrap_or("");
        let Ok(service_class) = class.parse::<ServiceClass>() else {
            bus.record(EventKind::RequestRejected, subject, Fields::new().with("error", "UnknownServiceClass"));
            return Message::error(Status::BAD_REQUEST, "UnknownServiceClass", format!("unknown service class {class:?}"));
        };
        let raw = RawServiceRequest { payload: req.body().to_vec(), service_class, origin };
        let result = identify_protocol(&raw).and_then(|kind| {
            bus.record(EventKind::ProtocolIdentified, subject.clone(), Fields::new().with("protocol", kind.as_str()));
            let converted = convert(&raw)?;
            if kind == ProtocolKind::Legacy {
                bus.record(EventKind::Converted, subject.clone(), Fields::new().with("path", MANO_REQUESTS_PATH));
            }
            Ok(converted)
        });
        let converted = match result {
            Ok(m) => m,
            Err(e) => {
                bus.record(EventKind::RequestRejected, subject, Fields::new().with("error", e.code()));
                return Message::error(Status::BAD_REQUEST, e.code(), &e);
            }
        };
        let converted = match converted.header("x-request-id") {
            Some(_) => converted,
            None => match converted.clone().with_header("x-request-id", request_id) {
                Ok(m) => m,
                Err(e) => return Message::error(Status::BAD_REQUEST, "BadHeader", e),
            },
        };
        let target = converted.segments().first().map(|s| s.to_string()).unwrap_or_default();
        match bus.send_request(&target, converted) {
            Ok(resp) => resp,
            Err(e) => Message::error(Status::UNAVAILABLE, "Unreachable", e),
        }
    }
}

impl Endpoint for Cpcf {
    fn handle(&mut self, req: &Message, bus: &mut Bus) -> Message {
        match (req.method(), req.segments().as_slice()) {
            (Some(Method::Post), [_, "ingest"]) => self.ingest(req, bus),
            _ => Message::error(Status::NOT_FOUND, "NoRoute", req.path().unwrap_or("")),
        }
    }
}

pub const ENDPOINT: &str = CPCF;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::serialize_message;

    fn raw(payload: Vec<u8>) -> RawServiceRequest {
        RawServiceRequest { payload, service_class: ServiceClass::IntensiveComputation, origin: "ue-1".into() }
    }

    fn sample() -> ServiceRequest {
        ServiceRequest {
            service_class: "intensive_computation".into(),
            service_name: "prime_sum".into(),
            input: serde_json::json!({ "n": 10 }),
            mode: InstantiationMode::Parallel,
            origin: "ue-1".into(),
        }
    }

    #[test]
    fn identifies_http() {
        let bytes = serialize_message(&sample().to_http(1));
        assert_eq!(identify_protocol(&raw(bytes)), Ok(ProtocolKind::Http));
    }

    #[test]
    fn identifies_legacy() {
        assert_eq!(identify_protocol(&raw(sample().to_legacy())), Ok(ProtocolKind::Legacy));
    }

    #[test]
    fn rejects_unknown_and_empty() {
        assert_eq!(identify_protocol(&raw(b"????".to_vec())), Err(CpcfError::UnrecognizedProtocol));
        assert_eq!(convert(&raw(b"????".to_vec())), Err(CpcfError::UnrecognizedProtocol));
        assert_eq!(identify_protocol(&raw(Vec::new())), Err(CpcfError::EmptyPayload));
        // a response frame is not a service request
        let resp = serialize_message(&Message::response(Status::OK));
        assert_eq!(identify_protocol(&raw(resp)), Err(CpcfError::UnrecognizedProtocol));
    }

    #[test]
    fn http_passthrough_is_byte_identity() {
        let bytes = serialize_message(&sample().to_http(9));
        let out = convert(&raw(bytes.clone())).unwrap();
        assert_eq!(serialize_message(&out), bytes);
    }

    #[test]
    fn legacy_is_reencapsulated() {
        let m = convert(&raw(sample().to_legacy())).unwrap();
        assert_eq!(m.method(), Some(Method::Post));
        assert_eq!(m.path(), Some(MANO_REQUESTS_PATH));
        assert_eq!(m.header("x-origin-protocol"), Some("legacy"));
        assert_eq!(ServiceRequest::from_tlv(m.body()).unwrap(), sample());
    }

    #[test]
    fn truncated_tlv() {
        let mut bytes = LEGACY_MAGIC.to_vec();
        bytes.extend_from_slice(&[TAG_SERVICE_NAME, 0x00, 0x09, b'a']);
        assert!(matches!(convert(&raw(bytes)), Err(CpcfError::MalformedLegacy(_))));
    }

    #[test]
    fn tlv_roundtrip() {
        let items = [(1u8, &b"abc"[..]), (7, &[][..]), (2, &[0u8; 300][..])];
        let enc = encode_tlv(&items);
        let dec = decode_tlv(&enc).unwrap();
        assert_eq!(dec.len(), 3);
        assert_eq!(dec[2].1.len(), 300);
    }
}
