//! The SBM/1 message: an HTTP-shaped request/response unit and its
//! canonical byte framing.
//!
//! ```text
//! request  := METHOD SP path SP "SBM/1" CRLF headers CRLF body
//! response := "SBM/1" SP status CRLF headers CRLF body
//! headers  := ( key ":" SP value CRLF )*
//! ```
//!
//! `correlation-id` and `content-length` are always present on the wire. They
//! are carried as dedicated fields on [`Message`] and written first, in that
//! order, followed by the remaining headers in insertion order.

use std::fmt;
use std::str;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub const VERSION: &str = "SBM/1";
const CRLF: &[u8] = b"\r\n";
const HDR_CORRELATION: &str = "correlation-id";
const HDR_LENGTH: &str = "content-length";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MessageError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("path {0:?} is outside the /sbi, /nbi and /ebi namespaces")]
    UnknownNamespace(String),
    #[error("invalid path {0:?}")]
    InvalidPath(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("duplicate header {0:?}")]
    DuplicateHeader(String),
}

fn malformed(msg: impl Into<String>) -> MessageError {
    MessageError::MalformedFrame(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Get,
    Post,
    Put,
    Delete,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Get, Method::Post, Method::Put, Method::Delete];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Put => "PUT",
            Method::Delete => "DELETE",
        }
    }

    fn from_token(tok: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == tok)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Interface class of a request, fixed by its path prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Namespace {
    /// NF to NF.
    Sbi,
    /// Applications to the MEC layer.
    Nbi,
    /// MANO to the MEC layer.
    Ebi,
}

impl Namespace {
    pub const ALL: [Namespace; 3] = [Namespace::Sbi, Namespace::Nbi, Namespace::Ebi];

    pub fn prefix(self) -> &'static str {
        match self {
            Namespace::Sbi => "/sbi/",
            Namespace::Nbi => "/nbi/",
            Namespace::Ebi => "/ebi/",
        }
    }

    pub fn of_path(path: &str) -> Option<Namespace> {
        Namespace::ALL.into_iter().find(|ns| path.starts_with(ns.prefix()))
    }
}

/// HTTP-style status code in `100..=599`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Status(u16);

impl Status {
    pub const OK: Status = Status(200);
    pub const CREATED: Status = Status(201);
    pub const ACCEPTED: Status = Status(202);
    pub const BAD_REQUEST: Status = Status(400);
    pub const NOT_FOUND: Status = Status(404);
    pub const METHOD_NOT_ALLOWED: Status = Status(405);
    pub const CONFLICT: Status = Status(409);
    pub const UNPROCESSABLE: Status = Status(422);
    pub const INTERNAL: Status = Status(500);
    pub const UNAVAILABLE: Status = Status(503);
    pub const GATEWAY_TIMEOUT: Status = Status(504);

    pub fn new(code: u16) -> Option<Status> {
        (100..=599).contains(&code).then_some(Status(code))
    }

    pub fn code(self) -> u16 {
        self.0
    }

    pub fn is_success(self) -> bool {
        (200..300).contains(&self.0)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Request,
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum StartLine {
    Request { method: Method, path: String },
    Response { status: Status },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    start: StartLine,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
    correlation_id: u64,
}

fn is_token_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b"!#$%&'*+-.^_`|~".contains(&b)
}

fn check_path(path: &str) -> Result<(), MessageError> {
    if !path.starts_with('/') || !path.bytes().all(|b| b.is_ascii_graphic()) {
        return Err(MessageError::InvalidPath(path.to_string()));
    }
    if Namespace::of_path(path).is_none() {
        return Err(MessageError::UnknownNamespace(path.to_string()));
    }
    Ok(())
}

fn normalize_key(key: &str) -> Result<String, MessageError> {
    if key.is_empty() || !key.bytes().all(is_token_byte) {
        return Err(MessageError::InvalidHeader(format!("bad key {key:?}")));
    }
    let key = key.to_ascii_lowercase();
    if key == HDR_CORRELATION || key == HDR_LENGTH {
        return Err(MessageError::InvalidHeader(format!("{key} is managed by the codec")));
    }
    Ok(key)
}

fn check_value(value: &str) -> Result<(), MessageError> {
    if value.bytes().any(|b| b == b'\r' || b == b'\n') {
        return Err(MessageError::InvalidHeader(format!("value {value:?} contains a line break")));
    }
    Ok(())
}

impl Message {
    pub fn request(method: Method, path: impl Into<String>) -> Result<Message, MessageError> {
        let path = path.into();
        check_path(&path)?;
        Ok(Message {
            start: StartLine::Request { method, path },
            headers: Vec::new(),
            body: Vec::new(),
            correlation_id: 0,
        })
    }

    pub fn response(status: Status) -> Message {
        Message {
            start: StartLine::Response { status },
            headers: Vec::new(),
            body: Vec::new(),
            correlation_id: 0,
        }
    }

    pub fn json_response<T: Serialize>(status: Status, value: &T) -> Message {
        let body = serde_json::to_vec(value).expect("in-memory JSON encoding");
        Message::response(status)
            .with_header("content-type", "application/json")
            .expect("static header")
            .with_body(body)
    }

    /// Error response with a machine-readable `code` and human-readable detail.
    pub fn error(status: Status, code: &str, detail: impl fmt::Display) -> Message {
        Message::json_response(
            status,
            &serde_json::json!({ "error": code, "detail": detail.to_string() }),
        )
    }

    pub fn with_header(mut self, key: &str, value: impl Into<String>) -> Result<Message, MessageError> {
        let key = normalize_key(key)?;
        let value = value.into();
        check_value(&value)?;
        if self.headers.iter().any(|(k, _)| *k == key) {
            return Err(MessageError::DuplicateHeader(key));
        }
        self.headers.push((key, value));
        Ok(self)
    }

    pub fn with_body(mut self, body: impl Into<Vec<u8>>) -> Message {
        self.body = body.into();
        self
    }

    pub fn with_json<T: Serialize>(self, value: &T) -> Message {
        self.with_body(serde_json::to_vec(value).expect("in-memory JSON encoding"))
    }

    pub fn with_correlation_id(mut self, id: u64) -> Message {
        self.correlation_id = id;
        self
    }

    pub(crate) fn set_correlation_id(&mut self, id: u64) {
        self.correlation_id = id;
    }

    pub fn kind(&self) -> MessageKind {
        match self.start {
            StartLine::Request { .. } => MessageKind::Request,
            StartLine::Response { .. } => MessageKind::Response,
        }
    }

    pub fn is_request(&self) -> bool {
        self.kind() == MessageKind::Request
    }

    pub fn method(&self) -> Option<Method> {
        match &self.start {
            StartLine::Request { method, .. } => Some(*method),
            StartLine::Response { .. } => None,
        }
    }

    pub fn path(&self) -> Option<&str> {
        match &self.start {
            StartLine::Request { path, .. } => Some(path),
            StartLine::Response { .. } => None,
        }
    }

    pub fn namespace(&self) -> Option<Namespace> {
        self.path().and_then(Namespace::of_path)
    }

    /// Path segments after the namespace prefix: `/sbi/udm/t/k` yields `["udm", "t", "k"]`.
    pub fn segments(&self) -> Vec<&str> {
        match self.path() {
            Some(p) => p[5..].split('/').filter(|s| !s.is_empty()).collect(),
            None => Vec::new(),
        }
    }

    pub fn status(&self) -> Option<Status> {
        match self.start {
            StartLine::Response { status } => Some(status),
            StartLine::Request { .. } => None,
        }
    }

    pub fn is_success(&self) -> bool {
        self.status().is_some_and(Status::is_success)
    }

    pub fn correlation_id(&self) -> u64 {
        self.correlation_id
    }

    pub fn headers(&self) -> &[(String, String)] {
        &self.headers
    }

    /// Case-insensitive header lookup.
    pub fn header(&self, key: &str) -> Option<&str> {
        let key = key.to_ascii_lowercase();
        self.headers.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str())
    }

    pub fn body(&self) -> &[u8] {
        &self.body
    }

    pub fn json<T: DeserializeOwned>(&self) -> Result<T, serde_json::Error> {
        serde_json::from_slice(&self.body)
    }

    /// `error` field of a JSON error body, if any.
    pub fn error_code(&self) -> Option<String> {
        let v: serde_json::Value = self.json().ok()?;
        v.get("error")?.as_str().map(str::to_string)
    }

    pub fn error_detail(&self) -> String {
        self.json::<serde_json::Value>()
            .ok()
            .and_then(|v| v.get("detail").and_then(|d| d.as_str()).map(str::to_string))
            .unwrap_or_else(|| String::from_utf8_lossy(&self.body).into_owned())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serialize_message(self)
    }
}

/// Canonical SBM/1 encoding. Deterministic: equal messages give equal bytes.
pub fn serialize_message(m: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + m.body.len());
    match &m.start {
        StartLine::Request { method, path } => {
            out.extend_from_slice(method.as_str().as_bytes());
            out.push(b' ');
            out.extend_from_slice(path.as_bytes());
            out.push(b' ');
            out.extend_from_slice(VERSION.as_bytes());
        }
        StartLine::Response { status } => {
            out.extend_from_slice(VERSION.as_bytes());
            out.push(b' ');
            out.extend_from_slice(status.to_string().as_bytes());
        }
    }
    out.extend_from_slice(CRLF);
    let mut push_header = |k: &str, v: &str| {
        out.extend_from_slice(k.as_bytes());
        out.extend_from_slice(b": ");
        out.extend_from_slice(v.as_bytes());
        out.extend_from_slice(CRLF);
    };
    push_header(HDR_CORRELATION, &m.correlation_id.to_string());
    push_header(HDR_LENGTH, &m.body.len().to_string());
    for (k, v) in &m.headers {
        push_header(k, v);
    }
    out.extend_from_slice(CRLF);
    out.extend_from_slice(&m.body);
    out
}

fn parse_decimal(field: &str, v: &str) -> Result<u64, MessageError> {
    let canonical = !v.is_empty()
        && v.bytes().all(|b| b.is_ascii_digit())
        && (v == "0" || !v.starts_with('0'));
    if !canonical {
        return Err(malformed(format!("{field} {v:?} is not a canonical decimal")));
    }
    v.parse().map_err(|_| malformed(format!("{field} {v:?} out of range")))
}

fn parse_start_line(line: &str) -> Result<StartLine, MessageError> {
    if let Some(rest) = line.strip_prefix("SBM/1 ") {
        if rest.len() != 3 || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed(format!("bad status {rest:?}")));
        }
        let code: u16 = rest.parse().expect("three ascii digits");
        let status = Status::new(code).ok_or_else(|| malformed(format!("status {code} out of range")))?;
        return Ok(StartLine::Response { status });
    }
    let mut parts = line.split(' ');
    let (Some(method), Some(path), Some(version), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(malformed(format!("bad start line {line:?}")));
    };
    let method = Method::from_token(method).ok_or_else(|| malformed(format!("unknown method {method:?}")))?;
    if version != VERSION {
        return Err(malformed(format!("unsupported version {version:?}")));
    }
    match check_path(path) {
        Ok(()) => Ok(StartLine::Request { method, path: path.to_string() }),
        Err(MessageError::UnknownNamespace(p)) => Err(MessageError::UnknownNamespace(p)),
        Err(_) => Err(malformed(format!("bad path {path:?}"))),
    }
}

/// Parses one complete SBM/1 frame. Trailing bytes after the body are rejected.
///
/// Header keys are lowercased. The two mandatory headers may appear at any
/// position; every other header keeps its relative order.
pub fn parse_message(b: &[u8]) -> Result<Message, MessageError> {
    let mut rest = b;
    let mut next_line = |what: &str| -> Result<&[u8], MessageError> {
        let pos = rest
            .windows(2)
            .position(|w| w == CRLF)
            .ok_or_else(|| malformed(format!("missing CRLF after {what}")))?;
        let line = &rest[..pos];
        rest = &rest[pos + 2..];
        Ok(line)
    };

    let start = next_line("start line")?;
    let start = str::from_utf8(start).map_err(|_| malformed("start line is not UTF-8"))?;
    let start = parse_start_line(start)?;

    let mut correlation = None;
    let mut length = None;
    let mut msg = Message { start, headers: Vec::new(), body: Vec::new(), correlation_id: 0 };
    loop {
        let line = next_line("headers (missing blank line)")?;
        if line.is_empty() {
            break;
        }
        let line = str::from_utf8(line).map_err(|_| malformed("header is not UTF-8"))?;
        let (key, value) = line
            .split_once(": ")
            .ok_or_else(|| malformed(format!("bad header line {line:?}")))?;
        if key.contains(':') {
            return Err(malformed(format!("bad header line {line:?}")));
        }
        match key.to_ascii_lowercase().as_str() {
            HDR_CORRELATION => {
                if correlation.replace(parse_decimal(HDR_CORRELATION, value)?).is_some() {
                    return Err(malformed("duplicate correlation-id"));
                }
            }
            HDR_LENGTH => {
                if length.replace(parse_decimal(HDR_LENGTH, value)?).is_some() {
                    return Err(malformed("duplicate content-length"));
                }
            }
            _ => {
                msg = msg.with_header(key, value).map_err(|e| malformed(e.to_string()))?;
            }
        }
    }
    let correlation = correlation.ok_or_else(|| malformed("missing correlation-id"))?;
    let length = length.ok_or_else(|| malformed("missing content-length"))? as usize;
    if rest.len() < length {
        return Err(malformed(format!("body has {} bytes, content-length is {length}", rest.len())));
    }
    if rest.len() > length {
        return Err(malformed(format!("{} trailing bytes after body", rest.len() - length)));
    }
    msg.body = rest.to_vec();
    msg.correlation_id = correlation;
    Ok(msg)
}
