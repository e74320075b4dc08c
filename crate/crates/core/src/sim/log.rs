//! Canonical event log.
//!
//! One line per record: `seq TAB t TAB kind TAB subject TAB payload`. Subjects
//! are space-separated `key=value` ids, payloads `;`-separated `key=value`
//! pairs. The log hash is 64-bit FNV-1a over the canonical text, so it is
//! stable across platforms and toolchains.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::time::SimTime;

macro_rules! event_kinds {
    ($($name:ident),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum EventKind {
            $($name),*
        }

        impl EventKind {
            pub const ALL: &'static [EventKind] = &[$(EventKind::$name),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(EventKind::$name => stringify!($name)),*
                }
            }
        }

        impl FromStr for EventKind {
            type Err = LogParseError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $(stringify!($name) => Ok(EventKind::$name),)*
                    _ => Err(LogParseError { line: 0, reason: format!("unknown event kind {s:?}") }),
                }
            }
        }
    };
}

event_kinds! {
    RequestReceived,
    ProtocolIdentified,
    Converted,
    RequestRejected,
    TemplateSelected,
    ParamsInserted,
    NfResolved,
    RemoteImageFetch,
    ParamsUpdated,
    PodCreated,
    PodAssigned,
    ResourceGranted,
    ContainerStarted,
    PodRunning,
    InstanceActive,
    ServiceInvoked,
    VideoServed,
    ServiceCompleted,
    CpuReleased,
    MemoryReleased,
    Charged,
    InstanceFailed,
    FaultEvent,
    NodeRegistered,
    StateWrite,
    AppRegistryWritten,
    ImageStored,
    EndpointRegistered,
    CacheEvicted,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub seq: u64,
    pub t: SimTime,
    pub kind: EventKind,
    pub subject: String,
    pub payload: String,
}

impl EventRecord {
    /// Value of `key` in the subject (`req=3 inst=5`).
    pub fn subject_field(&self, key: &str) -> Option<&str> {
        self.subject
            .split(' ')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }

    /// Value of `key` in the payload (`cpu=500;mem=20.0`).
    pub fn field(&self, key: &str) -> Option<&str> {
        self.payload
            .split(';')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }

    pub fn field_parse<T: FromStr>(&self, key: &str) -> Option<T> {
        self.field(key)?.parse().ok()
    }

    pub fn subject_parse<T: FromStr>(&self, key: &str) -> Option<T> {
        self.subject_field(key)?.parse().ok()
    }

    pub fn canonical_line(&self) -> String {
        format!("{}\t{}\t{}\t{}\t{}", self.seq, self.t, self.kind, self.subject, self.payload)
    }
}

/// Ordered `key=value` pairs rendered as an event payload.
#[derive(Debug, Clone, Default)]
pub struct Fields(Vec<(&'static str, String)>);

impl Fields {
    pub fn new() -> Self {
        Fields(Vec::new())
    }

    pub fn with(mut self, key: &'static str, value: impl fmt::Display) -> Self {
        self.0.push((key, value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        self.0
            .iter()
            .map(|(k, v)| format!("{k}={}", scrub(v, &[';', '=', ' '])))
            .collect::<Vec<_>>()
            .join(";")
    }
}

impl From<Fields> for String {
    fn from(f: Fields) -> String {
        f.render()
    }
}

fn scrub(s: &str, extra: &[char]) -> String {
    s.chars()
        .map(|c| if c == '\t' || c == '\n' || c == '\r' || extra.contains(&c) { '_' } else { c })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event log line {line}: {reason}")]
pub struct LogParseError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record.
    ///
    /// # Panics
    /// If `t` precedes the last recorded timestamp.
    pub fn push(&mut self, t: SimTime, kind: EventKind, subject: impl Into<String>, payload: impl Into<String>) -> u64 {
        if let Some(last) = self.records.last() {
            assert!(t >= last.t, "event log time went backwards: {} < {}", t, last.t);
        }
        let seq = self.records.len() as u64 + 1;
        self.records.push(EventRecord {
            seq,
            t,
            kind,
            subject: scrub(&subject.into(), &[]),
            payload: scrub(&payload.into(), &[]),
        });
        seq
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EventRecord> {
        self.records.iter()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &EventRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.of_kind(kind).count()
    }

    /// Records grouped by the value of a subject key, preserving log order.
    pub fn by_subject(&self, key: &str) -> BTreeMap<String, Vec<&EventRecord>> {
        let mut out: BTreeMap<String, Vec<&EventRecord>> = BTreeMap::new();
        for r in &self.records {
            if let Some(v) = r.subject_field(key) {
                out.entry(v.to_string()).or_default().push(r);
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.canonical_line());
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        for r in &self.records {
            h.write(r.canonical_line().as_bytes());
            h.write(b"\n");
        }
        h.finish()
    }

    pub fn parse_text(text: &str) -> Result<EventLog, LogParseError> {
        let mut log = EventLog::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let err = |reason: String| LogParseError { line: lineno, reason };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(err(format!("expected 5 tab-separated columns, found {}", cols.len())));
            }
            let seq: u64 = cols[0].parse().map_err(|_| err(format!("bad seq {:?}", cols[0])))?;
            let t: SimTime = cols[1].parse().map_err(|e: crate::time::ParseTimeError| err(e.to_string()))?;
            let kind: EventKind = cols[2].parse().map_err(|e: LogParseError| err(e.reason))?;
            if seq != log.records.len() as u64 + 1 {
                return Err(err(format!("seq {seq} out of order")));
            }
            if log.records.last().is_some_and(|r| r.t > t) {
                return Err(err("timestamp decreases".into()));
            }
            log.records.push(EventRecord {
                seq,
                t,
                kind,
                subject: cols[3].to_string(),
                payload: cols[4].to_string(),
            });
        }
        Ok(log)
    }
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Fnv1a(Self::OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.write(bytes);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn text_roundtrip_and_hash() {
        let mut log = EventLog::new();
        log.push(SimTime::ZERO, EventKind::RequestReceived, "req=1", Fields::new().with("origin", "cli"));
        log.push(SimTime::from_micros(1_500_000), EventKind::CpuReleased, "req=1 inst=1", "cpu=500;node=0");
        let text = log.to_text();
        assert_eq!(text.lines().next().unwrap(), "1\t0.000000\tRequestReceived\treq=1\torigin=cli");
        let back = EventLog::parse_text(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.hash(), log.hash());
        assert_eq!(back.records()[1].field("cpu"), Some("500"));
        assert_eq!(back.records()[1].subject_field("inst"), Some("1"));
    }

    #[test]
    #[should_panic(expected = "backwards")]
    fn rejects_time_travel() {
        let mut log = EventLog::new();
        log.push(SimTime::from_secs(2), EventKind::FaultEvent, "", "");
        log.push(SimTime::from_secs(1), EventKind::FaultEvent, "", "");
    }

    #[test]
    fn tabs_are_scrubbed() {
        let mut log = EventLog::new();
        log.push(SimTime::ZERO, EventKind::FaultEvent, "a\tb", Fields::new().with("x", "1;2\n"));
        let r = &log.records()[0];
        assert_eq!(r.subject, "a_b");
        assert_eq!(r.payload, "x=1_2_");
        assert!(EventLog::parse_text(&log.to_text()).is_ok());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = EventLog::parse_text("1\t0.0\tFaultEvent\t\t\n2\tx\tFaultEvent\t\t\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(EventLog::parse_text("1\t0.0\tNope\t\t\n").is_err());
    }

    #[test]
    fn every_kind_parses_back() {
        for k in EventKind::ALL {
            assert_eq!(k.as_str().parse::<EventKind>().unwrap(), *k);
        }
    }
}
