use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::Serialize;

use super::message::{Message, Status};
use crate::sim::kernel::{Due, Kernel};
use crate::sim::log::{EventKind, EventLog};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BusError {
    #[error("endpoint {0:?} is not registered")]
    UnknownEndpoint(String),
    #[error("endpoint {0:?} is already registered")]
    DuplicateEndpoint(String),
    #[error("endpoint {0:?} is handling a request and cannot be re-entered")]
    EndpointBusy(String),
    #[error("request to {target:?} timed out after {elapsed}s (deadline {deadline}s)")]
    Timeout { target: String, elapsed: SimTime, deadline: SimTime },
    #[error("only requests can be sent")]
    NotARequest,
}

/// A bus participant. Handlers run inside the serialized event loop and may
/// issue nested requests through the `bus` they are given.
pub trait Endpoint: Send + 'static {
    fn handle(&mut self, req: &Message, bus: &mut Bus) -> Message;
}

struct FnEndpoint<F>(F);

impl<F> Endpoint for FnEndpoint<F>
where
    F: FnMut(&Message, &mut Bus) -> Message + Send + 'static,
{
    fn handle(&mut self, req: &Message, bus: &mut Bus) -> Message {
        (self.0)(req, bus)
    }
}

trait AnyEndpoint: Endpoint {
    fn as_any(&self) -> &dyn Any;
    fn as_any_mut(&mut self) -> &mut dyn Any;
}

impl<T: Endpoint> AnyEndpoint for T {
    fn as_any(&self) -> &dyn Any {
        self
    }
    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusConfig {
    /// Charged once for delivery and once for the response.
    pub hop_latency: SimTime,
    /// Maximum virtual time a handler may spend on one request.
    pub deadline: Option<SimTime>,
}

impl Default for BusConfig {
    fn default() -> Self {
        BusConfig { hop_latency: SimTime::ZERO, deadline: Some(SimTime::from_secs(600)) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TracePhase {
    Send,
    Deliver,
    Respond,
    Timeout,
}

/// One entry of the optional bus trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub t: SimTime,
    pub phase: TracePhase,
    pub correlation_id: u64,
    pub target: String,
    pub line: String,
}

/// Unified message fabric for SBI, NBI and EBI traffic. The three interfaces
/// share this transport and differ only in their path namespace.
pub struct Bus {
    endpoints: BTreeMap<String, Option<Box<dyn AnyEndpoint>>>,
    next_correlation: u64,
    in_flight: BTreeSet<u64>,
    config: BusConfig,
    kernel: Kernel,
    trace: Option<Vec<TraceEntry>>,
}

impl Bus {
    pub fn new(seed: u64) -> Self {
        Self::with_config(seed, BusConfig::default())
    }

    pub fn with_config(seed: u64, config: BusConfig) -> Self {
        Bus {
            endpoints: BTreeMap::new(),
            next_correlation: 1,
            in_flight: BTreeSet::new(),
            config,
            kernel: Kernel::new(seed),
            trace: None,
        }
    }

    /// Keep a (send, deliver, respond) trace of every request.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn config(&self) -> BusConfig {
        self.config
    }

    pub fn register_endpoint<E: Endpoint>(&mut self, name: &str, endpoint: E) -> Result<(), BusError> {
        if self.endpoints.contains_key(name) {
            return Err(BusError::DuplicateEndpoint(name.to_string()));
        }
        self.endpoints.insert(name.to_string(), Some(Box::new(endpoint)));
        Ok(())
    }

    pub fn register_fn<F>(&mut self, name: &str, f: F) -> Result<(), BusError>
    where
        F: FnMut(&Message, &mut Bus) -> Message + Send + 'static,
    {
        self.register_endpoint(name, FnEndpoint(f))
    }

    pub fn deregister(&mut self, name: &str) -> Result<(), BusError> {
        match self.endpoints.get(name) {
            None => Err(BusError::UnknownEndpoint(name.to_string())),
            Some(None) => Err(BusError::EndpointBusy(name.to_string())),
            Some(Some(_)) => {
                self.endpoints.remove(name);
                Ok(())
            }
        }
    }

    pub fn is_registered(&self, name: &str) -> bool {
        self.endpoints.contains_key(name)
    }

    pub fn endpoint_names(&self) -> impl Iterator<Item = &str> {
        self.endpoints.keys().map(String::as_str)
    }

    /// Typed access to a registered endpoint's state. `None` if absent, of a
    /// different type, or currently handling a request.
    pub fn endpoint<T: Endpoint>(&self, name: &str) -> Option<&T> {
        self.endpoints.get(name)?.as_ref()?.as_any().downcast_ref()
    }

    pub fn endpoint_mut<T: Endpoint>(&mut self, name: &str) -> Option<&mut T> {
        self.endpoints.get_mut(name)?.as_mut()?.as_any_mut().downcast_mut()
    }

    /// Temporarily removes an endpoint so it can be driven directly with
    /// access to the bus. Nested requests to `name` see `EndpointBusy`.
    pub fn with_endpoint<T: Endpoint, R>(&mut self, name: &str, f: impl FnOnce(&mut T, &mut Bus) -> R) -> Option<R> {
        let slot = self.endpoints.get_mut(name)?;
        let mut boxed = slot.take()?;
        let out = boxed.as_any_mut().downcast_mut::<T>().map(|ep| f(ep, self));
        if let Some(slot) = self.endpoints.get_mut(name) {
            *slot = Some(boxed);
        }
        out
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Delivers a request to `target` and returns its response. The bus
    /// assigns the correlation id; the response always carries the same id.
    pub fn send_request(&mut self, target: &str, mut m: Message) -> Result<Message, BusError> {
        if !m.is_request() {
            return Err(BusError::NotARequest);
        }
        match self.endpoints.get(target) {
            None => return Err(BusError::UnknownEndpoint(target.to_string())),
            Some(None) => return Err(BusError::EndpointBusy(target.to_string())),
            Some(Some(_)) => {}
        }
        let id = self.next_correlation;
        self.next_correlation += 1;
        m.set_correlation_id(id);
        let fresh = self.in_flight.insert(id);
        debug_assert!(fresh, "correlation id reused while in flight");

        self.push_trace(TracePhase::Send, id, target, &m);
        self.kernel.advance(self.config.hop_latency);
        self.push_trace(TracePhase::Deliver, id, target, &m);

        let started = self.kernel.now();
        let mut resp = if is_health_probe(&m, target) {
            Message::json_response(Status::OK, &serde_json::json!({ "status": "up", "endpoint": target }))
        } else {
            let mut handler = self
                .endpoints
                .get_mut(target)
                .and_then(Option::take)
                .expect("endpoint checked above");
            let resp = handler.handle(&m, self);
            if let Some(slot) = self.endpoints.get_mut(target) {
                *slot = Some(handler);
            }
            resp
        };
        let elapsed = self.kernel.now() - started;

        if let Some(deadline) = self.config.deadline {
            if elapsed > deadline {
                self.in_flight.remove(&id);
                self.push_trace(TracePhase::Timeout, id, target, &m);
                return Err(BusError::Timeout { target: target.to_string(), elapsed, deadline });
            }
        }
        if resp.is_request() {
            resp = Message::error(Status::INTERNAL, "BadHandler", "handler returned a request");
        }
        self.kernel.advance(self.config.hop_latency);
        resp.set_correlation_id(id);
        self.push_trace(TracePhase::Respond, id, target, &resp);
        self.in_flight.remove(&id);
        Ok(resp)
    }

    fn push_trace(&mut self, phase: TracePhase, id: u64, target: &str, m: &Message) {
        let now = self.kernel.now();
        if let Some(trace) = self.trace.as_mut() {
            let line = match (m.method(), m.path(), m.status()) {
                (Some(method), Some(path), _) => format!("{method} {path}"),
                (_, _, Some(status)) => status.to_string(),
                _ => String::new(),
            };
            trace.push(TraceEntry { t: now, phase, correlation_id: id, target: target.to_string(), line });
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut Kernel {
        &mut self.kernel
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn advance(&mut self, dt: SimTime) {
        self.kernel.advance(dt);
    }

    pub fn record(&mut self, kind: EventKind, subject: impl Into<String>, payload: impl Into<String>) -> u64 {
        let (subject, payload) = (subject.into(), payload.into());
        ::log::debug!("{} {kind} {subject} {payload}", self.now());
        self.kernel.record(kind, subject, payload)
    }

    pub fn log(&self) -> &EventLog {
        self.kernel.log()
    }

    pub fn schedule(&mut self, at: SimTime, target: impl Into<String>, msg: Message) {
        self.kernel.schedule(at, target, msg);
    }

    /// Pops and delivers the next scheduled request. Returns `None` once the
    /// agenda is empty.
    pub fn step(&mut self) -> Option<(Due, Result<Message, BusError>)> {
        let due = self.kernel.pop_due()?;
        let result = self.send_request(&due.target, due.msg.clone());
        Some((due, result))
    }

    /// Runs the agenda until it drains or the clock would pass `until`.
    pub fn run_until(&mut self, until: Option<SimTime>) -> Vec<(Due, Result<Message, BusError>)> {
        let mut failures = Vec::new();
        while let Some(next) = self.kernel.next_due_time() {
            if until.is_some_and(|u| next > u) {
                break;
            }
            let (due, result) = self.step().expect("agenda non-empty");
            let failed = match &result {
                Ok(resp) => !resp.is_success(),
                Err(_) => true,
            };
            if failed {
                failures.push((due, result));
            }
        }
        failures
    }
}

fn is_health_probe(m: &Message, target: &str) -> bool {
    m.method() == Some(super::Method::Get) && m.segments() == [target, "health"]
}

/// Thread-safe handle. Every call takes the bus lock, so concurrent callers
/// are serialized into one command stream.
#[derive(Clone)]
pub struct BusHandle {
    inner: Arc<Mutex<Bus>>,
}

impl BusHandle {
    pub fn new(bus: Bus) -> Self {
        BusHandle { inner: Arc::new(Mutex::new(bus)) }
    }

    pub fn lock(&self) -> MutexGuard<'_, Bus> {
        self.inner.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn send_request(&self, target: &str, m: Message) -> Result<Message, BusError> {
        self.lock().send_request(target, m)
    }

    pub fn register_fn<F>(&self, name: &str, f: F) -> Result<(), BusError>
    where
        F: FnMut(&Message, &mut Bus) -> Message + Send + 'static,
    {
        self.lock().register_fn(name, f)
    }

    pub fn schedule(&self, at: SimTime, target: &str, m: Message) {
        self.lock().schedule(at, target, m);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::Method;

    fn get(path: &str) -> Message {
        Message::request(Method::Get, path).unwrap()
    }

    fn echo(bus: &mut Bus, name: &str) {
        bus.register_fn(name, |req, _| {
            Message::response(Status::OK).with_body(req.path().unwrap_or("").as_bytes().to_vec())
        })
        .unwrap();
    }

    #[test]
    fn register_then_send() {
        let mut bus = Bus::new(0);
        echo(&mut bus, "udm");
        let resp = bus.send_request("udm", get("/sbi/udm/tables")).unwrap();
        assert_eq!(resp.body(), b"/sbi/udm/tables");
        assert!(resp.correlation_id() > 0);
    }

    #[test]
    fn duplicate_and_unknown() {
        let mut bus = Bus::new(0);
        echo(&mut bus, "udm");
        assert_eq!(
            bus.register_fn("udm", |_, _| Message::response(Status::OK)),
            Err(BusError::DuplicateEndpoint("udm".into()))
        );
        assert_eq!(bus.send_request("ghost", get("/sbi/ghost/x")), Err(BusError::UnknownEndpoint("ghost".into())));
    }

    #[test]
    fn health_convention() {
        let mut bus = Bus::new(0);
        bus.register_fn("udm", |_, _| Message::error(Status::INTERNAL, "Never", "")).unwrap();
        let resp = bus.send_request("udm", get("/sbi/udm/health")).unwrap();
        assert_eq!(resp.status(), Some(Status::OK));
    }

    #[test]
    fn handler_exceeding_deadline_times_out() {
        let cfg = BusConfig { hop_latency: SimTime::ZERO, deadline: Some(SimTime::from_secs(5)) };
        let mut bus = Bus::with_config(0, cfg);
        bus.register_fn("slow", |_, bus| {
            bus.advance(SimTime::from_secs(10));
            Message::response(Status::OK)
        })
        .unwrap();
        let err = bus.send_request("slow", get("/sbi/slow/x")).unwrap_err();
        assert!(matches!(err, BusError::Timeout { .. }));
        assert_eq!(bus.in_flight(), 0);
    }

    #[test]
    fn correlation_ids_match_and_are_unique() {
        let mut bus = Bus::new(0);
        echo(&mut bus, "a");
        bus.register_fn("b", |_, bus| {
            // nested request while the outer one is in flight
            let inner = bus.send_request("a", Message::request(Method::Get, "/sbi/a/x").unwrap()).unwrap();
            Message::response(Status::OK).with_body(inner.correlation_id().to_string())
        })
        .unwrap();
        let outer = bus.send_request("b", get("/sbi/b/y")).unwrap();
        let inner_id: u64 = String::from_utf8(outer.body().to_vec()).unwrap().parse().unwrap();
        assert_ne!(inner_id, outer.correlation_id());
        assert_eq!(bus.in_flight(), 0);
    }

    #[test]
    fn reentrant_call_reports_busy() {
        let mut bus = Bus::new(0);
        bus.register_fn("self", |req, bus| match bus.send_request("self", req.clone()) {
            Err(BusError::EndpointBusy(_)) => Message::response(Status::CONFLICT),
            _ => Message::response(Status::OK),
        })
        .unwrap();
        let resp = bus.send_request("self", get("/sbi/self/x")).unwrap();
        assert_eq!(resp.status(), Some(Status::CONFLICT));
    }

    #[test]
    fn hops_consume_virtual_time() {
        let cfg = BusConfig { hop_latency: SimTime::from_micros(500), deadline: None };
        let mut bus = Bus::with_config(0, cfg);
        echo(&mut bus, "a");
        bus.send_request("a", get("/sbi/a/x")).unwrap();
        assert_eq!(bus.now(), SimTime::from_micros(1000));
    }

    #[test]
    fn responses_cannot_be_sent() {
        let mut bus = Bus::new(0);
        echo(&mut bus, "a");
        assert_eq!(bus.send_request("a", Message::response(Status::OK)), Err(BusError::NotARequest));
    }

    #[test]
    fn trace_is_deterministic() {
        let run = || {
            let mut bus = Bus::new(3);
            bus.enable_trace();
            echo(&mut bus, "a");
            echo(&mut bus, "b");
            for i in 0..5 {
                let target = if i % 2 == 0 { "a" } else { "b" };
                bus.schedule(SimTime::from_secs(5 - i), target, get(&format!("/nbi/{target}/{i}")));
            }
            bus.run_until(None);
            bus.trace().to_vec()
        };
        let first = run();
        assert_eq!(first.len(), 15);
        assert_eq!(first, run());
    }

    #[test]
    fn typed_endpoint_access() {
        struct Counter(u32);
        impl Endpoint for Counter {
            fn handle(&mut self, _: &Message, _: &mut Bus) -> Message {
                self.0 += 1;
                Message::response(Status::OK)
            }
        }
        let mut bus = Bus::new(0);
        bus.register_endpoint("c", Counter(0)).unwrap();
        bus.send_request("c", get("/sbi/c/x")).unwrap();
        assert_eq!(bus.endpoint::<Counter>("c").unwrap().0, 1);
        let seen = bus.with_endpoint::<Counter, _>("c", |c, _| c.0).unwrap();
        assert_eq!(seen, 1);
    }

    #[test]
    fn handle_serializes_threads() {
        let handle = BusHandle::new(Bus::new(0));
        handle.register_fn("a", |_, _| Message::response(Status::OK)).unwrap();
        let threads: Vec<_> = (0..4)
            .map(|_| {
                let h = handle.clone();
                std::thread::spawn(move || {
                    (0..25).map(|_| h.send_request("a", get("/nbi/a/x")).unwrap().correlation_id()).collect::<Vec<_>>()
                })
            })
            .collect();
        let mut ids: Vec<u64> = threads.into_iter().flat_map(|t| t.join().unwrap()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 100);
    }
}
