//! Bus endpoints for APPs: one per running instance, plus the public
//! gateway the SRF registers for each APP.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::compute::{compute_prime_sum, compute_sum, face_recognition, ComputeJob, JobInput, WorkloadError};
use super::video::{serve_video, CatalogEntry, Location, VCACHE};
use super::WorkloadConfig;
use crate::bus::{Bus, Endpoint, Message, Method, Status};
use crate::mano::InstanceId;
use crate::nf::upf::{self, Flow, Route};
use crate::nf::{asf, decode_body, ServiceClass};
use crate::sim::{EventKind, Fields};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeRequest {
    /// Copied into the subject of events the APP records.
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub input: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeResult {
    pub result: Value,
    pub compute_time: SimTime,
    pub transfer_time: SimTime,
    pub cpu_work: f64,
    pub memory_mb: f64,
}

impl InvokeResult {
    pub fn service_time(&self) -> SimTime {
        self.compute_time + self.transfer_time
    }
}

pub fn app_endpoint_name(instance: InstanceId) -> String {
    format!("app-{instance}")
}

pub fn invoke_message(endpoint: &str, req: &InvokeRequest) -> Message {
    Message::request(Method::Post, format!("/nbi/{endpoint}/invoke")).expect("valid endpoint name").with_json(req)
}

fn number(v: u128) -> Value {
    u64::try_from(v).map(Value::from).unwrap_or_else(|_| Value::String(v.to_string()))
}

fn bad_input(service: &str, detail: &str) -> WorkloadError {
    WorkloadError::BadInput { service: service.to_string(), detail: detail.to_string() }
}

/// One running APP instance.
#[derive(Debug, Clone)]
pub struct AppEndpoint {
    pub instance: InstanceId,
    pub service_name: String,
    pub config: WorkloadConfig,
    /// Edge content missed in the cache is stored after the cloud fetch.
    pub cache_on_miss: bool,
}

impl AppEndpoint {
    pub fn new(instance: InstanceId, service_name: &str, config: WorkloadConfig, cache_on_miss: bool) -> Self {
        AppEndpoint { instance, service_name: service_name.to_string(), config, cache_on_miss }
    }

    pub fn invoke(&mut self, req: &InvokeRequest, bus: &mut Bus) -> Result<InvokeResult, Message> {
        let cfg = &self.config;
        let fail = |e: WorkloadError| Message::error(Status::UNPROCESSABLE, e.code(), e);
        match self.service_name.as_str() {
            name @ ("sum" | "prime_sum") => {
                let n = req.input.get("n").and_then(Value::as_u64).ok_or_else(|| fail(bad_input(name, "n must be a non-negative integer")))?;
                let job = ComputeJob::new(name, JobInput::Number { n }, cfg).map_err(fail)?;
                let value = if name == "sum" { compute_sum(n) } else { compute_prime_sum(n) };
                let compute_time = bus.kernel_mut().jitter(job.compute_time(cfg), cfg.jitter);
                Ok(InvokeResult {
                    result: json!({ "value": number(value) }),
                    compute_time,
                    transfer_time: SimTime::ZERO,
                    cpu_work: job.cpu_work,
                    memory_mb: job.memory_footprint_mb,
                })
            }
            name @ "face_recognition" => {
                let image_id = req.input.get("image_id").and_then(Value::as_str).unwrap_or("image").to_string();
                let size_mb = match req.input.get("size_mb") {
                    None => cfg.default_image_mb,
                    Some(v) => v.as_f64().ok_or_else(|| fail(bad_input(name, "size_mb must be a number")))?,
                };
                let job = ComputeJob::new(name, JobInput::Image { image_id, size_mb }, cfg).map_err(fail)?;
                let face = face_recognition(&job, cfg).map_err(fail)?;
                let compute_time = bus.kernel_mut().jitter(face.compute_time, cfg.jitter);
                Ok(InvokeResult {
                    result: json!({ "label": face.label }),
                    compute_time,
                    transfer_time: face.transfer_time,
                    cpu_work: job.cpu_work,
                    memory_mb: job.memory_footprint_mb,
                })
            }
            "video" => self.serve(req, bus),
            other => Err(fail(WorkloadError::UnknownService(other.to_string()))),
        }
    }

    fn serve(&mut self, req: &InvokeRequest, bus: &mut Bus) -> Result<InvokeResult, Message> {
        let fail = |e: WorkloadError| Message::error(Status::UNPROCESSABLE, e.code(), e);
        let video_id = req
            .input
            .get("video_id")
            .and_then(Value::as_str)
            .ok_or_else(|| fail(bad_input("video", "video_id required")))?
            .to_string();
        let flow = Flow { video_id: Some(video_id.clone()), dest: "video".into() };
        let route = upf::client::route(bus, &flow)
            .map_err(|e| Message::error(Status::NOT_FOUND, e.code().unwrap_or("NoRoute"), &e))?;
        let lookup = route.lookup().cloned();
        let size_mb = req
            .input
            .get("size_mb")
            .and_then(Value::as_f64)
            .or_else(|| lookup.as_ref().and_then(|l| l.size_mb))
            .ok_or_else(|| fail(bad_input("video", "size unknown: not in catalog and no size_mb")))?;
        let served_from = match route {
            Route::EdgeHit { .. } => Location::Edge,
            Route::CloudForward { .. } => Location::Cloud,
        };
        let cfg = &self.config;
        let timing = serve_video(size_mb, served_from, &cfg.bandwidths, SimTime::from_secs_f64(cfg.video_compute_s));
        bus.record(
            EventKind::VideoServed,
            req.subject.clone(),
            Fields::new()
                .with("video", &video_id)
                .with("size_mb", size_mb)
                .with("from", served_from.as_str())
                .with("tx", timing.transmission_time)
                .with("compute", timing.compute_time),
        );
        let edge_content = lookup.as_ref().and_then(|l| l.location) == Some(Location::Edge);
        if served_from == Location::Cloud && self.cache_on_miss && edge_content {
            let entry = CatalogEntry { video_id: video_id.clone(), size_mb, location: Location::Edge };
            let m = Message::request(Method::Post, "/sbi/vcache/assets").expect("static path").with_json(&entry);
            // an oversized asset simply stays in the cloud
            let _ = bus.send_request(VCACHE, m);
        }
        Ok(InvokeResult {
            result: json!({ "video_id": video_id, "served_from": served_from.as_str() }),
            compute_time: timing.compute_time,
            transfer_time: timing.transmission_time,
            cpu_work: cfg.video_compute_s * cfg.cpu_rate,
            memory_mb: cfg.small_memory_mb,
        })
    }
}

impl Endpoint for AppEndpoint {
    fn handle(&mut self, req: &Message, bus: &mut Bus) -> Message {
        match (req.method(), req.segments().as_slice()) {
            (Some(Method::Post), [_, "invoke"]) => match decode_body::<InvokeRequest>(req) {
                Ok(inv) => match self.invoke(&inv, bus) {
                    Ok(r) => Message::json_response(Status::OK, &r),
                    Err(resp) => resp,
                },
                Err(resp) => resp,
            },
            _ => Message::error(Status::NOT_FOUND, "NoRoute", req.path().unwrap_or("")),
        }
    }
}

/// Public access point of an APP: asks the ASF for a running instance and
/// forwards the invocation to it.
#[derive(Debug, Clone)]
pub struct AppGateway {
    pub app_id: String,
    pub service_class: ServiceClass,
}

impl AppGateway {
    pub fn new(app_id: &str, service_class: ServiceClass) -> Self {
        AppGateway { app_id: app_id.to_string(), service_class }
    }
}

impl Endpoint for AppGateway {
    fn handle(&mut self, req: &Message, bus: &mut Bus) -> Message {
        match (req.method(), req.segments().as_slice()) {
            (Some(Method::Post), [_, "invoke"]) => {
                let selection = match asf::client::select(bus, self.service_class, &self.app_id) {
                    Ok(s) => s,
                    Err(e) => return Message::error(Status::NOT_FOUND, e.code().unwrap_or("NoActiveApp"), &e),
                };
                let m = match Message::request(Method::Post, format!("/nbi/{}/invoke", selection.endpoint)) {
                    Ok(m) => m.with_body(req.body().to_vec()),
                    Err(e) => return Message::error(Status::INTERNAL, "BadEndpoint", e),
                };
                bus.send_request(&selection.endpoint, m)
                    .unwrap_or_else(|e| Message::error(Status::UNAVAILABLE, "Unreachable", e))
            }
            _ => Message::error(Status::NOT_FOUND, "NoRoute", req.path().unwrap_or("")),
        }
    }
}
