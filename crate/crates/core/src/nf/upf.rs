//! User-plane forwarding: serve from the edge cache or forward to the
//! cloud server over the edge-switch-cloud path.

use serde::{Deserialize, Serialize};

use super::{call_json, decode_body, NfError, UPF};
use crate::bus::{Bus, Endpoint, Message, Method, Status};
use crate::workloads::video::{LookupRequest, LookupResult, VCACHE};

pub const CLOUD_PATH: [&str; 3] = ["edge", "switch", "cloud"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    /// `video` for cacheable content, `cloud` for cloud-only traffic.
    pub dest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "route", rename_all = "snake_case")]
pub enum Route {
    EdgeHit { lookup: LookupResult },
    CloudForward { path: Vec<String>, lookup: Option<LookupResult> },
}

impl Route {
    pub fn lookup(&self) -> Option<&LookupResult> {
        match self {
            Route::EdgeHit { lookup } => Some(lookup),
            Route::CloudForward { lookup, .. } => lookup.as_ref(),
        }
    }
}

fn cloud_forward(lookup: Option<LookupResult>) -> Route {
    Route::CloudForward { path: CLOUD_PATH.iter().map(|s| s.to_string()).collect(), lookup }
}

#[derive(Debug, Default)]
pub struct Upf;

impl Upf {
    fn route(&mut self, flow: &Flow, bus: &mut Bus) -> Message {
        match (flow.dest.as_str(), &flow.video_id) {
            ("video", Some(video_id)) => {
                let m = Message::request(Method::Post, "/sbi/vcache/lookup")
                    .expect("static path")
                    .with_json(&LookupRequest { video_id: video_id.clone() });
                match call_json::<LookupResult>(bus, VCACHE, m) {
                    Ok(lookup) if lookup.hit => Message::json_response(Status::OK, &Route::EdgeHit { lookup }),
                    Ok(lookup) => Message::json_response(Status::OK, &cloud_forward(Some(lookup))),
                    Err(e) => Message::error(Status::UNAVAILABLE, "CacheUnavailable", e),
                }
            }
            ("cloud", _) => Message::json_response(Status::OK, &cloud_forward(None)),
            (dest, _) => Message::error(Status::NOT_FOUND, "NoRoute", format!("no route for destination {dest:?}")),
        }
    }
}

impl Endpoint for Upf {
    fn handle(&mut self, req: &Message, bus: &mut Bus) -> Message {
        match (req.method(), req.segments().as_slice()) {
            (Some(Method::Post), [_, "route"]) => match decode_body::<Flow>(req) {
                Ok(flow) => self.route(&flow, bus),
                Err(resp) => resp,
            },
            _ => Message::error(Status::NOT_FOUND, "NoRoute", req.path().unwrap_or("")),
        }
    }
}

pub mod client {
    use super::*;

    pub fn route(bus: &mut Bus, flow: &Flow) -> Result<Route, NfError> {
        let m = Message::request(Method::Post, "/sbi/upf/route")?.with_json(flow);
        call_json(bus, UPF, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::video::{CatalogEntry, Location, VcacheEndpoint};

    fn setup() -> Bus {
        let mut bus = Bus::new(0);
        let catalog = vec![
            CatalogEntry { video_id: "near".into(), size_mb: 100.0, location: Location::Edge },
            CatalogEntry { video_id: "far".into(), size_mb: 100.0, location: Location::Cloud },
        ];
        bus.register_endpoint(VCACHE, VcacheEndpoint::new(1000.0, catalog)).unwrap();
        bus.register_endpoint(UPF, Upf).unwrap();
        bus
    }

    fn flow(id: &str, dest: &str) -> Flow {
        Flow { video_id: Some(id.into()), dest: dest.into() }
    }

    #[test]
    fn cached_video_is_edge_hit() {
        let mut bus = setup();
        assert!(matches!(client::route(&mut bus, &flow("near", "video")).unwrap(), Route::EdgeHit { .. }));
    }

    #[test]
    fn absent_video_goes_to_cloud() {
        let mut bus = setup();
        match client::route(&mut bus, &flow("far", "video")).unwrap() {
            Route::CloudForward { path, .. } => assert_eq!(path, CLOUD_PATH),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_destination() {
        let mut bus = setup();
        assert_eq!(client::route(&mut bus, &flow("x", "mars")).unwrap_err().code(), Some("NoRoute"));
    }
}
