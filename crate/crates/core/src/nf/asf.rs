//! Application selection: locates a running APP instance for a service.

use serde::{Deserialize, Serialize};

use super::udm::{self, ACTIVE_APPS};
use super::{call_json, decode_body, NfError, ServiceClass, ASF};
use crate::bus::{Bus, Endpoint, Message, Method, Status};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectRequest {
    pub service_class: ServiceClass,
    pub service_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub endpoint: String,
    pub instance_id: u64,
}

#[derive(Debug, Default)]
pub struct Asf;

impl Asf {
    /// Running instances are read from the UDM active-apps table; the lowest
    /// instance id wins.
    pub fn select(&mut self, req: &SelectRequest, bus: &mut Bus) -> Result<Option<Selection>, NfError> {
        let dump = udm::client::scan(bus, ACTIVE_APPS)?;
        Ok(dump
            .rows
            .iter()
            .filter(|r| r.len() == 4 && r[1] == req.service_class.as_str() && r[2] == req.service_name)
            .filter_map(|r| Some(Selection { instance_id: r[0].parse().ok()?, endpoint: r[3].clone() }))
            .min_by_key(|s| s.instance_id))
    }
}

impl Endpoint for Asf {
    fn handle(&mut self, req: &Message, bus: &mut Bus) -> Message {
        match (req.method(), req.segments().as_slice()) {
            (Some(Method::Post), [_, "select"]) => match decode_body::<SelectRequest>(req) {
                Ok(sel) => match self.select(&sel, bus) {
                    Ok(Some(s)) => Message::json_response(Status::OK, &s),
                    Ok(None) => Message::error(
                        Status::NOT_FOUND,
                        "NoActiveApp",
                        format!("no running {} instance of {}", sel.service_class, sel.service_name),
                    ),
                    Err(e) => Message::error(Status::UNAVAILABLE, "UdmUnavailable", e),
                },
                Err(resp) => resp,
            },
            _ => Message::error(Status::NOT_FOUND, "NoRoute", req.path().unwrap_or("")),
        }
    }
}

pub mod client {
    use super::*;

    pub fn select(bus: &mut Bus, service_class: ServiceClass, service_name: &str) -> Result<Selection, NfError> {
        let body = SelectRequest { service_class, service_name: service_name.to_string() };
        let m = Message::request(Method::Post, "/sbi/asf/select")?.with_json(&body);
        call_json(bus, ASF, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nf::udm::Udm;
    use crate::nf::UDM;

    fn setup(active: &[u64]) -> Bus {
        let mut bus = Bus::new(0);
        let mut store = Udm::new();
        for id in active {
            let row = vec![id.to_string(), "intensive_computation".into(), "prime_sum".into(), format!("app-{id}")];
            store.insert(ACTIVE_APPS, row).unwrap();
        }
        bus.register_endpoint(UDM, store).unwrap();
        bus.register_endpoint(ASF, Asf).unwrap();
        bus
    }

    #[test]
    fn single_instance() {
        let mut bus = setup(&[3]);
        let s = client::select(&mut bus, ServiceClass::IntensiveComputation, "prime_sum").unwrap();
        assert_eq!(s.endpoint, "app-3");
    }

    #[test]
    fn none_active() {
        let mut bus = setup(&[]);
        let err = client::select(&mut bus, ServiceClass::IntensiveComputation, "prime_sum").unwrap_err();
        assert_eq!(err.code(), Some("NoActiveApp"));
    }

    #[test]
    fn lowest_id_wins() {
        let mut bus = setup(&[7, 4]);
        let s = client::select(&mut bus, ServiceClass::IntensiveComputation, "prime_sum").unwrap();
        assert_eq!(s.instance_id, 4);
    }
}
