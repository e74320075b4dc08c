//! Service registry for new APPs: record in UDM, store the image in NRF,
//! then expose an access endpoint on the bus.

use serde::{Deserialize, Serialize};

use super::udm::{self, APP_REGISTRY};
use super::{call_json, decode_body, nrf, NfDescriptor, NfError, NfKind, ServiceClass, SRF};
use crate::bus::{Bus, Endpoint, Message, Method, Status};
use crate::sim::{EventKind, Fields};
use crate::time::SimTime;
use crate::workloads::app::AppGateway;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterApp {
    pub descriptor: NfDescriptor,
    pub service_class: ServiceClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub app_id: String,
    pub udm_table: String,
    pub image_location: String,
    pub access_endpoint: String,
    pub registered_at: SimTime,
}

#[derive(Debug, Default)]
pub struct Srf;

impl Srf {
    /// Registering an APP twice updates its UDM row in place and keeps the
    /// original image location and endpoint.
    pub fn register(&mut self, reg: &RegisterApp, bus: &mut Bus) -> Result<RegistrationRecord, Message> {
        let d = &reg.descriptor;
        if d.nf_kind != NfKind::App {
            return Err(Message::error(Status::UNPROCESSABLE, "NotAnApp", format!("{} is a {} descriptor", d.nf_id, d.nf_kind)));
        }
        if let Err(e) = d.validate() {
            return Err(Message::error(Status::UNPROCESSABLE, "InvalidDescriptor", e));
        }
        let subject = format!("app={}", d.nf_id);
        let reject = |e: NfError| {
            let code = e.code().unwrap_or("Unavailable").to_string();
            Message::error(Status::UNPROCESSABLE, &code, e)
        };

        let existing = udm::client::query(bus, APP_REGISTRY, &d.nf_id).map_err(reject)?;
        let image_location = existing.as_ref().and_then(|r| r.get(1).cloned()).unwrap_or_else(|| d.image_ref.clone());
        let registered_at = bus.now();
        let row = vec![d.nf_id.clone(), image_location.clone(), d.nf_id.clone(), registered_at.to_string()];
        if existing.is_some() {
            udm::client::update(bus, APP_REGISTRY, &d.nf_id, &row).map_err(reject)?;
        } else {
            udm::client::insert(bus, APP_REGISTRY, &row).map_err(reject)?;
        }
        bus.record(
            EventKind::AppRegistryWritten,
            subject.clone(),
            Fields::new().with("table", APP_REGISTRY).with("update", existing.is_some()),
        );

        let mut stored = d.clone();
        stored.image_ref = image_location.clone();
        nrf::client::store(bus, &stored).map_err(reject)?;
        bus.record(EventKind::ImageStored, subject.clone(), Fields::new().with("image", &image_location));

        let fresh = !bus.is_registered(&d.nf_id);
        if fresh {
            let gateway = AppGateway::new(&d.nf_id, reg.service_class);
            if let Err(e) = bus.register_endpoint(&d.nf_id, gateway) {
                return Err(Message::error(Status::CONFLICT, "EndpointConflict", e));
            }
        }
        bus.record(EventKind::EndpointRegistered, subject, Fields::new().with("endpoint", &d.nf_id).with("new", fresh));

        Ok(RegistrationRecord {
            app_id: d.nf_id.clone(),
            udm_table: APP_REGISTRY.to_string(),
            image_location,
            access_endpoint: d.nf_id.clone(),
            registered_at,
        })
    }
}

impl Endpoint for Srf {
    fn handle(&mut self, req: &Message, bus: &mut Bus) -> Message {
        match (req.method(), req.segments().as_slice()) {
            (Some(Method::Post), [_, "apps"]) => match decode_body::<RegisterApp>(req) {
                Ok(reg) => match self.register(&reg, bus) {
                    Ok(rec) => Message::json_response(Status::CREATED, &rec),
                    Err(resp) => resp,
                },
                Err(resp) => resp,
            },
            _ => Message::error(Status::NOT_FOUND, "NoRoute", req.path().unwrap_or("")),
        }
    }
}

pub mod client {
    use super::*;

    pub fn register(bus: &mut Bus, descriptor: &NfDescriptor, service_class: ServiceClass) -> Result<RegistrationRecord, NfError> {
        let body = RegisterApp { descriptor: descriptor.clone(), service_class };
        let m = Message::request(Method::Post, "/sbi/srf/apps")?.with_json(&body);
        call_json(bus, SRF, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nf::nrf::Nrf;
    use crate::nf::udm::Udm;
    use crate::nf::{StorageClass, NRF, UDM};

    fn setup() -> Bus {
        let mut bus = Bus::new(0);
        bus.register_endpoint(UDM, Udm::new()).unwrap();
        bus.register_endpoint(NRF, Nrf::default()).unwrap();
        bus.register_endpoint(SRF, Srf).unwrap();
        bus
    }

    #[test]
    fn registration_order_and_effects() {
        let mut bus = setup();
        let d = NfDescriptor::new("prime_sum", NfKind::App);
        let rec = client::register(&mut bus, &d, ServiceClass::IntensiveComputation).unwrap();
        assert_eq!(rec.access_endpoint, "prime_sum");
        assert!(bus.is_registered("prime_sum"));
        let r = nrf::client::resolve(&mut bus, "prime_sum", "").unwrap();
        assert_eq!(r.source, StorageClass::Remote);
        assert_eq!(r.image_ref, rec.image_location);
        let kinds: Vec<EventKind> = bus.log().iter().map(|e| e.kind).take(3).collect();
        assert_eq!(kinds, vec![EventKind::AppRegistryWritten, EventKind::ImageStored, EventKind::EndpointRegistered]);
    }

    #[test]
    fn duplicate_updates_in_place() {
        let mut bus = setup();
        let d = NfDescriptor::new("prime_sum", NfKind::App);
        let first = client::register(&mut bus, &d, ServiceClass::IntensiveComputation).unwrap();
        let mut d2 = d.clone();
        d2.image_ref = "repo.remote/prime_sum:2".into();
        let second = client::register(&mut bus, &d2, ServiceClass::IntensiveComputation).unwrap();
        assert_eq!(first.image_location, second.image_location);
        assert_eq!(bus.endpoint_names().filter(|n| *n == "prime_sum").count(), 1);
        let dump = udm::client::scan(&mut bus, APP_REGISTRY).unwrap();
        assert_eq!(dump.rows.len(), 1);
    }

    #[test]
    fn non_app_rejected() {
        let mut bus = setup();
        let d = NfDescriptor::new("udm2", NfKind::Udm);
        let err = client::register(&mut bus, &d, ServiceClass::IntensiveComputation).unwrap_err();
        assert_eq!(err.code(), Some("NotAnApp"));
    }
}
