//! NF repository: image storage only. General NFs resolve from local
//! storage; dedicated NFs and APPs come from the remote repository and pay a
//! fetch delay the first time this edge pulls them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{call, call_json, decode_body, DescriptorError, NfDescriptor, NfError, StorageClass, NRF};
use crate::bus::{Bus, Endpoint, Message, Method, Status};
use crate::sim::{EventKind, Fields};
use crate::time::SimTime;

pub const DEFAULT_FETCH_DELAY: SimTime = SimTime::from_secs(50);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NrfError {
    #[error("image for {0:?} not found")]
    ImageNotFound(String),
    #[error(transparent)]
    InvalidDescriptor(#[from] DescriptorError),
}

impl NrfError {
    fn to_message(&self) -> Message {
        match self {
            NrfError::ImageNotFound(_) => Message::error(Status::NOT_FOUND, "ImageNotFound", self),
            NrfError::InvalidDescriptor(_) => Message::error(Status::UNPROCESSABLE, "InvalidDescriptor", self),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub image_ref: String,
    pub source: StorageClass,
}

#[derive(Debug, Clone)]
pub struct Nrf {
    images: BTreeMap<String, NfDescriptor>,
    pulled: BTreeSet<String>,
    fetch_delay: SimTime,
}

impl Default for Nrf {
    fn default() -> Self {
        Nrf::new(DEFAULT_FETCH_DELAY)
    }
}

impl Nrf {
    pub fn new(fetch_delay: SimTime) -> Self {
        Nrf { images: BTreeMap::new(), pulled: BTreeSet::new(), fetch_delay }
    }

    pub fn store_image(&mut self, d: NfDescriptor) -> Result<(), NrfError> {
        d.validate()?;
        self.images.insert(d.nf_id.clone(), d);
        Ok(())
    }

    pub fn descriptor(&self, nf_id: &str) -> Option<&NfDescriptor> {
        self.images.get(nf_id)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &NfDescriptor> {
        self.images.values()
    }

    pub fn is_pulled(&self, nf_id: &str) -> bool {
        self.pulled.contains(nf_id)
    }

    /// Marks every remote image as already present on this edge.
    pub fn prefetch_all(&mut self) {
        let remote: Vec<String> = self
            .images
            .values()
            .filter(|d| d.storage_class == StorageClass::Remote)
            .map(|d| d.nf_id.clone())
            .collect();
        self.pulled.extend(remote);
    }

    /// Looks up an image. A remote image not yet on this edge is fetched:
    /// one `RemoteImageFetch` event, then the fetch delay on the clock.
    pub fn resolve(&mut self, nf_id: &str, bus: &mut Bus, context: &str) -> Result<Resolution, NrfError> {
        let d = self.images.get(nf_id).ok_or_else(|| NrfError::ImageNotFound(nf_id.to_string()))?;
        let resolution = Resolution { image_ref: d.image_ref.clone(), source: d.storage_class };
        if d.storage_class == StorageClass::Remote && !self.pulled.contains(nf_id) {
            bus.record(
                EventKind::RemoteImageFetch,
                subject(context, nf_id),
                Fields::new().with("image", &d.image_ref).with("delay", self.fetch_delay),
            );
            bus.advance(self.fetch_delay);
            self.pulled.insert(nf_id.to_string());
        }
        Ok(resolution)
    }
}

fn subject(context: &str, nf_id: &str) -> String {
    if context.is_empty() {
        format!("nf={nf_id}")
    } else {
        format!("{context} nf={nf_id}")
    }
}

impl Endpoint for Nrf {
    fn handle(&mut self, req: &Message, bus: &mut Bus) -> Message {
        let segs = req.segments();
        match (req.method(), segs.as_slice()) {
            (Some(Method::Get), [_, "images", id]) => {
                let context = req.header("x-trace-subject").unwrap_or("").to_string();
                match self.resolve(id, bus, &context) {
                    Ok(r) => Message::json_response(Status::OK, &r),
                    Err(e) => e.to_message(),
                }
            }
            (Some(Method::Post), [_, "images", id]) => match decode_body::<NfDescriptor>(req) {
                Ok(d) if d.nf_id != *id => Message::error(Status::UNPROCESSABLE, "IdMismatch", format!("{} vs {id}", d.nf_id)),
                Ok(d) => match self.store_image(d) {
                    Ok(()) => Message::response(Status::CREATED),
                    Err(e) => e.to_message(),
                },
                Err(resp) => resp,
            },
            _ => Message::error(Status::NOT_FOUND, "NoRoute", req.path().unwrap_or("")),
        }
    }
}

pub mod client {
    use super::*;

    /// `context` is copied into the subject of any fetch event (e.g. `req=3 inst=2`).
    pub fn resolve(bus: &mut Bus, nf_id: &str, context: &str) -> Result<Resolution, NfError> {
        let mut m = Message::request(Method::Get, format!("/sbi/nrf/images/{nf_id}"))?;
        if !context.is_empty() {
            m = m.with_header("x-trace-subject", context)?;
        }
        call_json(bus, NRF, m)
    }

    pub fn store(bus: &mut Bus, d: &NfDescriptor) -> Result<(), NfError> {
        let m = Message::request(Method::Post, format!("/sbi/nrf/images/{}", d.nf_id))?.with_json(d);
        call(bus, NRF, m).map(|_| ())
    }
}
