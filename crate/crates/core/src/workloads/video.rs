//! High-throughput services: the edge video cache with popularity counting
//! and the edge/cloud delivery model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bus::{Bus, Endpoint, Message, Method, Status};
use crate::nf::decode_body;
use crate::sim::{EventKind, Fields};
use crate::time::SimTime;

pub const VCACHE: &str = "vcache";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Edge,
    Cloud,
}

impl Location {
    pub fn as_str(self) -> &'static str {
        match self {
            Location::Edge => "edge",
            Location::Cloud => "cloud",
        }
    }
}

/// Entry of a video catalog file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub video_id: String,
    pub size_mb: f64,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAsset {
    pub video_id: String,
    pub size_mb: f64,
    pub popularity_count: u64,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CacheError {
    #[error("asset {video_id:?} of {size_mb} MB exceeds the {capacity_mb} MB cache")]
    AssetTooLarge { video_id: String, size_mb: f64, capacity_mb: f64 },
}

/// Edge cache bounded by storage. Every lookup bumps the asset's popularity;
/// when an insert would overflow, least popular residents go first, lowest id
/// on ties.
#[derive(Debug, Clone, Default, Serialize)]
pub struct VideoCache {
    capacity_mb: f64,
    resident: BTreeMap<String, VideoAsset>,
    popularity: BTreeMap<String, u64>,
}

impl VideoCache {
    pub fn new(capacity_mb: f64) -> Self {
        VideoCache { capacity_mb, resident: BTreeMap::new(), popularity: BTreeMap::new() }
    }

    pub fn capacity_mb(&self) -> f64 {
        self.capacity_mb
    }

    pub fn used_mb(&self) -> f64 {
        self.resident.values().map(|a| a.size_mb).sum()
    }

    pub fn popularity(&self, video_id: &str) -> u64 {
        self.popularity.get(video_id).copied().unwrap_or(0)
    }

    pub fn popularity_bump(&mut self, video_id: &str) -> u64 {
        let count = self.popularity.entry(video_id.to_string()).or_insert(0);
        *count += 1;
        let count = *count;
        if let Some(a) = self.resident.get_mut(video_id) {
            a.popularity_count = count;
        }
        count
    }

    pub fn is_resident(&self, video_id: &str) -> bool {
        self.resident.contains_key(video_id)
    }

    pub fn asset(&self, video_id: &str) -> Option<&VideoAsset> {
        self.resident.get(video_id)
    }

    pub fn assets(&self) -> impl Iterator<Item = &VideoAsset> {
        self.resident.values()
    }

    /// Hit iff the asset is resident at the edge. Counts toward popularity
    /// either way.
    pub fn lookup(&mut self, video_id: &str) -> bool {
        self.popularity_bump(video_id);
        self.resident.get(video_id).is_some_and(|a| a.location == Location::Edge)
    }

    /// Stores an asset at the edge, returning the ids evicted to make room.
    pub fn insert(&mut self, video_id: &str, size_mb: f64) -> Result<Vec<String>, CacheError> {
        if size_mb > self.capacity_mb {
            return Err(CacheError::AssetTooLarge {
                video_id: video_id.to_string(),
                size_mb,
                capacity_mb: self.capacity_mb,
            });
        }
        self.resident.remove(video_id);
        let mut evicted = Vec::new();
        while self.used_mb() + size_mb > self.capacity_mb {
            let victim = self
                .resident
                .values()
                .min_by(|a, b| a.popularity_count.cmp(&b.popularity_count).then_with(|| a.video_id.cmp(&b.video_id)))
                .map(|a| a.video_id.clone())
                .expect("non-empty while over capacity");
            self.resident.remove(&victim);
            evicted.push(victim);
        }
        let asset = VideoAsset {
            video_id: video_id.to_string(),
            size_mb,
            popularity_count: self.popularity(video_id),
            location: Location::Edge,
        };
        self.resident.insert(video_id.to_string(), asset);
        Ok(evicted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bandwidths {
    pub edge_mbps: f64,
    pub cloud_mbps: f64,
    pub cloud_base_latency_s: f64,
}

impl Default for Bandwidths {
    fn default() -> Self {
        Bandwidths { edge_mbps: 800.0, cloud_mbps: 200.0, cloud_base_latency_s: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoTiming {
    pub transmission_time: SimTime,
    pub compute_time: SimTime,
    pub served_from: Location,
}

/// Delivery times for one video. Compute is a fixed processing cost,
/// independent of size.
pub fn serve_video(size_mb: f64, served_from: Location, bw: &Bandwidths, compute: SimTime) -> VideoTiming {
    let megabits = size_mb * 8.0;
    let transmission = match served_from {
        Location::Edge => megabits / bw.edge_mbps,
        Location::Cloud => megabits / bw.cloud_mbps + bw.cloud_base_latency_s,
    };
    VideoTiming { transmission_time: SimTime::from_secs_f64(transmission), compute_time: compute, served_from }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupRequest {
    pub video_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupResult {
    pub hit: bool,
    pub popularity: u64,
    pub size_mb: Option<f64>,
    /// Catalog location; a miss on edge content is worth caching.
    pub location: Option<Location>,
}

/// Bus front of the edge cache and the video catalog.
#[derive(Debug, Clone, Default)]
pub struct VcacheEndpoint {
    pub cache: VideoCache,
    pub catalog: BTreeMap<String, CatalogEntry>,
}

impl VcacheEndpoint {
    /// Edge-located catalog entries are preloaded in catalog order while
    /// they fit.
    pub fn new(capacity_mb: f64, catalog: Vec<CatalogEntry>) -> Self {
        let mut cache = VideoCache::new(capacity_mb);
        for e in catalog.iter().filter(|e| e.location == Location::Edge) {
            if cache.used_mb() + e.size_mb <= capacity_mb {
                cache.insert(&e.video_id, e.size_mb).expect("fits by check");
            }
        }
        VcacheEndpoint { cache, catalog: catalog.into_iter().map(|e| (e.video_id.clone(), e)).collect() }
    }
}

impl Endpoint for VcacheEndpoint {
    fn handle(&mut self, req: &Message, bus: &mut Bus) -> Message {
        match (req.method(), req.segments().as_slice()) {
            (Some(Method::Post), [_, "lookup"]) => match decode_body::<LookupRequest>(req) {
                Ok(l) => {
                    let hit = self.cache.lookup(&l.video_id);
                    let entry = self.catalog.get(&l.video_id);
                    Message::json_response(
                        Status::OK,
                        &LookupResult {
                            hit,
                            popularity: self.cache.popularity(&l.video_id),
                            size_mb: entry.map(|e| e.size_mb),
                            location: entry.map(|e| e.location),
                        },
                    )
                }
                Err(resp) => resp,
            },
            (Some(Method::Post), [_, "assets"]) => match decode_body::<CatalogEntry>(req) {
                Ok(e) => match self.cache.insert(&e.video_id, e.size_mb) {
                    Ok(evicted) => {
                        for v in &evicted {
                            bus.record(EventKind::CacheEvicted, format!("video={v}"), Fields::new().with("for", &e.video_id));
                        }
                        Message::json_response(Status::CREATED, &evicted)
                    }
                    Err(err) => Message::error(Status::UNPROCESSABLE, "AssetTooLarge", err),
                },
                Err(resp) => resp,
            },
            (Some(Method::Get), [_, "assets", id]) => match self.cache.asset(id) {
                Some(a) => Message::json_response(Status::OK, a),
                None => Message::error(Status::NOT_FOUND, "NotCached", *id),
            },
            _ => Message::error(Status::NOT_FOUND, "NoRoute", req.path().unwrap_or("")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_then_lookup_hits() {
        let mut c = VideoCache::new(1000.0);
        c.insert("v1", 100.0).unwrap();
        assert!(c.lookup("v1"));
        assert_eq!(c.popularity("v1"), 1);
    }

    #[test]
    fn miss_still_counts() {
        let mut c = VideoCache::new(1000.0);
        assert!(!c.lookup("v2"));
        assert_eq!(c.popularity("v2"), 1);
    }

    #[test]
    fn too_large() {
        let mut c = VideoCache::new(100.0);
        assert!(matches!(c.insert("big", 101.0), Err(CacheError::AssetTooLarge { .. })));
    }

    #[test]
    fn evicts_least_popular_lowest_id() {
        let mut c = VideoCache::new(300.0);
        for id in ["a", "b", "c"] {
            c.insert(id, 100.0).unwrap();
        }
        c.lookup("a");
        assert_eq!(c.insert("d", 100.0).unwrap(), vec!["b".to_string()]);
        assert!(c.is_resident("a") && c.is_resident("c") && c.is_resident("d"));
    }

    #[test]
    fn delivery_times() {
        let bw = Bandwidths::default();
        let compute = SimTime::from_secs_f64(0.14);
        assert_eq!(serve_video(100.0, Location::Edge, &bw, compute).transmission_time, SimTime::from_secs(1));
        assert_eq!(serve_video(100.0, Location::Cloud, &bw, compute).transmission_time, SimTime::from_secs_f64(4.05));
        let gap = |s| {
            serve_video(s, Location::Cloud, &bw, compute).transmission_time
                - serve_video(s, Location::Edge, &bw, compute).transmission_time
        };
        assert!(gap(100.0) < gap(200.0) && gap(200.0) < gap(400.0));
    }
}
