//! The two application classes: computation-intensive services with
//! charging, and high-throughput video delivery with an edge cache.

pub mod app;
pub mod charging;
pub mod compute;
pub mod video;

use serde::{Deserialize, Serialize};

pub use charging::{charge, ChargingRecord, InstanceNotCompleted, Rates, Usage};
pub use compute::{compute_prime_sum, compute_sum, face_recognition, ComputeJob, FaceResult, JobInput, WorkloadError};
pub use video::{serve_video, Bandwidths, CatalogEntry, Location, VideoAsset, VideoCache, VideoTiming};

/// Cost and footprint defaults. Times are virtual seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Work units processed per second.
    pub cpu_rate: f64,
    pub sum_work: f64,
    pub prime_sum_work: f64,
    /// Face-recognition work as a multiple of the prime-sum work.
    pub face_work_factor: f64,
    pub small_memory_mb: f64,
    pub face_memory_mb: f64,
    pub face_labels: u64,
    pub uplink_mbps: f64,
    pub default_image_mb: f64,
    /// Relative spread applied to compute times.
    pub jitter: f64,
    pub video_compute_s: f64,
    pub bandwidths: Bandwidths,
    pub cache_storage_mb: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            cpu_rate: 1.0,
            sum_work: 0.2,
            prime_sum_work: 0.5,
            face_work_factor: 4.0,
            small_memory_mb: 20.0,
            face_memory_mb: 83.9,
            face_labels: 16,
            uplink_mbps: 20.0,
            default_image_mb: 2.0,
            jitter: 0.1,
            video_compute_s: 0.14,
            bandwidths: Bandwidths::default(),
            cache_storage_mb: 10_000.0,
        }
    }
}
