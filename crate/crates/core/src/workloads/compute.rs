//! Computation-intensive services: sum, prime sum and the face-recognition
//! surrogate.

use serde::{Deserialize, Serialize};

use super::WorkloadConfig;
use crate::sim::log::fnv1a64;
use crate::time::SimTime;

/// 1 + 2 + ... + n.
pub fn compute_sum(n: u64) -> u128 {
    let n = u128::from(n);
    n * (n + 1) / 2
}

/// Sum of all primes not exceeding `n`, by sieve.
pub fn compute_prime_sum(n: u64) -> u128 {
    if n < 2 {
        return 0;
    }
    let n = usize::try_from(n).expect("n fits in memory");
    let mut composite = vec![false; n + 1];
    let mut total = 0u128;
    for i in 2..=n {
        if composite[i] {
            continue;
        }
        total += i as u128;
        let mut j = i.saturating_mul(i);
        while j <= n {
            composite[j] = true;
            j += i;
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JobInput {
    Number { n: u64 },
    Image { image_id: String, size_mb: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeJob {
    pub service_name: String,
    pub input: JobInput,
    /// Abstract work units.
    pub cpu_work: f64,
    pub memory_footprint_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("image blob is empty")]
    EmptyImage,
    #[error("unknown service {0:?}")]
    UnknownService(String),
    #[error("bad input for {service}: {detail}")]
    BadInput { service: String, detail: String },
}

impl WorkloadError {
    pub fn code(&self) -> &'static str {
        match self {
            WorkloadError::EmptyImage => "EmptyImage",
            WorkloadError::UnknownService(_) => "UnknownService",
            WorkloadError::BadInput { .. } => "BadInput",
        }
    }
}

impl ComputeJob {
    /// Job for `service_name` with the configured work and footprint.
    pub fn new(service_name: &str, input: JobInput, cfg: &WorkloadConfig) -> Result<ComputeJob, WorkloadError> {
        let (cpu_work, memory_footprint_mb) = match service_name {
            "sum" => (cfg.sum_work, cfg.small_memory_mb),
            "prime_sum" => (cfg.prime_sum_work, cfg.small_memory_mb),
            "face_recognition" => (cfg.prime_sum_work * cfg.face_work_factor, cfg.face_memory_mb),
            other => return Err(WorkloadError::UnknownService(other.to_string())),
        };
        Ok(ComputeJob { service_name: service_name.to_string(), input, cpu_work, memory_footprint_mb })
    }

    pub fn compute_time(&self, cfg: &WorkloadConfig) -> SimTime {
        SimTime::from_secs_f64(self.cpu_work / cfg.cpu_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceResult {
    pub label: String,
    pub transfer_time: SimTime,
    pub compute_time: SimTime,
}

/// Deterministic stand-in for face recognition: the label is a stable hash
/// bucket of the blob id, transfer is the upload over the access link.
pub fn face_recognition(job: &ComputeJob, cfg: &WorkloadConfig) -> Result<FaceResult, WorkloadError> {
    let JobInput::Image { image_id, size_mb } = &job.input else {
        return Err(WorkloadError::BadInput { service: job.service_name.clone(), detail: "expected an image".into() });
    };
    if size_mb.is_nan() || *size_mb <= 0.0 {
        return Err(WorkloadError::EmptyImage);
    }
    let bucket = fnv1a64(image_id.as_bytes()) % cfg.face_labels.max(1);
    Ok(FaceResult {
        label: format!("person-{bucket:02}"),
        transfer_time: SimTime::from_secs_f64(size_mb * 8.0 / cfg.uplink_mbps),
        compute_time: job.compute_time(cfg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(compute_sum(100), 5050);
        assert_eq!(compute_sum(0), 0);
        assert_eq!(compute_sum(1), 1);
        assert_eq!(compute_prime_sum(10), 17);
        assert_eq!(compute_prime_sum(2), 2);
        assert_eq!(compute_prime_sum(1), 0);
        assert_eq!(compute_prime_sum(0), 0);
    }

    #[test]
    fn face_defaults() {
        let cfg = WorkloadConfig::default();
        let prime = ComputeJob::new("prime_sum", JobInput::Number { n: 10 }, &cfg).unwrap();
        let input = JobInput::Image { image_id: "img-1".into(), size_mb: 2.0 };
        let face = ComputeJob::new("face_recognition", input, &cfg).unwrap();
        assert_eq!(face.cpu_work / prime.cpu_work, 4.0);
        assert_eq!(face.memory_footprint_mb, 83.9);
        let r = face_recognition(&face, &cfg).unwrap();
        assert_eq!(r, face_recognition(&face, &cfg).unwrap());
        assert_eq!(r.transfer_time, SimTime::from_secs_f64(0.8));
    }

    #[test]
    fn empty_image() {
        let cfg = WorkloadConfig::default();
        let job = ComputeJob::new("face_recognition", JobInput::Image { image_id: "x".into(), size_mb: 0.0 }, &cfg)
            .unwrap();
        assert_eq!(face_recognition(&job, &cfg), Err(WorkloadError::EmptyImage));
    }
}
