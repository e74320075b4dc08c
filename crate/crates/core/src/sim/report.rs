//! Metrics rebuilt from the event log alone, and their CSV export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::log::{EventKind, EventLog, EventRecord};
use crate::time::SimTime;

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstantiationSample {
    pub request_id: u64,
    pub instance_id: u64,
    pub service_class: String,
    pub service_name: String,
    pub mode: String,
    pub received_at: SimTime,
    pub active_at: SimTime,
    pub duration: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComputeSample {
    pub instance_id: u64,
    pub service_name: String,
    pub compute_time: SimTime,
    pub transfer_time: SimTime,
    pub completed_at: SimTime,
}

/// Resources in use on one node right after an event changed them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsageSample {
    pub t: SimTime,
    pub node: u32,
    pub cpu: u64,
    pub memory_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoSample {
    pub video_id: String,
    pub size_mb: f64,
    pub served_from: String,
    pub transmission_time: SimTime,
    pub compute_time: SimTime,
}

/// Mean times per video size. A side never observed for a size is empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoSizeRow {
    pub size_mb: f64,
    pub edge_tx: Option<f64>,
    pub cloud_tx: Option<f64>,
    pub edge_compute: Option<f64>,
    pub cloud_compute: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub group: String,
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub instantiation: Vec<InstantiationSample>,
    pub compute: Vec<ComputeSample>,
    pub usage: Vec<UsageSample>,
    pub video: Vec<VideoSample>,
    pub video_by_size: Vec<VideoSizeRow>,
    pub histogram: Vec<HistogramBin>,
    pub completed: usize,
    pub failed: usize,
    pub rejected: usize,
    pub log_hash: String,
}

fn u64_subject(e: &EventRecord, key: &str) -> Option<u64> {
    e.subject_parse(key)
}

fn time_field(e: &EventRecord, key: &str) -> SimTime {
    e.field_parse(key).unwrap_or(SimTime::ZERO)
}

impl MetricsReport {
    pub fn from_log(log: &EventLog) -> MetricsReport {
        let mut received: BTreeMap<u64, SimTime> = BTreeMap::new();
        let mut selected: BTreeMap<u64, (u64, String, String, String)> = BTreeMap::new();
        let mut instantiation = Vec::new();
        let mut compute = Vec::new();
        let mut video = Vec::new();
        let (mut completed, mut failed, mut rejected) = (0, 0, 0);

        for e in log.iter() {
            match e.kind {
                EventKind::RequestReceived => {
                    if let Some(r) = u64_subject(e, "req") {
                        received.entry(r).or_insert(e.t);
                    }
                }
                EventKind::TemplateSelected => {
                    if let Some(i) = u64_subject(e, "inst") {
                        let req = u64_subject(e, "req").unwrap_or(0);
                        let field = |k| e.field(k).unwrap_or("").to_string();
                        selected.insert(i, (req, field("class"), field("service"), field("mode")));
                    }
                }
                EventKind::InstanceActive => {
                    let Some(i) = u64_subject(e, "inst") else { continue };
                    let Some((req, class, service, mode)) = selected.get(&i).cloned() else { continue };
                    let received_at = received.get(&req).copied().unwrap_or(e.t);
                    instantiation.push(InstantiationSample {
                        request_id: req,
                        instance_id: i,
                        service_class: class,
                        service_name: service,
                        mode,
                        received_at,
                        active_at: e.t,
                        duration: e.t.saturating_sub(received_at),
                    });
                }
                EventKind::ServiceCompleted => {
                    completed += 1;
                    compute.push(ComputeSample {
                        instance_id: u64_subject(e, "inst").unwrap_or(0),
                        service_name: e.field("service").unwrap_or("").to_string(),
                        compute_time: time_field(e, "compute"),
                        transfer_time: time_field(e, "transfer"),
                        completed_at: e.t,
                    });
                }
                EventKind::VideoServed => video.push(VideoSample {
                    video_id: e.field("video").unwrap_or("").to_string(),
                    size_mb: e.field_parse("size_mb").unwrap_or(0.0),
                    served_from: e.field("from").unwrap_or("").to_string(),
                    transmission_time: time_field(e, "tx"),
                    compute_time: time_field(e, "compute"),
                }),
                EventKind::InstanceFailed => failed += 1,
                EventKind::RequestRejected => rejected += 1,
                _ => {}
            }
        }

        let histogram = histogram(&instantiation);
        let video_by_size = video_by_size(&video);
        MetricsReport {
            instantiation,
            compute,
            usage: sample_usage(log, None, None),
            video,
            video_by_size,
            histogram,
            completed,
            failed,
            rejected,
            log_hash: format!("{:016x}", log.hash()),
        }
    }

    pub fn durations(&self, class: &str, mode: &str) -> Vec<f64> {
        self.instantiation
            .iter()
            .filter(|s| s.service_class == class && s.mode == mode)
            .map(|s| s.duration.as_secs_f64())
            .collect()
    }

    pub fn compute_times(&self, service: &str) -> Vec<f64> {
        self.compute.iter().filter(|c| c.service_name == service).map(|c| c.compute_time.as_secs_f64()).collect()
    }
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Step function of CPU and memory in use, per node, rebuilt from grant and
/// release events. `node` and `window` narrow the output; the state before
/// the window still counts.
pub fn sample_usage(log: &EventLog, node: Option<u32>, window: Option<(SimTime, SimTime)>) -> Vec<UsageSample> {
    let mut in_use: BTreeMap<u32, (i64, i64)> = BTreeMap::new();
    let mut out = Vec::new();
    for e in log.iter() {
        let sign = match e.kind {
            EventKind::ResourceGranted => 1,
            EventKind::CpuReleased | EventKind::MemoryReleased => -1,
            _ => continue,
        };
        let Some(n) = e.subject_parse::<u32>("node") else { continue };
        let cpu: i64 = e.field_parse("cpu").unwrap_or(0);
        let mem: i64 = e.field_parse("memory_kb").unwrap_or(0);
        let entry = in_use.entry(n).or_default();
        entry.0 += sign * cpu;
        entry.1 += sign * mem;
        let keep = node.is_none_or(|x| x == n) && window.is_none_or(|(a, b)| e.t >= a && e.t <= b);
        if keep {
            out.push(UsageSample {
                t: e.t,
                node: n,
                cpu: entry.0.max(0) as u64,
                memory_mb: entry.1.max(0) as f64 / 1000.0,
            });
        }
    }
    out
}

fn video_by_size(samples: &[VideoSample]) -> Vec<VideoSizeRow> {
    #[derive(Default)]
    struct Acc {
        edge: (f64, f64, u32),
        cloud: (f64, f64, u32),
    }
    let mut by_size: BTreeMap<u64, (f64, Acc)> = BTreeMap::new();
    for s in samples {
        let (_, acc) = by_size.entry(s.size_mb.to_bits()).or_insert((s.size_mb, Acc::default()));
        let side = if s.served_from == "edge" { &mut acc.edge } else { &mut acc.cloud };
        side.0 += s.transmission_time.as_secs_f64();
        side.1 += s.compute_time.as_secs_f64();
        side.2 += 1;
    }
    let avg = |sum: f64, n: u32| (n > 0).then(|| sum / f64::from(n));
    let mut rows: Vec<VideoSizeRow> = by_size
        .into_values()
        .map(|(size_mb, a)| VideoSizeRow {
            size_mb,
            edge_tx: avg(a.edge.0, a.edge.2),
            cloud_tx: avg(a.cloud.0, a.cloud.2),
            edge_compute: avg(a.edge.1, a.edge.2),
            cloud_compute: avg(a.cloud.1, a.cloud.2),
        })
        .collect();
    rows.sort_by(|a, b| a.size_mb.total_cmp(&b.size_mb));
    rows
}

/// Duration histogram per `class/mode` group, on bins shared by all groups.
fn histogram(samples: &[InstantiationSample]) -> Vec<HistogramBin> {
    if samples.is_empty() {
        return Vec::new();
    }
    let secs: Vec<f64> = samples.iter().map(|s| s.duration.as_secs_f64()).collect();
    let lo = secs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = secs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / HISTOGRAM_BINS as f64 } else { 1.0 };
    let mut groups: BTreeMap<String, [u64; HISTOGRAM_BINS]> = BTreeMap::new();
    for (s, x) in samples.iter().zip(&secs) {
        let bin = (((x - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
        groups.entry(format!("{}/{}", s.service_class, s.mode)).or_insert([0; HISTOGRAM_BINS])[bin] += 1;
    }
    groups
        .into_iter()
        .flat_map(|(group, counts)| {
            counts.into_iter().enumerate().map(move |(i, count)| HistogramBin {
                group: group.clone(),
                lower: lo + width * i as f64,
                upper: lo + width * (i + 1) as f64,
                count,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    /// Per-sample tables.
    Csv,
    /// Binned instantiation durations.
    HistogramCsv,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "histogram-csv" => Ok(ExportFormat::HistogramCsv),
            other => Err(format!("unknown format {other:?} (csv, histogram-csv)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn write_csv<T: Serialize>(path: PathBuf, header: &[&str], rows: &[T]) -> Result<PathBuf, ExportError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&path)
        .map_err(|source| ExportError::Csv { path: path.clone(), source })?;
    let wrap = |source| ExportError::Csv { path: path.clone(), source };
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.serialize(r).map_err(wrap)?;
    }
    w.flush().map_err(|source| ExportError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Writes the report's CSV files into `dir` and returns their paths. Output
/// is a pure function of the report.
pub fn export_report(report: &MetricsReport, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>, ExportError> {
    std::fs::create_dir_all(dir).map_err(|source| ExportError::Io { path: dir.to_path_buf(), source })?;
    match format {
        ExportFormat::HistogramCsv => {
            Ok(vec![write_csv(dir.join("histogram.csv"), &["group", "lower", "upper", "count"], &report.histogram)?])
        }
        ExportFormat::Csv => {
            let inst: Vec<_> = report
                .instantiation
                .iter()
                .map(|s| (s.request_id, s.instance_id, &s.service_class, &s.service_name, &s.mode, s.duration.as_secs_f64()))
                .collect();
            let comp: Vec<_> = report
                .compute
                .iter()
                .map(|c| (c.instance_id, &c.service_name, c.compute_time.as_secs_f64(), c.transfer_time.as_secs_f64()))
                .collect();
            let usage: Vec<_> = report.usage.iter().map(|u| (u.t.as_secs_f64(), u.node, u.cpu, u.memory_mb)).collect();
            Ok(vec![
                write_csv(
                    dir.join("instantiation.csv"),
                    &["request_id", "instance_id", "service_class", "service_name", "mode", "duration"],
                    &inst,
                )?,
                write_csv(dir.join("compute.csv"), &["instance_id", "service_name", "compute_time", "transfer_time"], &comp)?,
                write_csv(dir.join("usage.csv"), &["t", "node", "cpu", "memory_mb"], &usage)?,
                write_csv(
                    dir.join("video.csv"),
                    &["size_mb", "edge_tx", "cloud_tx", "edge_compute", "cloud_compute"],
                    &report.video_by_size,
                )?,
            ])
        }
    }
}
