//! Run metrics, aggregation over seeds, and the CSV files they are written to.
//!
//! A run produces two files:
//!
//! * `nodes.csv`, header `id,layer,lon,lat,messages`, one row per node.
//!   `messages` counts metadata messages the node sent plus received.
//! * `summary.csv`, header `metric,value`, one row per entry of
//!   [`MetricsReport::METRICS`] in that order.
//!
//! An aggregate is written as `aggregate.csv` with header
//! `metric,mean,sd,n`. Floats use Rust's shortest round-trip formatting, so
//! parsing a file gives back exactly what was written.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Layer, NodeId};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty list of reports")]
    Empty,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub id: u32,
    pub layer: Layer,
    pub lon: f64,
    pub lat: f64,
    pub messages: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub tasks_issued: u64,
    pub completed_tasks: u64,
    pub redirected_tasks: u64,
    pub escalated_tasks: u64,
    pub lost_tasks: u64,
    pub in_flight_tasks: u64,
    pub failures_triggered: u64,
    pub failures_detected: u64,
    pub lost_pools: u64,
    pub registrations: u64,
    pub gossip_sessions: u64,
    pub gossip_sessions_completed: u64,
    pub unanswered_syns: u64,
    pub gossip_messages: u64,
    pub metadata_messages: u64,
    pub client_rebootstraps: u64,
    pub nodes: Vec<NodeRow>,
}

impl MetricsReport {
    /// Summary metric names, in file order.
    pub const METRICS: [&'static str; 20] = [
        "tasks_issued",
        "completed_tasks",
        "redirected_tasks",
        "escalated_tasks",
        "lost_tasks",
        "in_flight_tasks",
        "failures_triggered",
        "failures_detected",
        "detection_rate",
        "undetected_rate",
        "lost_pools",
        "registrations",
        "gossip_sessions",
        "gossip_sessions_completed",
        "unanswered_syns",
        "gossip_messages",
        "metadata_messages",
        "mean_messages_per_node",
        "client_rebootstraps",
        "node_count",
    ];

    /// detected / triggered, 0 when nothing failed.
    pub fn detection_rate(&self) -> f64 {
        if self.failures_triggered == 0 {
            0.0
        } else {
            self.failures_detected as f64 / self.failures_triggered as f64
        }
    }

    /// Share of failures that went unnoticed, 0 when nothing failed.
    pub fn undetected_rate(&self) -> f64 {
        if self.failures_triggered == 0 {
            0.0
        } else {
            1.0 - self.detection_rate()
        }
    }

    pub fn mean_messages_per_node(&self) -> f64 {
        if self.nodes.is_empty() {
            0.0
        } else {
            self.nodes.iter().map(|n| n.messages as f64).sum::<f64>() / self.nodes.len() as f64
        }
    }

    pub fn node_messages(&self, id: NodeId) -> Option<u64> {
        self.nodes.iter().find(|n| n.id == id.0).map(|n| n.messages)
    }

    fn counters(&self) -> [(&'static str, u64); 16] {
        let mut copy = MetricsReport { nodes: Vec::new(), ..*self };
        copy.counters_mut().map(|(n, v)| (n, *v))
    }

    fn counters_mut(&mut self) -> [(&'static str, &mut u64); 16] {
        [
            ("tasks_issued", &mut self.tasks_issued),
            ("completed_tasks", &mut self.completed_tasks),
            ("redirected_tasks", &mut self.redirected_tasks),
            ("escalated_tasks", &mut self.escalated_tasks),
            ("lost_tasks", &mut self.lost_tasks),
            ("in_flight_tasks", &mut self.in_flight_tasks),
            ("failures_triggered", &mut self.failures_triggered),
            ("failures_detected", &mut self.failures_detected),
            ("lost_pools", &mut self.lost_pools),
            ("registrations", &mut self.registrations),
            ("gossip_sessions", &mut self.gossip_sessions),
            ("gossip_sessions_completed", &mut self.gossip_sessions_completed),
            ("unanswered_syns", &mut self.unanswered_syns),
            ("gossip_messages", &mut self.gossip_messages),
            ("metadata_messages", &mut self.metadata_messages),
            ("client_rebootstraps", &mut self.client_rebootstraps),
        ]
    }

    /// Every summary metric as a number, in [`Self::METRICS`] order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        Self::METRICS.iter().map(|m| (*m, self.metric(m).expect("listed metric"))).collect()
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        let v = match name {
            "detection_rate" => self.detection_rate(),
            "undetected_rate" => self.undetected_rate(),
            "mean_messages_per_node" => self.mean_messages_per_node(),
            "node_count" => self.nodes.len() as f64,
            other => self.counters().into_iter().find(|(n, _)| *n == other)?.1 as f64,
        };
        Some(v)
    }

    fn summary_rows(&self) -> Vec<(&'static str, String)> {
        Self::METRICS
            .iter()
            .map(|m| {
                let text = match *m {
                    "detection_rate" => self.detection_rate().to_string(),
                    "undetected_rate" => self.undetected_rate().to_string(),
                    "mean_messages_per_node" => self.mean_messages_per_node().to_string(),
                    "node_count" => self.nodes.len().to_string(),
                    _ => (self.metric(m).unwrap() as u64).to_string(),
                };
                (*m, text)
            })
            .collect()
    }

    /// Writes `nodes.csv` and `summary.csv` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<(), MetricsError> {
        fs::create_dir_all(dir).map_err(|source| MetricsError::Io { path: dir.to_path_buf(), source })?;
        let nodes = dir.join("nodes.csv");
        let csv_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| MetricsError::Csv { path: path.clone(), source }
        };
        let mut w = csv::Writer::from_path(&nodes).map_err(csv_err(&nodes))?;
        if self.nodes.is_empty() {
            w.write_record(["id", "layer", "lon", "lat", "messages"]).map_err(csv_err(&nodes))?;
        }
        for n in &self.nodes {
            w.serialize(n).map_err(csv_err(&nodes))?;
        }
        w.flush().map_err(|source| MetricsError::Io { path: nodes.clone(), source })?;

        let summary = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&summary).map_err(csv_err(&summary))?;
        w.write_record(["metric", "value"]).map_err(csv_err(&summary))?;
        for (m, v) in self.summary_rows() {
            w.write_record([m, v.as_str()]).map_err(csv_err(&summary))?;
        }
        w.flush().map_err(|source| MetricsError::Io { path: summary.clone(), source })?;
        Ok(())
    }

    /// Reads back a report written by [`Self::export`].
    pub fn parse(dir: &Path) -> Result<Self, MetricsError> {
        let nodes_path = dir.join("nodes.csv");
        let mut r = csv::Reader::from_path(&nodes_path).map_err(|source| MetricsError::Csv { path: nodes_path.clone(), source })?;
        let nodes = r
            .deserialize()
            .collect::<Result<Vec<NodeRow>, _>>()
            .map_err(|source| MetricsError::Csv { path: nodes_path.clone(), source })?;
        let mut report = MetricsReport { nodes, ..Default::default() };

        let path = dir.join("summary.csv");
        let mut r = csv::Reader::from_path(&path).map_err(|source| MetricsError::Csv { path: path.clone(), source })?;
        let bad = |msg: String| MetricsError::Format { path: path.clone(), msg };
        for rec in r.records() {
            let rec = rec.map_err(|source| MetricsError::Csv { path: path.clone(), source })?;
            let (name, value) = (&rec[0], &rec[1]);
            if let Some((_, slot)) = report.counters_mut().into_iter().find(|(n, _)| *n == name) {
                *slot = value.parse().map_err(|e| bad(format!("{name}: {e}")))?;
            } else if !MetricsReport::METRICS.contains(&name) {
                return Err(bad(format!("unknown metric `{name}`")));
            }
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    pub rows: Vec<MetricStats>,
}

impl AggregateStats {
    pub fn get(&self, metric: &str) -> Option<&MetricStats> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn mean(&self, metric: &str) -> f64 {
        self.get(metric).map_or(f64::NAN, |r| r.mean)
    }

    pub fn export(&self, path: &Path) -> Result<(), MetricsError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| MetricsError::Io { path: dir.to_path_buf(), source })?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|source| MetricsError::Csv { path: path.to_path_buf(), source })?;
        for r in &self.rows {
            w.serialize(r).map_err(|source| MetricsError::Csv { path: path.to_path_buf(), source })?;
        }
        w.flush().map_err(|source| MetricsError::Io { path: path.to_path_buf(), source })
    }

    pub fn parse(path: &Path) -> Result<Self, MetricsError> {
        let mut r = csv::Reader::from_path(path).map_err(|source| MetricsError::Csv { path: path.to_path_buf(), source })?;
        let rows = r
            .deserialize()
            .collect::<Result<Vec<MetricStats>, _>>()
            .map_err(|source| MetricsError::Csv { path: path.to_path_buf(), source })?;
        Ok(Self { rows })
    }
}

/// Sample mean and sample standard deviation (n - 1 denominator).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 || xs.iter().all(|x| *x == xs[0]) {
        return (if xs.is_empty() { mean } else { xs[0] }, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateStats, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::Empty);
    }
    let per_run: Vec<Vec<(&str, f64)>> = reports.iter().map(|r| r.values()).collect();
    let rows = MetricsReport::METRICS
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let xs: Vec<f64> = per_run.iter().map(|v| v[i].1).collect();
            let (mean, sd) = mean_sd(&xs);
            MetricStats { metric: (*m).to_string(), mean, sd, n: xs.len() }
        })
        .collect();
    Ok(AggregateStats { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsReport {
        MetricsReport {
            tasks_issued: 10,
            completed_tasks: 7,
            failures_triggered: 3,
            failures_detected: 2,
            nodes: vec![
                NodeRow { id: 0, layer: Layer::Cloud, lon: 8.5, lat: 50.1, messages: 0 },
                NodeRow { id: 1, layer: Layer::Edge, lon: -0.1 + 0.2, lat: 1.0 / 3.0, messages: 17 },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn identical_reports_have_zero_sd() {
        let a = aggregate(&[sample(), sample(), sample()]).unwrap();
        assert!(a.rows.iter().all(|r| r.sd == 0.0));
        assert_eq!(a.mean("completed_tasks"), 7.0);
    }

    #[test]
    fn textbook_sample_sd() {
        let reps: Vec<MetricsReport> =
            [1, 2, 3].iter().map(|c| MetricsReport { completed_tasks: *c, ..Default::default() }).collect();
        let s = aggregate(&reps).unwrap();
        let r = s.get("completed_tasks").unwrap();
        assert_eq!((r.mean, r.sd, r.n), (2.0, 1.0, 3));
    }

    #[test]
    fn empty_aggregate_is_an_error() {
        assert!(matches!(aggregate(&[]), Err(MetricsError::Empty)));
    }

    #[test]
    fn rates_are_fractions() {
        let r = sample();
        assert_eq!(r.detection_rate(), 2.0 / 3.0);
        assert!((r.detection_rate() + r.undetected_rate() - 1.0).abs() < 1e-15);
        assert_eq!(MetricsReport::default().detection_rate(), 0.0);
    }

    #[test]
    fn csv_round_trip_and_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample();
        r.export(dir.path()).unwrap();
        assert_eq!(MetricsReport::parse(dir.path()).unwrap(), r);
        let first = fs::read(dir.path().join("nodes.csv")).unwrap();
        r.export(dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join("nodes.csv")).unwrap(), first);
    }

    #[test]
    fn empty_report_writes_header_only_nodes_and_zero_summary() {
        let dir = tempfile::tempdir().unwrap();
        MetricsReport::default().export(dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("nodes.csv")).unwrap(), "id,layer,lon,lat,messages\n");
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 1 + MetricsReport::METRICS.len());
        assert!(summary.lines().skip(1).all(|l| l.ends_with(",0")));
        assert_eq!(MetricsReport::parse(dir.path()).unwrap(), MetricsReport::default());
    }

    #[test]
    fn aggregate_file_has_one_row_per_metric() {
        let dir = tempfile::tempdir().unwrap();
        let reps: Vec<MetricsReport> =
            (0..5).map(|i| MetricsReport { completed_tasks: i * 3, ..sample() }).collect();
        let path = dir.path().join("aggregate.csv");
        aggregate(&reps).unwrap().export(&path).unwrap();
        let back = AggregateStats::parse(&path).unwrap();
        assert_eq!(back.rows.len(), MetricsReport::METRICS.len());
        let xs: Vec<f64> = reps.iter().map(|r| r.completed_tasks as f64).collect();
        assert_eq!(back.mean("completed_tasks"), xs.iter().sum::<f64>() / 5.0);
    }
}
