//! Append-only JSON-lines metrics log: one record per training iteration.
//!
//! The reader tolerates a trailing partial line (a crash mid-write) by
//! discarding it; any malformed *complete* line is a hard parse error with
//! its line number.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GsError, Result};
use crate::loss::LossBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub l1_u_model1: f64,
    pub l1_u_model2: f64,
    pub d_ssim: f64,
    pub lpips: f64,
    pub total: f64,
    pub point_counts: Vec<usize>,
    pub resolution_ratio: f64,
    pub active_orbits: Vec<usize>,
    pub wall_clock_ms: f64,
}

impl MetricsRecord {
    pub fn from_breakdown(
        iteration: u64,
        b: &LossBreakdown,
        point_counts: Vec<usize>,
        resolution_ratio: f64,
        active_orbits: Vec<usize>,
        wall_clock_ms: f64,
    ) -> Self {
        Self {
            iteration,
            l1_u_model1: b.l1_u_model1,
            l1_u_model2: b.l1_u_model2,
            d_ssim: b.d_ssim,
            lpips: b.lpips,
            total: b.total,
            point_counts,
            resolution_ratio,
            active_orbits,
            wall_clock_ms,
        }
    }
}

pub struct MetricsLogger {
    writer: BufWriter<File>,
}

impl MetricsLogger {
    /// Open for appending, creating the file if needed.
    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            writer: BufWriter::new(file),
        })
    }

    /// Truncate and start a fresh log.
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            writer: BufWriter::new(File::create(path)?),
        })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.writer, record)?;
        self.writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

impl Drop for MetricsLogger {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

#[derive(Debug)]
pub struct MetricsRead {
    pub records: Vec<MetricsRecord>,
    /// True when a trailing partial line was discarded.
    pub dropped_partial: bool,
}

pub fn read_metrics(path: &Path) -> Result<MetricsRead> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let mut records = Vec::new();
    let mut dropped_partial = false;
    let mut last_iter: Option<u64> = None;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.split('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let is_last = i + 1 == lines.len();
        if line.is_empty() {
            continue;
        }
        // The final fragment without a newline is a crash remnant.
        if is_last && !complete {
            match serde_json::from_str::<MetricsRecord>(line) {
                Ok(_) => {}
                Err(_) => {
                    dropped_partial = true;
                    continue;
                }
            }
        }
        let record: MetricsRecord = serde_json::from_str(line)
            .map_err(|e| GsError::parse_at(format!("bad metrics record: {e}"), i + 1))?;
        if let Some(prev) = last_iter {
            if record.iteration <= prev {
                return Err(GsError::Integrity(format!(
                    "metrics iterations not strictly increasing at line {} ({} after {})",
                    i + 1,
                    record.iteration,
                    prev
                )));
            }
        }
        last_iter = Some(record.iteration);
        records.push(record);
    }
    Ok(MetricsRead {
        records,
        dropped_partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(iteration: u64) -> MetricsRecord {
        MetricsRecord {
            iteration,
            l1_u_model1: 0.1,
            l1_u_model2: 0.2,
            d_ssim: 0.3,
            lpips: 0.0,
            total: 0.33,
            point_counts: vec![100, 101],
            resolution_ratio: 0.5,
            active_orbits: vec![0, 1],
            wall_clock_ms: 12.5,
        }
    }

    #[test]
    fn many_records_read_back_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let mut log = MetricsLogger::create(&path).unwrap();
        for i in 0..5000 {
            log.append(&record(i)).unwrap();
        }
        log.flush().unwrap();
        let read = read_metrics(&path).unwrap();
        assert_eq!(read.records.len(), 5000);
        assert!(!read.dropped_partial);
        assert_eq!(read.records[4999].iteration, 4999);
    }

    #[test]
    fn trailing_partial_line_is_dropped_with_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let mut log = MetricsLogger::create(&path).unwrap();
        for i in 0..3 {
            log.append(&record(i)).unwrap();
        }
        log.flush().unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"iteration\": 3, \"l1_u_mo").unwrap();
        drop(f);
        let read = read_metrics(&path).unwrap();
        assert_eq!(read.records.len(), 3);
        assert!(read.dropped_partial);
    }

    #[test]
    fn malformed_complete_line_errors_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let mut log = MetricsLogger::create(&path).unwrap();
        log.append(&record(0)).unwrap();
        log.flush().unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"not json\n").unwrap();
        drop(f);
        match read_metrics(&path) {
            Err(GsError::Parse { line: Some(2), .. }) => {}
            other => panic!("expected parse error at line 2, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        std::fs::write(&path, "").unwrap();
        let read = read_metrics(&path).unwrap();
        assert!(read.records.is_empty());
        assert!(!read.dropped_partial);
    }

    #[test]
    fn non_monotonic_iterations_are_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let mut log = MetricsLogger::create(&path).unwrap();
        log.append(&record(5)).unwrap();
        log.append(&record(5)).unwrap();
        log.flush().unwrap();
        drop(log);
        assert!(matches!(read_metrics(&path), Err(GsError::Integrity(_))));
    }
}
