//! Run reports and the metrics derived from them.
//!
//! Efficiency is the zero-IO makespan of the same workload on the same
//! cores and dispatcher divided by the measured makespan.

use std::collections::BTreeMap;

use thiserror::Error;

use super::config::Mode;
use crate::cluster::{LinkClass, NodeId};
use crate::collect::FlushRecord;
use crate::distribute::PlacementPlan;
use crate::simnet::LogRecord;
use crate::workload::TaskId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRecord {
    pub task_id: TaskId,
    pub node: NodeId,
    pub start_us: u64,
    pub end_us: u64,
    pub stage: u32,
}

/// Where an output lives on GFS after the run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputRecord {
    pub object: String,
    pub task_id: TaskId,
    pub bytes: u64,
    /// GFS object holding the output.
    pub gfs_object: String,
    /// Offset inside `gfs_object` (0 for plain files).
    pub offset: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub mode: Mode,
    pub executors: u32,
    pub cores: u32,
    pub first_start_us: u64,
    /// Latest task or flush end.
    pub end_us: u64,
    pub ideal_makespan_us: u64,
    /// Total bytes of task outputs.
    pub payload_bytes: u64,
    pub gfs_creates: u64,
    pub tasks: Vec<TaskRecord>,
    pub flows: Vec<LogRecord>,
    pub flushes: Vec<FlushRecord>,
    pub outputs: Vec<OutputRecord>,
    pub bytes_by_class: BTreeMap<LinkClass, u64>,
    pub plan: PlacementPlan,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    #[error("makespan is zero")]
    ZeroMakespan,
}

impl RunReport {
    pub fn makespan_us(&self) -> u64 {
        self.end_us.saturating_sub(self.first_start_us)
    }

    pub fn makespan_s(&self) -> f64 {
        self.makespan_us() as f64 / 1e6
    }
}

/// Ideal over measured makespan, capped at 1.
pub fn efficiency(report: &RunReport) -> Result<f64, MetricsError> {
    efficiency_of(report.ideal_makespan_us, report.makespan_us())
}

pub fn efficiency_of(ideal_us: u64, measured_us: u64) -> Result<f64, MetricsError> {
    if measured_us == 0 {
        return Err(MetricsError::ZeroMakespan);
    }
    Ok((ideal_us as f64 / measured_us as f64).min(1.0))
}

/// Payload bytes over makespan, MB/s. Zero for an empty run.
pub fn aggregate_throughput(report: &RunReport) -> f64 {
    throughput_of(report.payload_bytes, report.makespan_us())
}

pub fn throughput_of(bytes: u64, us: u64) -> f64 {
    if us == 0 {
        0.0
    } else {
        bytes as f64 / us as f64
    }
}

pub fn per_node_throughput(report: &RunReport) -> f64 {
    if report.executors == 0 {
        0.0
    } else {
        aggregate_throughput(report) / report.executors as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRow {
    pub stage: u32,
    pub first_start_us: u64,
    pub elapsed_us: u64,
    pub tasks: usize,
}

/// Splits the makespan at the first start of each stage. The last stage
/// runs to the end of the run, final flushes included.
pub fn stage_breakdown(report: &RunReport) -> Vec<StageRow> {
    stage_rows(&report.tasks, report.end_us)
}

pub fn stage_rows(tasks: &[TaskRecord], end_us: u64) -> Vec<StageRow> {
    let mut firsts: BTreeMap<u32, (u64, usize)> = BTreeMap::new();
    for t in tasks {
        let e = firsts.entry(t.stage).or_insert((u64::MAX, 0));
        e.0 = e.0.min(t.start_us);
        e.1 += 1;
    }
    let list: Vec<(u32, u64, usize)> = firsts.into_iter().map(|(s, (f, n))| (s, f, n)).collect();
    list.iter()
        .enumerate()
        .map(|(i, &(stage, first, n))| {
            let until = list.get(i + 1).map_or(end_us, |next| next.1);
            StageRow { stage, first_start_us: first, elapsed_us: until.saturating_sub(first), tasks: n }
        })
        .collect()
}
