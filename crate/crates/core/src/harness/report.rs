//! CSV and text output of a [`RunReport`], and the audit that re-derives
//! the headline metrics from the CSVs alone.
//!
//! A run directory holds:
//!
//! | file          | columns                                             |
//! |---------------|-----------------------------------------------------|
//! | tasks.csv     | `task_id,node,start_us,end_us,stage`                |
//! | flows.csv     | `time_us,event_type,flow_id,src,dst,bytes`          |
//! | flushes.csv   | `time_us,ifs_node,reason,members,bytes,archive_name`|
//! | outputs.csv   | `object,task_id,bytes,gfs_object,offset`            |
//! | stages.csv    | `stage,first_start_us,elapsed_us,tasks`             |
//! | links.csv     | `class,bytes`                                       |
//! | metrics.csv   | `metric,value`                                      |
//! | plan.txt      | one placement per line                              |

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::metrics::{stage_breakdown, stage_rows, RunReport, TaskRecord};
use crate::collect::FLUSH_HEADER;
use crate::simnet::LOG_HEADER;

pub const TASK_HEADER: &str = "task_id,node,start_us,end_us,stage";
pub const OUTPUT_HEADER: &str = "object,task_id,bytes,gfs_object,offset";
pub const STAGE_HEADER: &str = "stage,first_start_us,elapsed_us,tasks";
pub const LINK_HEADER: &str = "class,bytes";
pub const METRICS_HEADER: &str = "metric,value";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Headline numbers of a run, as written to metrics.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub mode: String,
    pub executors: u32,
    pub cores: u32,
    pub first_start_us: u64,
    pub end_us: u64,
    pub makespan_us: u64,
    pub ideal_makespan_us: u64,
    /// Ideal (zero-IO) makespan over measured makespan.
    pub efficiency: f64,
    pub payload_bytes: u64,
    pub aggregate_mbps: f64,
    pub per_node_mbps: f64,
    pub gfs_creates: u64,
}

impl Metrics {
    pub fn from_report(r: &RunReport) -> Metrics {
        Metrics::derive(
            r.mode.as_str().to_string(),
            r.executors,
            r.cores,
            r.first_start_us,
            r.end_us,
            r.ideal_makespan_us,
            r.payload_bytes,
            r.gfs_creates,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn derive(
        mode: String,
        executors: u32,
        cores: u32,
        first_start_us: u64,
        end_us: u64,
        ideal_makespan_us: u64,
        payload_bytes: u64,
        gfs_creates: u64,
    ) -> Metrics {
        let makespan_us = end_us.saturating_sub(first_start_us);
        let efficiency = super::metrics::efficiency_of(ideal_makespan_us, makespan_us).unwrap_or(1.0);
        let aggregate_mbps = super::metrics::throughput_of(payload_bytes, makespan_us);
        let per_node_mbps = if executors == 0 { 0.0 } else { aggregate_mbps / executors as f64 };
        Metrics {
            mode,
            executors,
            cores,
            first_start_us,
            end_us,
            makespan_us,
            ideal_makespan_us,
            efficiency,
            payload_bytes,
            aggregate_mbps,
            per_node_mbps,
            gfs_creates,
        }
    }

    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("mode", self.mode.clone()),
            ("executors", self.executors.to_string()),
            ("cores", self.cores.to_string()),
            ("first_start_us", self.first_start_us.to_string()),
            ("end_us", self.end_us.to_string()),
            ("makespan_us", self.makespan_us.to_string()),
            ("ideal_makespan_us", self.ideal_makespan_us.to_string()),
            ("efficiency", self.efficiency.to_string()),
            ("payload_bytes", self.payload_bytes.to_string()),
            ("aggregate_MBps", self.aggregate_mbps.to_string()),
            ("per_node_MBps", self.per_node_mbps.to_string()),
            ("gfs_creates", self.gfs_creates.to_string()),
        ]
    }

    /// Names of the fields that differ from `other` beyond 6 significant
    /// figures.
    pub fn mismatches(&self, other: &Metrics) -> Vec<&'static str> {
        let mut out = Vec::new();
        for ((name, a), (_, b)) in self.rows().into_iter().zip(other.rows()) {
            let same = match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => same_6sf(x, y),
                _ => a == b,
            };
            if !same {
                out.push(name);
            }
        }
        out
    }
}

fn same_6sf(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 5e-7 * a.abs().max(b.abs())
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), ReportError> {
    let mut text = String::from(header);
    text.push('\n');
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Writes every CSV of the run into `dir`, creating it if needed. A report
/// without tasks produces header-only files.
pub fn emit_csv(report: &RunReport, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let empty = report.tasks.is_empty();
    write_lines(
        &dir.join("tasks.csv"),
        TASK_HEADER,
        report.tasks.iter().map(|t| format!("{},{},{},{},{}", t.task_id, t.node.0, t.start_us, t.end_us, t.stage)),
    )?;
    write_lines(&dir.join("flows.csv"), LOG_HEADER, report.flows.iter().map(|f| f.csv_row()))?;
    write_lines(&dir.join("flushes.csv"), FLUSH_HEADER, report.flushes.iter().map(|f| f.csv_row()))?;

    let path = dir.join("outputs.csv");
    let csv_err = |source| ReportError::Csv { path: path.clone(), source };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(OUTPUT_HEADER.split(',')).map_err(csv_err)?;
    for o in &report.outputs {
        w.write_record([
            o.object.as_str(),
            &o.task_id.to_string(),
            &o.bytes.to_string(),
            &o.gfs_object,
            &o.offset.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;

    write_lines(
        &dir.join("stages.csv"),
        STAGE_HEADER,
        stage_breakdown(report)
            .into_iter()
            .map(|s| format!("{},{},{},{}", s.stage, s.first_start_us, s.elapsed_us, s.tasks)),
    )?;
    write_lines(&dir.join("links.csv"), LINK_HEADER, report.bytes_by_class.iter().map(|(c, b)| format!("{c},{b}")))?;
    let metrics = if empty { Vec::new() } else { Metrics::from_report(report).rows() };
    write_lines(&dir.join("metrics.csv"), METRICS_HEADER, metrics.into_iter().map(|(k, v)| format!("{k},{v}")))?;
    let plan = dir.join("plan.txt");
    let mut text = report.plan.describe().join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(&plan, text).map_err(io_err(&plan))
}

pub fn emit_summary(report: &RunReport) -> String {
    let m = Metrics::from_report(report);
    let mut s = String::new();
    s.push_str(&format!("mode              {}\n", m.mode));
    s.push_str(&format!("executors         {} ({} cores)\n", m.executors, m.cores));
    s.push_str(&format!("tasks             {}\n", report.tasks.len()));
    s.push_str(&format!("makespan          {:.3} s\n", m.makespan_us as f64 / 1e6));
    s.push_str(&format!("ideal makespan    {:.3} s (same tasks, no IO)\n", m.ideal_makespan_us as f64 / 1e6));
    s.push_str(&format!("efficiency        {:.4} (ideal / measured makespan)\n", m.efficiency));
    s.push_str(&format!("payload           {:.3} MB\n", m.payload_bytes as f64 / 1e6));
    s.push_str(&format!("aggregate         {:.2} MB/s\n", m.aggregate_mbps));
    s.push_str(&format!("per node          {:.4} MB/s\n", m.per_node_mbps));
    s.push_str(&format!("gfs creates       {}\n", m.gfs_creates));
    if !report.flushes.is_empty() {
        let members: usize = report.flushes.iter().map(|f| f.members).sum();
        s.push_str(&format!("flushes           {} ({} members)\n", report.flushes.len(), members));
    }
    let stages = stage_breakdown(report);
    if stages.len() > 1 {
        s.push_str("stage  start_s     elapsed_s   tasks\n");
        for r in stages {
            s.push_str(&format!(
                "{:<6} {:<11.3} {:<11.3} {}\n",
                r.stage,
                r.first_start_us as f64 / 1e6,
                r.elapsed_us as f64 / 1e6,
                r.tasks
            ));
        }
    }
    s
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, ReportError> {
    csv::Reader::from_path(path).map_err(|source| ReportError::Csv { path: path.to_path_buf(), source })
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T, ReportError> {
    rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| ReportError::Format {
        path: path.to_path_buf(),
        message: format!("bad field {i} in {:?}", rec.iter().collect::<Vec<_>>()),
    })
}

fn records(path: &Path) -> Result<Vec<csv::StringRecord>, ReportError> {
    reader(path)?
        .records()
        .collect::<Result<_, _>>()
        .map_err(|source| ReportError::Csv { path: path.to_path_buf(), source })
}

pub fn read_tasks(dir: &Path) -> Result<Vec<TaskRecord>, ReportError> {
    let path = dir.join("tasks.csv");
    records(&path)?
        .iter()
        .map(|r| {
            Ok(TaskRecord {
                task_id: field(&path, r, 0)?,
                node: crate::cluster::NodeId(field(&path, r, 1)?),
                start_us: field(&path, r, 2)?,
                end_us: field(&path, r, 3)?,
                stage: field(&path, r, 4)?,
            })
        })
        .collect()
}

pub fn read_metrics(dir: &Path) -> Result<Option<Metrics>, ReportError> {
    let path = dir.join("metrics.csv");
    let rows = records(&path)?;
    if rows.is_empty() {
        return Ok(None);
    }
    let get = |name: &str| -> Result<String, ReportError> {
        rows.iter()
            .find(|r| r.get(0) == Some(name))
            .and_then(|r| r.get(1))
            .map(str::to_string)
            .ok_or_else(|| ReportError::Format { path: path.clone(), message: format!("missing metric {name}") })
    };
    let num = |name: &str| -> Result<f64, ReportError> {
        get(name)?
            .parse()
            .map_err(|_| ReportError::Format { path: path.clone(), message: format!("bad metric {name}") })
    };
    Ok(Some(Metrics {
        mode: get("mode")?,
        executors: num("executors")? as u32,
        cores: num("cores")? as u32,
        first_start_us: num("first_start_us")? as u64,
        end_us: num("end_us")? as u64,
        makespan_us: num("makespan_us")? as u64,
        ideal_makespan_us: num("ideal_makespan_us")? as u64,
        efficiency: num("efficiency")?,
        payload_bytes: num("payload_bytes")? as u64,
        aggregate_mbps: num("aggregate_MBps")?,
        per_node_mbps: num("per_node_MBps")?,
        gfs_creates: num("gfs_creates")? as u64,
    }))
}

/// Re-derives the metrics of a run directory from its raw logs: start and
/// end times from tasks.csv and flushes.csv, payload from outputs.csv and
/// GFS creates from flows.csv when the flow log is present. Run constants
/// (mode, executor count, ideal makespan) come from metrics.csv.
pub fn recompute(dir: &Path) -> Result<Option<Metrics>, ReportError> {
    let Some(written) = read_metrics(dir)? else { return Ok(None) };
    let tasks = read_tasks(dir)?;
    let first = tasks.iter().map(|t| t.start_us).min().unwrap_or(0);
    let mut end = tasks.iter().map(|t| t.end_us).max().unwrap_or(0);

    let path = dir.join("flushes.csv");
    for r in records(&path)? {
        end = end.max(field(&path, &r, 0)?);
    }
    let path = dir.join("outputs.csv");
    let mut payload = 0u64;
    for r in records(&path)? {
        payload += field::<u64>(&path, &r, 2)?;
    }
    let path = dir.join("flows.csv");
    let flows = records(&path)?;
    let creates = if flows.is_empty() {
        written.gfs_creates
    } else {
        flows.iter().filter(|r| r.get(1) == Some("gfs_create")).count() as u64
    };
    Ok(Some(Metrics::derive(
        written.mode,
        written.executors,
        written.cores,
        first,
        end,
        written.ideal_makespan_us,
        payload,
        creates,
    )))
}

/// Per-stage rows re-derived from tasks.csv.
pub fn recompute_stages(dir: &Path, end_us: u64) -> Result<Vec<super::metrics::StageRow>, ReportError> {
    Ok(stage_rows(&read_tasks(dir)?, end_us))
}
