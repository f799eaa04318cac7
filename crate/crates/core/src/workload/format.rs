//! Line-oriented workload text format.
//!
//! ```text
//! # comment
//! option stage_barrier=true
//! manifest
//! db/receptor.pdb 1000000
//! tasks
//! task 0 stage=1 compute=550 in=db/receptor.pdb out=dock/0.out:10000
//! task 1 stage=2 compute=4.5 in=dock/0.out out=sum/0:100 pin=3
//! ```
//!
//! Object names may not contain whitespace or commas. Compute times are
//! decimal seconds with at most microsecond precision.

use std::fmt::Write as _;

use thiserror::Error;

use super::{OutputSpec, TaskSpec, Workload};
use crate::cluster::NodeId;
use crate::simnet::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

/// Parses decimal seconds into whole microseconds without going through
/// floating point.
pub fn parse_seconds(s: &str) -> Option<SimTime> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    if whole.is_empty() && frac.is_empty() || frac.len() > 6 {
        return None;
    }
    if !whole.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let w: u64 = if whole.is_empty() { 0 } else { whole.parse().ok()? };
    let f: u64 = if frac.is_empty() { 0 } else { format!("{frac:0<6}").parse().ok()? };
    Some(SimTime(w.checked_mul(1_000_000)?.checked_add(f)?))
}

pub fn format_seconds(t: SimTime) -> String {
    let (w, f) = (t.0 / 1_000_000, t.0 % 1_000_000);
    if f == 0 {
        w.to_string()
    } else {
        let frac = format!("{f:06}");
        format!("{w}.{}", frac.trim_end_matches('0'))
    }
}

#[derive(PartialEq)]
enum Section {
    None,
    Manifest,
    Tasks,
}

pub fn parse_workload(text: &str) -> Result<Workload, ParseError> {
    let mut w = Workload::default();
    let mut section = Section::None;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "manifest" => {
                section = Section::Manifest;
                continue;
            }
            "tasks" => {
                section = Section::Tasks;
                continue;
            }
            _ => {}
        }
        if let Some(opt) = line.strip_prefix("option ") {
            match opt.trim() {
                "stage_barrier=true" => w.stage_barrier = true,
                "stage_barrier=false" => w.stage_barrier = false,
                other => return Err(err(line_no, format!("unknown option {other:?}"))),
            }
            continue;
        }
        match section {
            Section::None => return Err(err(line_no, "expected `manifest` or `tasks` section header")),
            Section::Manifest => {
                let mut parts = line.split_whitespace();
                let (Some(name), Some(size), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(err(line_no, "manifest lines are `<name> <size>`"));
                };
                let size = size.parse().map_err(|_| err(line_no, format!("bad size {size:?}")))?;
                if w.manifest.insert(name.to_string(), size).is_some() {
                    return Err(err(line_no, format!("{name} listed twice in manifest")));
                }
            }
            Section::Tasks => w.tasks.push(parse_task(line, line_no)?),
        }
    }
    Ok(w)
}

fn parse_task(line: &str, line_no: usize) -> Result<TaskSpec, ParseError> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("task") {
        return Err(err(line_no, "task lines start with `task`"));
    }
    let id = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(line_no, "missing or bad task id"))?;
    let mut task = TaskSpec::new(id, SimTime::ZERO);
    let mut have_compute = false;
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| err(line_no, format!("expected key=value, got {kv:?}")))?;
        match k {
            "stage" => task.stage = v.parse().map_err(|_| err(line_no, format!("bad stage {v:?}")))?,
            "compute" => {
                task.compute = parse_seconds(v).ok_or_else(|| err(line_no, format!("bad compute time {v:?}")))?;
                have_compute = true;
            }
            "in" => task.inputs = v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect(),
            "out" => {
                task.outputs = v
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|o| {
                        let (name, size) =
                            o.rsplit_once(':').ok_or_else(|| err(line_no, format!("output {o:?} lacks :size")))?;
                        let size = size.parse().map_err(|_| err(line_no, format!("bad output size in {o:?}")))?;
                        Ok(OutputSpec::new(name, size))
                    })
                    .collect::<Result<_, _>>()?
            }
            "pin" => task.pin = Some(NodeId(v.parse().map_err(|_| err(line_no, format!("bad pin {v:?}")))?)),
            other => return Err(err(line_no, format!("unknown task field {other:?}"))),
        }
    }
    if !have_compute {
        return Err(err(line_no, "task lacks compute="));
    }
    Ok(task)
}

pub fn write_workload(w: &Workload) -> String {
    let mut out = String::new();
    if w.stage_barrier {
        out.push_str("option stage_barrier=true\n");
    }
    out.push_str("manifest\n");
    for (name, size) in &w.manifest {
        let _ = writeln!(out, "{name} {size}");
    }
    out.push_str("tasks\n");
    for t in &w.tasks {
        let _ = write!(out, "task {} stage={} compute={}", t.id, t.stage, format_seconds(t.compute));
        if !t.inputs.is_empty() {
            let _ = write!(out, " in={}", t.inputs.join(","));
        }
        if !t.outputs.is_empty() {
            let outs: Vec<String> = t.outputs.iter().map(|o| format!("{}:{}", o.name, o.size)).collect();
            let _ = write!(out, " out={}", outs.join(","));
        }
        if let Some(p) = t.pin {
            let _ = write!(out, " pin={p}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seconds_round_trip() {
        assert_eq!(parse_seconds("550"), Some(SimTime::from_secs(550)));
        assert_eq!(parse_seconds("4.25"), Some(SimTime(4_250_000)));
        assert_eq!(parse_seconds(".5"), Some(SimTime(500_000)));
        assert_eq!(parse_seconds("1.0000001"), None);
        assert_eq!(parse_seconds("-1"), None);
        assert_eq!(format_seconds(SimTime(4_250_000)), "4.25");
        assert_eq!(format_seconds(SimTime(7)), "0.000007");
    }

    #[test]
    fn parse_and_write() {
        let text = "\
# sample
option stage_barrier=true
manifest
db 1000
tasks
task 0 stage=1 compute=550 in=db out=a:10,b:20
task 1 stage=2 compute=1.5 in=a,b pin=3
";
        let w = parse_workload(text).unwrap();
        assert!(w.stage_barrier);
        assert_eq!(w.manifest["db"], 1000);
        assert_eq!(w.tasks[0].outputs[1], OutputSpec::new("b", 20));
        assert_eq!(w.tasks[1].pin, Some(NodeId(3)));
        assert_eq!(w.tasks[1].compute, SimTime(1_500_000));
        let again = parse_workload(&write_workload(&w)).unwrap();
        assert_eq!(again, w);
        assert_eq!(write_workload(&again), write_workload(&w));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_workload("tasks\ntask 0 compute=1 bogus=2\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(parse_workload("task 0 compute=1\n").is_err());
        assert!(parse_workload("tasks\ntask 0 stage=1\n").is_err());
    }
}
