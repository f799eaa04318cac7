//! Tasks, their declared input and output objects, and dataflow readiness.

mod format;
mod generate;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::cluster::NodeId;
use crate::simnet::SimTime;

pub use format::{parse_workload, write_workload, ParseError};
pub use generate::{
    content_for, dock_like_workflow, generate_synthetic, run_on_all, DockLayout, DockParams, SyntheticParams,
    TaskTemplate,
};

pub type TaskId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputSpec {
    pub name: String,
    pub size: u64,
}

impl OutputSpec {
    pub fn new(name: impl Into<String>, size: u64) -> Self {
        OutputSpec { name: name.into(), size }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub inputs: Vec<String>,
    pub outputs: Vec<OutputSpec>,
    pub compute: SimTime,
    pub stage: u32,
    /// Run only on this node.
    pub pin: Option<NodeId>,
}

impl TaskSpec {
    pub fn new(id: TaskId, compute: SimTime) -> Self {
        TaskSpec { id, inputs: Vec::new(), outputs: Vec::new(), compute, stage: 1, pin: None }
    }

    pub fn output_bytes(&self) -> u64 {
        self.outputs.iter().map(|o| o.size).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Workload {
    pub tasks: Vec<TaskSpec>,
    /// Objects present on GFS before the run, with sizes.
    pub manifest: BTreeMap<String, u64>,
    /// When set, a task is ready only after every task of a lower stage
    /// has completed, in addition to its dataflow inputs.
    pub stage_barrier: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("object {object} written by more than one writer (tasks {tasks:?})")]
    DuplicateWriter { object: String, tasks: Vec<TaskId> },
    #[error("task {task} reads {object}, which no task writes and the manifest lacks")]
    MissingInput { task: TaskId, object: String },
    #[error("dependency cycle among tasks {tasks:?}")]
    Cycle { tasks: Vec<TaskId> },
    #[error("task id {0} used more than once")]
    DuplicateTaskId(TaskId),
}

impl Workload {
    pub fn new(tasks: Vec<TaskSpec>) -> Self {
        Workload { tasks, ..Default::default() }
    }

    /// Map from object name to the index (not id) of the task writing it.
    pub fn writers(&self) -> HashMap<&str, usize> {
        let mut w = HashMap::new();
        for (i, t) in self.tasks.iter().enumerate() {
            for o in &t.outputs {
                w.entry(o.name.as_str()).or_insert(i);
            }
        }
        w
    }

    /// Every object with its size: manifest entries and task outputs.
    pub fn objects(&self) -> BTreeMap<String, u64> {
        let mut all = self.manifest.clone();
        for t in &self.tasks {
            for o in &t.outputs {
                all.insert(o.name.clone(), o.size);
            }
        }
        all
    }

    pub fn object_size(&self, name: &str) -> Option<u64> {
        self.manifest.get(name).copied().or_else(|| {
            self.tasks.iter().flat_map(|t| &t.outputs).find(|o| o.name == name).map(|o| o.size)
        })
    }

    pub fn total_output_bytes(&self) -> u64 {
        self.tasks.iter().map(TaskSpec::output_bytes).sum()
    }

    pub fn stages(&self) -> BTreeSet<u32> {
        self.tasks.iter().map(|t| t.stage).collect()
    }

    /// Checks single writers, input availability and acyclicity. Reports
    /// every violation found.
    pub fn validate(&self) -> Result<(), Vec<WorkloadError>> {
        let mut errors = Vec::new();

        let mut ids = HashSet::new();
        for t in &self.tasks {
            if !ids.insert(t.id) {
                errors.push(WorkloadError::DuplicateTaskId(t.id));
            }
        }

        let mut writers: BTreeMap<&str, Vec<TaskId>> = BTreeMap::new();
        for t in &self.tasks {
            for o in &t.outputs {
                writers.entry(o.name.as_str()).or_default().push(t.id);
            }
        }
        for (object, tasks) in &writers {
            if tasks.len() > 1 || self.manifest.contains_key(*object) {
                errors.push(WorkloadError::DuplicateWriter { object: object.to_string(), tasks: tasks.clone() });
            }
        }

        for t in &self.tasks {
            for i in &t.inputs {
                if !writers.contains_key(i.as_str()) && !self.manifest.contains_key(i) {
                    errors.push(WorkloadError::MissingInput { task: t.id, object: i.clone() });
                }
            }
        }

        // Kahn's algorithm over writer -> reader edges.
        let index = self.writers();
        let n = self.tasks.len();
        let mut indegree = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, t) in self.tasks.iter().enumerate() {
            let mut deps: Vec<usize> = t.inputs.iter().filter_map(|i| index.get(i.as_str()).copied()).collect();
            deps.sort_unstable();
            deps.dedup();
            for w in deps {
                succ[w].push(r);
                indegree[r] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = queue.pop() {
            seen += 1;
            for &s in &succ[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    queue.push(s);
                }
            }
        }
        if seen < n {
            let mut tasks: Vec<TaskId> = (0..n).filter(|&i| indegree[i] > 0).map(|i| self.tasks[i].id).collect();
            tasks.sort_unstable();
            errors.push(WorkloadError::Cycle { tasks });
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// True when every input of `task` written by some task has its writer in
/// `completed` (and, under a stage barrier, all lower stages are done).
pub fn dataflow_ready(task: &TaskSpec, completed: &HashSet<TaskId>, workload: &Workload) -> bool {
    let writers = workload.writers();
    let inputs_done = task
        .inputs
        .iter()
        .all(|i| writers.get(i.as_str()).is_none_or(|&w| completed.contains(&workload.tasks[w].id)));
    let barrier_done = !workload.stage_barrier
        || workload.tasks.iter().filter(|t| t.stage < task.stage).all(|t| completed.contains(&t.id));
    inputs_done && barrier_done
}

/// Incremental readiness tracking for a validated workload. Indices refer
/// to positions in `workload.tasks`.
#[derive(Debug, Clone)]
pub struct ReadyTracker {
    waiting_on: Vec<u32>,
    dependents: Vec<Vec<usize>>,
    stage_of: Vec<u32>,
    stage_pending: BTreeMap<u32, usize>,
    barrier: bool,
    held: BTreeMap<u32, Vec<usize>>,
}

impl ReadyTracker {
    /// Returns the tracker and the indices ready at the start.
    pub fn new(workload: &Workload) -> (Self, Vec<usize>) {
        let writers = workload.writers();
        let n = workload.tasks.len();
        let mut waiting_on = vec![0u32; n];
        let mut dependents = vec![Vec::new(); n];
        for (r, t) in workload.tasks.iter().enumerate() {
            let mut deps: Vec<usize> = t.inputs.iter().filter_map(|i| writers.get(i.as_str()).copied()).collect();
            deps.sort_unstable();
            deps.dedup();
            for w in deps {
                dependents[w].push(r);
                waiting_on[r] += 1;
            }
        }
        let stage_of: Vec<u32> = workload.tasks.iter().map(|t| t.stage).collect();
        let mut stage_pending = BTreeMap::new();
        for &s in &stage_of {
            *stage_pending.entry(s).or_insert(0) += 1;
        }
        let mut tracker = ReadyTracker {
            waiting_on,
            dependents,
            stage_of,
            stage_pending,
            barrier: workload.stage_barrier,
            held: BTreeMap::new(),
        };
        let initial: Vec<usize> = (0..n).filter(|&i| tracker.waiting_on[i] == 0).collect();
        let ready = tracker.gate(initial);
        (tracker, ready)
    }

    fn lowest_open_stage(&self) -> Option<u32> {
        self.stage_pending.iter().find(|(_, &c)| c > 0).map(|(&s, _)| s)
    }

    fn gate(&mut self, candidates: Vec<usize>) -> Vec<usize> {
        if !self.barrier {
            return candidates;
        }
        let open = self.lowest_open_stage();
        let mut ready = Vec::new();
        for c in candidates {
            if open.is_none_or(|s| self.stage_of[c] <= s) {
                ready.push(c);
            } else {
                self.held.entry(self.stage_of[c]).or_default().push(c);
            }
        }
        ready
    }

    /// Marks a task complete and returns the indices that became ready.
    pub fn complete(&mut self, idx: usize) -> Vec<usize> {
        let mut newly = Vec::new();
        for &d in &self.dependents[idx] {
            self.waiting_on[d] -= 1;
            if self.waiting_on[d] == 0 {
                newly.push(d);
            }
        }
        let stage = self.stage_of[idx];
        *self.stage_pending.get_mut(&stage).expect("stage counted") -= 1;
        let mut ready = self.gate(newly);
        if self.barrier {
            if let Some(open) = self.lowest_open_stage() {
                let released: Vec<u32> = self.held.range(..=open).map(|(&s, _)| s).collect();
                for s in released {
                    ready.extend(self.held.remove(&s).unwrap_or_default());
                }
            }
        }
        ready.sort_unstable();
        ready
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: TaskId, inputs: &[&str], outputs: &[&str]) -> TaskSpec {
        TaskSpec {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| OutputSpec::new(*s, 1)).collect(),
            ..TaskSpec::new(id, SimTime::from_secs(1))
        }
    }

    #[test]
    fn duplicate_writer() {
        let w = Workload::new(vec![task(0, &[], &["x"]), task(1, &[], &["x"])]);
        let errs = w.validate().unwrap_err();
        assert_eq!(errs, vec![WorkloadError::DuplicateWriter { object: "x".into(), tasks: vec![0, 1] }]);
    }

    #[test]
    fn cycle_detected() {
        let w = Workload::new(vec![task(0, &["y"], &["x"]), task(1, &["x"], &["y"])]);
        assert_eq!(w.validate().unwrap_err(), vec![WorkloadError::Cycle { tasks: vec![0, 1] }]);
    }

    #[test]
    fn empty_ok_and_missing_input() {
        assert!(Workload::default().validate().is_ok());
        let w = Workload::new(vec![task(3, &["nowhere"], &[])]);
        assert_eq!(
            w.validate().unwrap_err(),
            vec![WorkloadError::MissingInput { task: 3, object: "nowhere".into() }]
        );
    }

    #[test]
    fn readiness() {
        let mut w = Workload::new(vec![task(0, &["m"], &["a"]), task(1, &["a"], &["b"])]);
        w.manifest.insert("m".into(), 5);
        let done = HashSet::new();
        assert!(dataflow_ready(&w.tasks[0], &done, &w));
        assert!(!dataflow_ready(&w.tasks[1], &done, &w));
        let done: HashSet<TaskId> = [0].into();
        assert!(dataflow_ready(&w.tasks[1], &done, &w));
    }

    #[test]
    fn barrier_holds_later_stages() {
        let mut t2 = task(2, &[], &["z"]);
        t2.stage = 2;
        let mut w = Workload::new(vec![task(0, &[], &["a"]), task(1, &[], &["b"]), t2]);
        w.stage_barrier = true;
        assert!(!dataflow_ready(&w.tasks[2], &[0].into(), &w));
        assert!(dataflow_ready(&w.tasks[2], &[0, 1].into(), &w));

        let (mut tr, ready) = ReadyTracker::new(&w);
        assert_eq!(ready, vec![0, 1]);
        assert!(tr.complete(0).is_empty());
        assert_eq!(tr.complete(1), vec![2]);
    }
}
