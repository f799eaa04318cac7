//! Central FIFO dispatcher with a rate cap, and the zero-IO schedule used
//! as the efficiency baseline.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use crate::cluster::{NodeId, Topology};
use crate::simnet::SimTime;
use crate::workload::{ReadyTracker, TaskId, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub task: usize,
    pub node: NodeId,
    pub core: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dispatch {
    Assigned(Assignment),
    /// The rate cap forbids a dispatch before this time.
    WaitUntil(SimTime),
    /// Nothing can be placed until a core frees up or a task becomes ready.
    Idle,
}

/// Ready tasks go out lowest id first, each to the lowest-numbered free
/// core (within its pinned node, if any), at most one per `interval`.
#[derive(Debug, Clone)]
pub struct Dispatcher {
    cores_per_node: u32,
    executors: Vec<NodeId>,
    /// Executor position by node index.
    position: Vec<Option<u32>>,
    free: BTreeSet<u32>,
    ready: BTreeSet<(TaskId, usize)>,
    interval: u64,
    next_allowed: u64,
}

impl Dispatcher {
    /// `rate` is in dispatches per second; 0 means uncapped.
    pub fn new(topology: &Topology, rate: f64) -> Self {
        let executors = topology.executors().to_vec();
        let mut position = vec![None; topology.node_count() as usize];
        for (i, e) in executors.iter().enumerate() {
            position[e.index()] = Some(i as u32);
        }
        let cores = topology.cores_per_node();
        let interval = if rate > 0.0 { (1e6 / rate).ceil() as u64 } else { 0 };
        Dispatcher {
            cores_per_node: cores,
            free: (0..executors.len() as u32 * cores).collect(),
            executors,
            position,
            ready: BTreeSet::new(),
            interval,
            next_allowed: 0,
        }
    }

    pub fn total_cores(&self) -> u32 {
        self.executors.len() as u32 * self.cores_per_node
    }

    pub fn push_ready(&mut self, id: TaskId, idx: usize) {
        self.ready.insert((id, idx));
    }

    pub fn ready_len(&self) -> usize {
        self.ready.len()
    }

    pub fn release(&mut self, core: u32) {
        self.free.insert(core);
    }

    /// Slot of the given core.
    pub fn node_of(&self, core: u32) -> NodeId {
        self.executors[(core / self.cores_per_node) as usize]
    }

    pub fn next(&mut self, now: SimTime, pin: impl Fn(usize) -> Option<NodeId>) -> Dispatch {
        if self.ready.is_empty() || self.free.is_empty() {
            return Dispatch::Idle;
        }
        let mut chosen = None;
        for &(id, idx) in &self.ready {
            let core = match pin(idx) {
                None => self.free.first().copied(),
                Some(node) => {
                    let Some(p) = self.position.get(node.index()).copied().flatten() else { continue };
                    let lo = p * self.cores_per_node;
                    self.free.range(lo..lo + self.cores_per_node).next().copied()
                }
            };
            if let Some(core) = core {
                chosen = Some((id, idx, core));
                break;
            }
        }
        let Some((id, idx, core)) = chosen else { return Dispatch::Idle };
        if now.0 < self.next_allowed {
            return Dispatch::WaitUntil(SimTime(self.next_allowed));
        }
        self.ready.remove(&(id, idx));
        self.free.remove(&core);
        self.next_allowed = now.0 + self.interval;
        Dispatch::Assigned(Assignment { task: idx, node: self.node_of(core), core })
    }
}

/// Makespan of the workload with every IO cost set to zero: the same
/// dispatcher, readiness rules and compute times, nothing else.
pub fn ideal_makespan(workload: &Workload, topology: &Topology, dispatch_rate: f64) -> SimTime {
    ideal_schedule(workload, topology, dispatch_rate).0
}

/// Ideal makespan plus each task's (start, end), by task index.
pub fn ideal_schedule(workload: &Workload, topology: &Topology, dispatch_rate: f64) -> (SimTime, Vec<(SimTime, SimTime)>) {
    let mut d = Dispatcher::new(topology, dispatch_rate);
    let (mut tracker, initial) = ReadyTracker::new(workload);
    for i in initial {
        d.push_ready(workload.tasks[i].id, i);
    }
    let mut running: BinaryHeap<Reverse<(SimTime, usize, u32)>> = BinaryHeap::new();
    let mut times = vec![(SimTime::ZERO, SimTime::ZERO); workload.tasks.len()];
    let mut now = SimTime::ZERO;
    let mut first: Option<SimTime> = None;
    let mut last = SimTime::ZERO;
    loop {
        let mut wake = None;
        loop {
            match d.next(now, |i| workload.tasks[i].pin) {
                Dispatch::Assigned(a) => {
                    first.get_or_insert(now);
                    let end = now + workload.tasks[a.task].compute;
                    times[a.task] = (now, end);
                    running.push(Reverse((end, a.task, a.core)));
                }
                Dispatch::WaitUntil(t) => {
                    wake = Some(t);
                    break;
                }
                Dispatch::Idle => break,
            }
        }
        let next_end = running.peek().map(|Reverse((t, _, _))| *t);
        now = match (wake, next_end) {
            (Some(w), Some(e)) => w.min(e),
            (Some(w), None) => w,
            (None, Some(e)) => e,
            (None, None) => break,
        };
        while let Some(&Reverse((t, idx, core))) = running.peek() {
            if t > now {
                break;
            }
            running.pop();
            last = last.max(t);
            d.release(core);
            for r in tracker.complete(idx) {
                d.push_ready(workload.tasks[r].id, r);
            }
        }
    }
    (last - first.unwrap_or(SimTime::ZERO), times)
}
