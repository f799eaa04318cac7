//! Flow-level discrete-event network simulator.
//!
//! Transfers are fluid flows over capacity-constrained links. Rates are
//! piecewise constant: they are recomputed (max-min fair) only when a flow
//! starts or finishes, and only for the connected component of links and
//! flows that the change touches. The clock is an integer count of
//! microseconds, and since rates are in MB/s (decimal) a rate is also a
//! number of bytes per microsecond.
//!
//! Events at the same instant fire in event-id order. Flows, creates and
//! timers draw ids from one counter, so submission order breaks ties.

mod fairshare;
mod gfs;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::ops::{Add, Sub};

use thiserror::Error;

use crate::cluster::{LinkClass, LinkSpec, NodeId, Topology};

pub use fairshare::fair_share_rates;
pub use gfs::GfsModel;

use gfs::{CreateQueue, CreateRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1e6).round().max(0.0) as u64)
    }

    pub fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

impl From<FlowId> for EventId {
    fn from(f: FlowId) -> Self {
        EventId(f.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u32);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown link {0:?}")]
    UnknownLink(LinkId),
    #[error("submission at {at} is before the current time {now}")]
    TimeInPast { at: SimTime, now: SimTime },
    #[error("network has no routing table; use submit_flow_on")]
    NoRouting,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    FlowCompleted { flow: FlowId, src: NodeId, dst: NodeId, bytes: u64, started_at: SimTime },
    CreateCompleted { node: NodeId, directory: String },
    Timer { token: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: SimTime,
    pub id: EventId,
    pub kind: EventKind,
}

/// One row of the optional event log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub time_us: u64,
    pub event_type: &'static str,
    pub flow_id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub bytes: u64,
}

pub const LOG_HEADER: &str = "time_us,event_type,flow_id,src,dst,bytes";

impl LogRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.time_us, self.event_type, self.flow_id, self.src, self.dst, self.bytes
        )
    }
}

#[derive(Debug)]
struct Link {
    spec: LinkSpec,
    flows: Vec<u64>,
}

#[derive(Debug)]
struct Flow {
    src: NodeId,
    dst: NodeId,
    bytes: u64,
    path: Vec<LinkId>,
    remaining: f64,
    rate: f64,
    last_update: u64,
    started_at: SimTime,
    version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    FlowStart,
    CreateStart,
    FlowEnd,
    CreateEnd,
    Timer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Entry {
    time: u64,
    id: u64,
    phase: Phase,
    payload: u64,
}

/// Maps node pairs onto link instances for a [`Topology`].
#[derive(Debug, Clone)]
struct Routing {
    compute_nodes: u32,
    pset_size: u32,
    psets: u32,
    gfs_node: NodeId,
    /// Per compute node: egress, ingress, local.
    node_base: u32,
    /// Per pset: tree up, tree down.
    tree_base: u32,
    gfs_link: LinkId,
}

impl Routing {
    fn egress(&self, n: NodeId) -> LinkId {
        LinkId(self.node_base + 3 * n.0)
    }
    fn ingress(&self, n: NodeId) -> LinkId {
        LinkId(self.node_base + 3 * n.0 + 1)
    }
    fn local(&self, n: NodeId) -> LinkId {
        LinkId(self.node_base + 3 * n.0 + 2)
    }
    fn tree_up(&self, pset: u32) -> LinkId {
        LinkId(self.tree_base + 2 * pset)
    }
    fn tree_down(&self, pset: u32) -> LinkId {
        LinkId(self.tree_base + 2 * pset + 1)
    }

    fn route(&self, src: NodeId, dst: NodeId) -> Result<Vec<LinkId>, NetError> {
        #[derive(Clone, Copy)]
        enum End {
            Compute(u32),
            Io,
            Gfs,
        }
        let classify = |n: NodeId| {
            if n.0 < self.compute_nodes {
                Ok(End::Compute(n.0 / self.pset_size))
            } else if n.0 < self.compute_nodes + self.psets {
                Ok(End::Io)
            } else if n == self.gfs_node {
                Ok(End::Gfs)
            } else {
                Err(NetError::UnknownNode(n))
            }
        };
        let (a, b) = (classify(src)?, classify(dst)?);
        Ok(match (a, b) {
            (End::Compute(_), End::Compute(_)) if src == dst => vec![self.local(src)],
            (End::Compute(_), End::Compute(_)) => vec![self.egress(src), self.ingress(dst)],
            (End::Compute(p), End::Gfs) => vec![self.tree_up(p), self.gfs_link],
            (End::Gfs, End::Compute(p)) => vec![self.gfs_link, self.tree_down(p)],
            (End::Compute(p), End::Io) => vec![self.tree_up(p)],
            (End::Io, End::Compute(p)) => vec![self.tree_down(p)],
            (End::Io, End::Gfs) | (End::Gfs, End::Io) => vec![self.gfs_link],
            (End::Io, End::Io) | (End::Gfs, End::Gfs) => Vec::new(),
        })
    }
}

/// A simulation instance. Single-threaded; may be moved between threads.
pub struct Network {
    now: u64,
    next_id: u64,
    links: Vec<Link>,
    flows: HashMap<u64, Flow>,
    deferred_flows: HashMap<u64, Flow>,
    heap: BinaryHeap<Reverse<Entry>>,
    dirty: Vec<LinkId>,
    dirty_mark: Vec<bool>,
    routing: Option<Routing>,
    gfs: GfsModel,
    creates: CreateQueue,
    deferred_creates: HashMap<u64, CreateRequest>,
    log: Option<Vec<LogRecord>>,
    bytes_by_class: BTreeMap<LinkClass, u64>,
    flows_completed: u64,
}

impl fmt::Debug for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network")
            .field("now", &self.now)
            .field("links", &self.links.len())
            .field("active_flows", &self.flows.len())
            .finish()
    }
}

impl Network {
    /// An empty network with no links and no routing table.
    pub fn new(gfs: GfsModel) -> Self {
        Network {
            now: 0,
            next_id: 0,
            links: Vec::new(),
            flows: HashMap::new(),
            deferred_flows: HashMap::new(),
            heap: BinaryHeap::new(),
            dirty: Vec::new(),
            dirty_mark: Vec::new(),
            routing: None,
            gfs,
            creates: CreateQueue::default(),
            deferred_creates: HashMap::new(),
            log: None,
            bytes_by_class: BTreeMap::new(),
            flows_completed: 0,
        }
    }

    /// Builds one link instance per node direction, per pset tree direction,
    /// and the shared GFS pool, with routing between them.
    pub fn for_topology(topology: &Topology) -> Self {
        let profile = topology.profile();
        let mut net = Network::new(GfsModel::from_profile(profile));
        let n = topology.compute_nodes();
        let psets = topology.pset_count();
        let node_base = 0;
        for _ in 0..n {
            net.add_link(profile.link(LinkClass::Torus));
            net.add_link(profile.link(LinkClass::Torus));
            net.add_link(profile.link(LinkClass::NodeLocal));
        }
        let tree_base = net.links.len() as u32;
        for _ in 0..psets {
            net.add_link(profile.link(LinkClass::CollectiveTree));
            net.add_link(profile.link(LinkClass::CollectiveTree));
        }
        let gfs_link = net.add_link(profile.link(LinkClass::GfsUplink));
        net.routing = Some(Routing {
            compute_nodes: n,
            pset_size: topology.pset_size(),
            psets,
            gfs_node: topology.gfs_node(),
            node_base,
            tree_base,
            gfs_link,
        });
        net
    }

    pub fn add_link(&mut self, spec: LinkSpec) -> LinkId {
        assert!(spec.capacity > 0.0, "link capacity must be positive");
        self.links.push(Link { spec, flows: Vec::new() });
        self.dirty_mark.push(false);
        LinkId(self.links.len() as u32 - 1)
    }

    pub fn link_spec(&self, link: LinkId) -> Option<LinkSpec> {
        self.links.get(link.0 as usize).map(|l| l.spec)
    }

    pub fn gfs_model(&self) -> &GfsModel {
        &self.gfs
    }

    pub fn now(&self) -> SimTime {
        SimTime(self.now)
    }

    pub fn enable_log(&mut self) {
        if self.log.is_none() {
            self.log = Some(Vec::new());
        }
    }

    pub fn log(&self) -> &[LogRecord] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn take_log(&mut self) -> Vec<LogRecord> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn bytes_by_class(&self) -> &BTreeMap<LinkClass, u64> {
        &self.bytes_by_class
    }

    pub fn active_flow_count(&self) -> usize {
        self.flows.len()
    }

    pub fn flows_completed(&self) -> u64 {
        self.flows_completed
    }

    /// Current rate of an active flow, MB/s. Settles pending rate changes.
    pub fn flow_rate(&mut self, flow: FlowId) -> Option<f64> {
        self.settle();
        self.flows.get(&flow.0).map(|f| f.rate)
    }

    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<Vec<LinkId>, NetError> {
        self.routing.as_ref().ok_or(NetError::NoRouting)?.route(src, dst)
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn check_time(&self, at: SimTime) -> Result<(), NetError> {
        if at.0 < self.now {
            Err(NetError::TimeInPast { at, now: SimTime(self.now) })
        } else {
            Ok(())
        }
    }

    fn push(&mut self, time: u64, id: u64, phase: Phase, payload: u64) {
        self.heap.push(Reverse(Entry { time, id, phase, payload }));
    }

    /// Submits a transfer routed through the topology.
    pub fn submit_flow(
        &mut self,
        src: NodeId,
        dst: NodeId,
        bytes: u64,
        at: SimTime,
    ) -> Result<FlowId, NetError> {
        let path = self.route(src, dst)?;
        self.submit_flow_on(src, dst, bytes, at, path)
    }

    /// Submits a transfer over an explicit list of links.
    pub fn submit_flow_on(
        &mut self,
        src: NodeId,
        dst: NodeId,
        bytes: u64,
        at: SimTime,
        path: Vec<LinkId>,
    ) -> Result<FlowId, NetError> {
        self.check_time(at)?;
        if let Some(bad) = path.iter().find(|l| l.0 as usize >= self.links.len()) {
            return Err(NetError::UnknownLink(*bad));
        }
        let id = self.fresh_id();
        let flow = Flow {
            src,
            dst,
            bytes,
            path,
            remaining: bytes as f64,
            rate: 0.0,
            last_update: at.0,
            started_at: at,
            version: 0,
        };
        self.deferred_flows.insert(id, flow);
        if at.0 == self.now {
            self.start_flow(id);
        } else {
            self.push(at.0, id, Phase::FlowStart, 0);
        }
        Ok(FlowId(id))
    }

    fn start_flow(&mut self, id: u64) {
        let flow = self.deferred_flows.remove(&id).expect("deferred flow exists");
        if let Some(log) = self.log.as_mut() {
            log.push(LogRecord {
                time_us: self.now,
                event_type: "flow_start",
                flow_id: id,
                src: flow.src,
                dst: flow.dst,
                bytes: flow.bytes,
            });
        }
        if flow.bytes == 0 || flow.path.is_empty() {
            self.push(self.now, id, Phase::FlowEnd, 0);
            self.flows.insert(id, flow);
            return;
        }
        for &l in &flow.path {
            self.links[l.0 as usize].flows.push(id);
            self.mark_dirty(l);
        }
        self.flows.insert(id, flow);
    }

    fn mark_dirty(&mut self, link: LinkId) {
        let i = link.0 as usize;
        if !self.dirty_mark[i] {
            self.dirty_mark[i] = true;
            self.dirty.push(link);
        }
    }

    /// Schedules a GFS file creation in `directory`.
    pub fn submit_gfs_create(&mut self, node: NodeId, directory: &str, at: SimTime) -> Result<EventId, NetError> {
        self.check_time(at)?;
        let id = self.fresh_id();
        let req = CreateRequest { node, directory: directory.to_string() };
        if at.0 == self.now {
            self.admit_create(id, req);
        } else {
            self.deferred_creates.insert(id, req);
            self.push(at.0, id, Phase::CreateStart, 0);
        }
        Ok(EventId(id))
    }

    fn admit_create(&mut self, id: u64, req: CreateRequest) {
        self.creates.requests.insert(id, req);
        let started = self.creates.admit(&self.gfs, id);
        self.start_creates(started);
    }

    fn start_creates(&mut self, ids: Vec<u64>) {
        let load = self.creates.in_service() as u64;
        let done = self.now + self.gfs.create_latency.0 + self.gfs.create_contention.0 * load;
        for id in ids {
            self.push(done, id, Phase::CreateEnd, 0);
        }
    }

    pub fn creates_in_service(&self) -> u32 {
        self.creates.in_service()
    }

    /// Schedules a timer that fires at `at` carrying `token`.
    pub fn schedule_timer(&mut self, at: SimTime, token: u64) -> Result<EventId, NetError> {
        self.check_time(at)?;
        let id = self.fresh_id();
        self.push(at.0, id, Phase::Timer, token);
        Ok(EventId(id))
    }

    /// Time of the next pending event, after applying any pending rate changes.
    pub fn next_event_time(&mut self) -> Option<SimTime> {
        self.settle();
        loop {
            let Reverse(top) = *self.heap.peek()?;
            if top.phase == Phase::FlowEnd && self.is_stale(&top) {
                self.heap.pop();
                continue;
            }
            return Some(SimTime(top.time));
        }
    }

    fn is_stale(&self, e: &Entry) -> bool {
        self.flows.get(&e.id).is_none_or(|f| f.version as u64 != e.payload)
    }

    /// Fires the events of the next instant.
    pub fn step(&mut self) -> Vec<SimEvent> {
        match self.next_event_time() {
            Some(t) => self.advance_to(t),
            None => Vec::new(),
        }
    }

    /// Fires every event with time ≤ `t` in (time, id) order and moves the
    /// clock to `t`.
    pub fn advance_to(&mut self, t: SimTime) -> Vec<SimEvent> {
        assert!(t.0 >= self.now, "advance_to into the past");
        let mut out = Vec::new();
        self.settle();
        while let Some(&Reverse(top)) = self.heap.peek() {
            if top.time > t.0 {
                break;
            }
            // Finish everything at this instant, then recompute rates once.
            let instant = top.time;
            self.now = instant;
            while let Some(&Reverse(e)) = self.heap.peek() {
                if e.time != instant {
                    break;
                }
                self.heap.pop();
                self.fire(e, &mut out);
            }
            self.settle();
        }
        self.now = t.0;
        out
    }

    fn fire(&mut self, e: Entry, out: &mut Vec<SimEvent>) {
        match e.phase {
            Phase::FlowStart => self.start_flow(e.id),
            Phase::CreateStart => {
                let req = self.deferred_creates.remove(&e.id).expect("deferred create exists");
                self.admit_create(e.id, req);
            }
            Phase::FlowEnd => {
                if self.is_stale(&e) {
                    return;
                }
                let flow = self.flows.remove(&e.id).expect("flow exists");
                for &l in &flow.path {
                    let link = &mut self.links[l.0 as usize];
                    if let Some(pos) = link.flows.iter().position(|&f| f == e.id) {
                        link.flows.swap_remove(pos);
                    }
                    *self.bytes_by_class.entry(link.spec.class).or_default() += flow.bytes;
                    self.mark_dirty(l);
                }
                self.flows_completed += 1;
                if let Some(log) = self.log.as_mut() {
                    log.push(LogRecord {
                        time_us: self.now,
                        event_type: "flow_end",
                        flow_id: e.id,
                        src: flow.src,
                        dst: flow.dst,
                        bytes: flow.bytes,
                    });
                }
                out.push(SimEvent {
                    time: SimTime(self.now),
                    id: EventId(e.id),
                    kind: EventKind::FlowCompleted {
                        flow: FlowId(e.id),
                        src: flow.src,
                        dst: flow.dst,
                        bytes: flow.bytes,
                        started_at: flow.started_at,
                    },
                });
            }
            Phase::CreateEnd => {
                let (req, started) = self.creates.complete(&self.gfs, e.id);
                self.start_creates(started);
                if let Some(log) = self.log.as_mut() {
                    let gfs = self.routing.as_ref().map_or(NodeId(u32::MAX), |r| r.gfs_node);
                    log.push(LogRecord {
                        time_us: self.now,
                        event_type: "gfs_create",
                        flow_id: e.id,
                        src: req.node,
                        dst: gfs,
                        bytes: 0,
                    });
                }
                out.push(SimEvent {
                    time: SimTime(self.now),
                    id: EventId(e.id),
                    kind: EventKind::CreateCompleted { node: req.node, directory: req.directory },
                });
            }
            Phase::Timer => out.push(SimEvent {
                time: SimTime(self.now),
                id: EventId(e.id),
                kind: EventKind::Timer { token: e.payload },
            }),
        }
    }

    /// Recomputes rates for every component touched since the last call.
    fn settle(&mut self) {
        while let Some(seed) = self.dirty.pop() {
            if !self.dirty_mark[seed.0 as usize] {
                continue;
            }
            let (links, flows) = self.component(seed);
            for &l in &links {
                self.dirty_mark[l.0 as usize] = false;
            }
            if !flows.is_empty() {
                self.reallocate(&links, &flows);
            }
        }
    }

    /// Links and flows reachable from `seed` through shared flows.
    fn component(&self, seed: LinkId) -> (Vec<LinkId>, Vec<u64>) {
        let mut links = vec![seed];
        let mut seen_links = std::collections::HashSet::new();
        seen_links.insert(seed);
        let mut flows = Vec::new();
        let mut seen_flows = std::collections::HashSet::new();
        let mut i = 0;
        while i < links.len() {
            let l = links[i];
            i += 1;
            for &f in &self.links[l.0 as usize].flows {
                if seen_flows.insert(f) {
                    flows.push(f);
                    for &m in &self.flows[&f].path {
                        if seen_links.insert(m) {
                            links.push(m);
                        }
                    }
                }
            }
        }
        flows.sort_unstable();
        (links, flows)
    }

    fn reallocate(&mut self, links: &[LinkId], flows: &[u64]) {
        let now = self.now;
        let local: HashMap<LinkId, usize> = links.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        let capacities: Vec<f64> = links.iter().map(|l| self.links[l.0 as usize].spec.capacity).collect();
        let paths: Vec<Vec<usize>> = flows
            .iter()
            .map(|f| self.flows[f].path.iter().map(|l| local[l]).collect())
            .collect();
        let rates = fair_share_rates(&capacities, &paths);

        let mut load = vec![0.0f64; links.len()];
        for (path, r) in paths.iter().zip(&rates) {
            for &l in path {
                load[l] += r;
            }
        }
        for (l, cap) in capacities.iter().enumerate() {
            assert!(load[l] <= cap * (1.0 + 1e-9) + 1e-9, "link over capacity: {} > {}", load[l], cap);
        }

        let mut pushes = Vec::with_capacity(flows.len());
        for (&id, &rate) in flows.iter().zip(&rates) {
            let flow = self.flows.get_mut(&id).expect("component flow exists");
            let elapsed = (now - flow.last_update) as f64;
            flow.remaining = (flow.remaining - flow.rate * elapsed).max(0.0);
            flow.last_update = now;
            flow.rate = rate.max(f64::MIN_POSITIVE);
            flow.version += 1;
            let finish = if flow.remaining <= 1e-6 {
                now
            } else {
                now + (flow.remaining / flow.rate).ceil() as u64
            };
            pushes.push((finish, id, flow.version));
        }
        for (finish, id, version) in pushes {
            self.push(finish, id, Phase::FlowEnd, version as u64);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{build_topology, TopologyConfig, MB};

    fn single_link(cap: f64) -> (Network, LinkId) {
        let mut net = Network::new(GfsModel {
            aggregate_capacity: 1000.0,
            create_latency: SimTime::from_millis(50),
            create_contention: SimTime::ZERO,
            create_slots: None,
            same_dir_serialize: true,
        });
        let l = net.add_link(LinkSpec { class: LinkClass::Torus, capacity: cap });
        (net, l)
    }

    fn drain(net: &mut Network) -> Vec<SimEvent> {
        let mut all = Vec::new();
        while let Some(t) = net.next_event_time() {
            all.extend(net.advance_to(t));
        }
        all
    }

    #[test]
    fn single_flow_time() {
        let (mut net, l) = single_link(425.0);
        net.submit_flow_on(NodeId(0), NodeId(1), 100 * MB, SimTime::ZERO, vec![l]).unwrap();
        let ev = drain(&mut net);
        assert_eq!(ev.len(), 1);
        // 100e6 / 425 = 235294.1 us
        assert_eq!(ev[0].time, SimTime(235_295));
    }

    #[test]
    fn zero_byte_flow_completes_immediately() {
        let (mut net, l) = single_link(425.0);
        net.advance_to(SimTime(10));
        net.submit_flow_on(NodeId(0), NodeId(1), 0, SimTime(10), vec![l]).unwrap();
        let ev = drain(&mut net);
        assert_eq!(ev[0].time, SimTime(10));
    }

    #[test]
    fn equal_flows_share() {
        let (mut net, l) = single_link(425.0);
        let a = net.submit_flow_on(NodeId(0), NodeId(1), MB, SimTime::ZERO, vec![l]).unwrap();
        let b = net.submit_flow_on(NodeId(2), NodeId(1), MB, SimTime::ZERO, vec![l]).unwrap();
        assert_eq!(net.flow_rate(a), Some(212.5));
        assert_eq!(net.flow_rate(b), Some(212.5));
        let ev = drain(&mut net);
        assert_eq!(ev[0].time, ev[1].time);
        assert!(ev[0].id < ev[1].id);
    }

    #[test]
    fn departing_flow_frees_bandwidth() {
        let (mut net, l) = single_link(100.0);
        net.submit_flow_on(NodeId(0), NodeId(1), 100, SimTime::ZERO, vec![l]).unwrap();
        net.submit_flow_on(NodeId(0), NodeId(1), 300, SimTime::ZERO, vec![l]).unwrap();
        let ev = drain(&mut net);
        // both at 50 B/us until t=2, then the second alone at 100 B/us for 200 B
        assert_eq!(ev[0].time, SimTime(2));
        assert_eq!(ev[1].time, SimTime(4));
    }

    #[test]
    fn deferred_flow_and_past_submission() {
        let (mut net, l) = single_link(100.0);
        net.submit_flow_on(NodeId(0), NodeId(1), 100, SimTime(5), vec![l]).unwrap();
        let ev = drain(&mut net);
        assert_eq!(ev[0].time, SimTime(6));
        assert!(matches!(
            net.submit_flow_on(NodeId(0), NodeId(1), 1, SimTime(1), vec![l]),
            Err(NetError::TimeInPast { .. })
        ));
    }

    #[test]
    fn creates_same_directory_serialize() {
        let (mut net, _) = single_link(1.0);
        for _ in 0..10 {
            net.submit_gfs_create(NodeId(0), "/out", SimTime::ZERO).unwrap();
        }
        let ev = drain(&mut net);
        assert_eq!(ev.len(), 10);
        assert_eq!(ev.last().unwrap().time, SimTime::from_millis(500));
    }

    #[test]
    fn creates_distinct_directories_parallel() {
        let (mut net, _) = single_link(1.0);
        for i in 0..10 {
            net.submit_gfs_create(NodeId(i), &format!("/out/node-{i}"), SimTime::ZERO).unwrap();
        }
        let ev = drain(&mut net);
        assert!(ev.iter().all(|e| e.time == SimTime::from_millis(50)));
    }

    #[test]
    fn single_create_latency() {
        let (mut net, _) = single_link(1.0);
        net.submit_gfs_create(NodeId(0), "/d", SimTime::ZERO).unwrap();
        assert_eq!(drain(&mut net)[0].time, SimTime::from_millis(50));
    }

    #[test]
    fn create_slots_bound_concurrency() {
        let mut net = Network::new(GfsModel {
            aggregate_capacity: 1.0,
            create_latency: SimTime::from_millis(10),
            create_contention: SimTime::ZERO,
            create_slots: Some(2),
            same_dir_serialize: false,
        });
        for i in 0..5 {
            net.submit_gfs_create(NodeId(i), "/same", SimTime::ZERO).unwrap();
        }
        let times: Vec<u64> = drain(&mut net).iter().map(|e| e.time.0 / 1000).collect();
        assert_eq!(times, vec![10, 10, 20, 20, 30]);
    }

    #[test]
    fn no_pending_events() {
        let (mut net, _) = single_link(1.0);
        assert!(net.advance_to(SimTime(100)).is_empty());
        assert_eq!(net.now(), SimTime(100));
    }

    #[test]
    fn timers_fire_in_order() {
        let (mut net, _) = single_link(1.0);
        net.schedule_timer(SimTime(20), 2).unwrap();
        net.schedule_timer(SimTime(10), 1).unwrap();
        net.schedule_timer(SimTime(20), 3).unwrap();
        let tokens: Vec<u64> = drain(&mut net)
            .into_iter()
            .map(|e| match e.kind {
                EventKind::Timer { token } => token,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(tokens, vec![1, 2, 3]);
    }

    #[test]
    fn topology_routes() {
        let topo = build_topology(&TopologyConfig::new(128, 64, 1)).unwrap();
        let net = Network::for_topology(&topo);
        let gfs = topo.gfs_node();
        let up = net.route(NodeId(70), gfs).unwrap();
        assert_eq!(net.link_spec(up[0]).unwrap().class, LinkClass::CollectiveTree);
        assert_eq!(net.link_spec(up[1]).unwrap().class, LinkClass::GfsUplink);
        let p2p = net.route(NodeId(1), NodeId(0)).unwrap();
        assert!(p2p.iter().all(|l| net.link_spec(*l).unwrap().class == LinkClass::Torus));
        assert_eq!(net.route(NodeId(3), NodeId(3)).unwrap().len(), 1);
        assert!(matches!(net.route(NodeId(999), gfs), Err(NetError::UnknownNode(_))));
    }

    #[test]
    fn gfs_cap_is_shared_across_psets() {
        let topo = build_topology(&TopologyConfig::new(4096, 64, 0)).unwrap();
        let mut net = Network::for_topology(&topo);
        let ids: Vec<FlowId> = (0..4096)
            .map(|n| net.submit_flow(topo.gfs_node(), NodeId(n), MB, SimTime::ZERO).unwrap())
            .collect();
        let r = net.flow_rate(ids[0]).unwrap();
        assert!((r - 2400.0 / 4096.0).abs() < 1e-9);
    }

    #[test]
    fn log_records_flows() {
        let (mut net, l) = single_link(10.0);
        net.enable_log();
        net.submit_flow_on(NodeId(0), NodeId(1), 10, SimTime::ZERO, vec![l]).unwrap();
        drain(&mut net);
        let types: Vec<&str> = net.log().iter().map(|r| r.event_type).collect();
        assert_eq!(types, vec!["flow_start", "flow_end"]);
        assert_eq!(net.log()[1].csv_row(), "1,flow_end,0,0,1,10");
    }
}
