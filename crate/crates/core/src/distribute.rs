//! Input distribution: access classification, placement planning,
//! spanning-tree broadcast schedules and their execution.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{NodeId, Topology, MB};
use crate::simnet::{EventKind, FlowId, NetError, Network, SimTime};
use crate::store::{ClusterStores, Content, Store, StoreError, Tier};
use crate::workload::Workload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AccessClass {
    ReadMany,
    ReadFew,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub class: AccessClass,
    pub readers: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementPolicy {
    /// Objects up to this size are staged on the reader's LFS.
    pub lfs_max_bytes: u64,
    pub read_many_threshold: u32,
    /// Broadcast read-many objects to every executor's LFS instead of the
    /// IFS servers.
    pub broadcast_to_lfs: bool,
}

impl Default for PlacementPolicy {
    fn default() -> Self {
        PlacementPolicy { lfs_max_bytes: 256 * MB, read_many_threshold: 2, broadcast_to_lfs: false }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("object {object} ({size} bytes) does not fit an IFS of {capacity} bytes")]
    Unplaceable { object: String, size: u64, capacity: u64 },
    #[error("object {0} exceeds the LFS limit but the topology has no IFS servers")]
    NoIfs(String),
    #[error("broadcast needs at least one destination")]
    EmptyDestinations,
    #[error("broadcast source {0} is also a destination")]
    SourceIsDestination(NodeId),
    #[error("distribution took no time")]
    ZeroElapsed,
    #[error("no reader nodes given for {0}")]
    MissingReaders(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Number of distinct tasks reading each object, classified by `threshold`.
/// Objects in the manifest that nobody reads are included with count 0.
pub fn classify_access(workload: &Workload, threshold: u32) -> BTreeMap<String, Access> {
    let mut counts: BTreeMap<String, u32> = workload.manifest.keys().map(|k| (k.clone(), 0)).collect();
    for t in &workload.tasks {
        let distinct: BTreeSet<&String> = t.inputs.iter().collect();
        for i in distinct {
            *counts.entry(i.clone()).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(name, readers)| {
            let class = if readers >= threshold { AccessClass::ReadMany } else { AccessClass::ReadFew };
            (name, Access { class, readers })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Broadcast,
    DirectRead,
    StageOnce,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Broadcast => "broadcast",
            Method::DirectRead => "direct-read",
            Method::StageOnce => "stage-once",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    /// The LFS of whichever node runs each reader.
    ReaderLfs,
    /// The IFS serving whichever node runs each reader.
    ReaderIfs,
    /// A fixed node set.
    Nodes(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub object: String,
    pub size: u64,
    pub access: Access,
    pub tier: Tier,
    pub target: Target,
    pub method: Method,
}

/// Placement of every GFS-resident input (manifest objects with at least
/// one reader). Intermediate objects follow the output path instead.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlacementPlan {
    pub placements: Vec<Placement>,
}

impl PlacementPlan {
    pub fn get(&self, object: &str) -> Option<&Placement> {
        self.placements.iter().find(|p| p.object == object)
    }

    pub fn broadcasts(&self) -> impl Iterator<Item = &Placement> {
        self.placements.iter().filter(|p| p.method == Method::Broadcast)
    }

    /// One line per placement, for comparing plans.
    pub fn describe(&self) -> Vec<String> {
        self.placements
            .iter()
            .map(|p| {
                let target = match &p.target {
                    Target::ReaderLfs => "reader-lfs".to_string(),
                    Target::ReaderIfs => "reader-ifs".to_string(),
                    Target::Nodes(n) => n.iter().map(|x| x.0.to_string()).collect::<Vec<_>>().join(" "),
                };
                format!("{} {} {} {} [{}]", p.object, p.size, p.tier, p.method.as_str(), target)
            })
            .collect()
    }
}

/// Small objects go to the reader's LFS, large read-few objects to the
/// reader's IFS, and large read-many objects are broadcast to the IFS
/// servers of the executors that may run their readers.
pub fn plan_placement(
    workload: &Workload,
    topology: &Topology,
    policy: &PlacementPolicy,
) -> Result<PlacementPlan, DistError> {
    let access = classify_access(workload, policy.read_many_threshold);
    let ifs_cap = topology.profile().ifs_capacity;
    let mut plan = PlacementPlan::default();
    for (object, &size) in &workload.manifest {
        let acc = access[object];
        if acc.readers == 0 {
            continue;
        }
        let placement = if size <= policy.lfs_max_bytes && !(policy.broadcast_to_lfs && acc.class == AccessClass::ReadMany) {
            Placement {
                object: object.clone(),
                size,
                access: acc,
                tier: Tier::Lfs,
                target: Target::ReaderLfs,
                method: Method::DirectRead,
            }
        } else if policy.broadcast_to_lfs && acc.class == AccessClass::ReadMany {
            Placement {
                object: object.clone(),
                size,
                access: acc,
                tier: Tier::Lfs,
                target: Target::Nodes(reader_nodes(workload, object, topology)),
                method: Method::Broadcast,
            }
        } else {
            if !topology.has_ifs() {
                return Err(DistError::NoIfs(object.clone()));
            }
            if size > ifs_cap {
                return Err(DistError::Unplaceable { object: object.clone(), size, capacity: ifs_cap });
            }
            match acc.class {
                AccessClass::ReadFew => Placement {
                    object: object.clone(),
                    size,
                    access: acc,
                    tier: Tier::Ifs,
                    target: Target::ReaderIfs,
                    method: Method::StageOnce,
                },
                AccessClass::ReadMany => {
                    let nodes = reader_nodes(workload, object, topology);
                    let servers: BTreeSet<NodeId> =
                        nodes.iter().filter_map(|&n| topology.ifs_server_for(n).ok()).collect();
                    Placement {
                        object: object.clone(),
                        size,
                        access: acc,
                        tier: Tier::Ifs,
                        target: Target::Nodes(servers.into_iter().collect()),
                        method: Method::Broadcast,
                    }
                }
            }
        };
        plan.placements.push(placement);
    }
    Ok(plan)
}

/// Executors that may run a reader of `object`: the pinned nodes when every
/// reader is pinned, otherwise all executors.
fn reader_nodes(workload: &Workload, object: &str, topology: &Topology) -> Vec<NodeId> {
    let readers: Vec<_> = workload.tasks.iter().filter(|t| t.inputs.iter().any(|i| i == object)).collect();
    if readers.iter().all(|t| t.pin.is_some()) {
        let pins: BTreeSet<NodeId> = readers.iter().filter_map(|t| t.pin).collect();
        pins.into_iter().collect()
    } else {
        topology.executors().to_vec()
    }
}

/// Replication schedule: in each round every holder sends to one new node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BroadcastSchedule {
    pub src: NodeId,
    pub rounds: Vec<Vec<(NodeId, NodeId)>>,
    pub n: usize,
}

impl BroadcastSchedule {
    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }

    pub fn transfers(&self) -> usize {
        self.rounds.iter().map(Vec::len).sum()
    }
}

/// Doubling schedule: holders sorted by id serve the lowest pending
/// receivers, one each per round.
pub fn spanning_tree_schedule(src: NodeId, dests: &[NodeId]) -> Result<BroadcastSchedule, DistError> {
    let pending: BTreeSet<NodeId> = dests.iter().copied().collect();
    if pending.is_empty() {
        return Err(DistError::EmptyDestinations);
    }
    if pending.contains(&src) {
        return Err(DistError::SourceIsDestination(src));
    }
    let n = pending.len();
    let mut pending: VecDeque<NodeId> = pending.into_iter().collect();
    let mut holders = vec![src];
    let mut rounds = Vec::new();
    while !pending.is_empty() {
        holders.sort_unstable();
        let mut round = Vec::new();
        for &h in &holders {
            let Some(r) = pending.pop_front() else { break };
            round.push((h, r));
        }
        holders.extend(round.iter().map(|&(_, r)| r));
        rounds.push(round);
    }
    Ok(BroadcastSchedule { src, rounds, n })
}

/// ceil(log2(n + 1)) without floating point.
pub fn doubling_rounds(n: usize) -> usize {
    (usize::BITS - n.leading_zeros()) as usize
}

/// Drives one broadcast over a [`Network`]: a single GFS read into the
/// source, then the schedule's copies. Each holder sends its copies one at
/// a time in round order, starting as soon as it holds the object.
#[derive(Debug)]
pub struct BroadcastExec {
    pub object: String,
    pub size: u64,
    gfs: NodeId,
    src: NodeId,
    sends: HashMap<NodeId, VecDeque<NodeId>>,
    flows: HashMap<FlowId, (NodeId, NodeId)>,
    delivered: Vec<NodeId>,
    expected: usize,
    pub started_at: SimTime,
    pub finished_at: Option<SimTime>,
    pub gfs_reads: u32,
    pub copies: u32,
}

impl BroadcastExec {
    /// Submits the GFS read into `schedule.src` at `at`.
    pub fn start(
        net: &mut Network,
        gfs: NodeId,
        object: &str,
        size: u64,
        schedule: &BroadcastSchedule,
        at: SimTime,
    ) -> Result<Self, DistError> {
        let mut sends: HashMap<NodeId, VecDeque<NodeId>> = HashMap::new();
        for round in &schedule.rounds {
            for &(s, r) in round {
                sends.entry(s).or_default().push_back(r);
            }
        }
        let mut exec = BroadcastExec {
            object: object.to_string(),
            size,
            gfs,
            src: schedule.src,
            sends,
            flows: HashMap::new(),
            delivered: Vec::new(),
            expected: schedule.n + 1,
            started_at: at,
            finished_at: None,
            gfs_reads: 1,
            copies: 0,
        };
        let f = net.submit_flow(gfs, schedule.src, size, at)?;
        exec.flows.insert(f, (gfs, schedule.src));
        Ok(exec)
    }

    pub fn owns(&self, flow: FlowId) -> bool {
        self.flows.contains_key(&flow)
    }

    /// Handles completion of one of this broadcast's flows. Returns the
    /// node that now holds a copy.
    pub fn on_flow_complete(&mut self, net: &mut Network, flow: FlowId) -> Result<Option<NodeId>, DistError> {
        let Some((from, to)) = self.flows.remove(&flow) else { return Ok(None) };
        let now = net.now();
        self.delivered.push(to);
        if from != self.gfs {
            self.copies += 1;
            self.send_next(net, from, now)?;
        }
        self.send_next(net, to, now)?;
        if self.delivered.len() == self.expected {
            self.finished_at = Some(now);
        }
        Ok(Some(to))
    }

    fn send_next(&mut self, net: &mut Network, holder: NodeId, at: SimTime) -> Result<(), DistError> {
        if let Some(r) = self.sends.get_mut(&holder).and_then(VecDeque::pop_front) {
            let f = net.submit_flow(holder, r, self.size, at)?;
            self.flows.insert(f, (holder, r));
        }
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.finished_at.is_some()
    }

    /// Nodes holding a copy, in delivery order (source first).
    pub fn delivered(&self) -> &[NodeId] {
        &self.delivered
    }

    pub fn source(&self) -> NodeId {
        self.src
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionRow {
    pub object: String,
    pub method: Method,
    pub bytes: u64,
    pub placements: u32,
    pub elapsed_us: u64,
}

impl DistributionRow {
    pub fn equivalent_mbps(&self) -> f64 {
        if self.elapsed_us == 0 {
            0.0
        } else {
            self.bytes as f64 / self.elapsed_us as f64
        }
    }
}

pub const DISTRIBUTION_HEADER: &str = "object,method,bytes,placements,elapsed_us,equivalent_MBps";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistributionReport {
    pub rows: Vec<DistributionRow>,
    pub elapsed_us: u64,
    pub gfs_reads: u32,
    pub copies: u32,
}

impl DistributionReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{DISTRIBUTION_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6}\n",
                r.object,
                r.method.as_str(),
                r.bytes,
                r.placements,
                r.elapsed_us,
                r.equivalent_mbps()
            ));
        }
        out
    }

    pub fn total_bytes(&self) -> u64 {
        self.rows.iter().map(|r| r.bytes).sum()
    }
}

/// Σ(placements × size) / elapsed, in MB/s. Both naive and broadcast runs
/// use this same formula.
pub fn equivalent_throughput(report: &DistributionReport) -> Result<f64, DistError> {
    if report.elapsed_us == 0 {
        return Err(DistError::ZeroElapsed);
    }
    Ok(report.total_bytes() as f64 / report.elapsed_us as f64)
}

/// Stand-alone execution of a plan on an idle network. Reader-relative
/// targets are resolved through `readers` (object -> reader nodes).
/// Broadcast objects start from the lowest target node.
pub fn execute_plan(
    plan: &PlacementPlan,
    topology: &Topology,
    net: &mut Network,
    stores: &ClusterStores,
    readers: &BTreeMap<String, Vec<NodeId>>,
) -> Result<DistributionReport, DistError> {
    let gfs = topology.gfs_node();
    let start = net.now();
    let mut report = DistributionReport::default();
    let mut broadcasts: Vec<(usize, BroadcastExec)> = Vec::new();
    let mut direct: HashMap<FlowId, (usize, NodeId)> = HashMap::new();
    let mut finished: Vec<SimTime> = vec![start; plan.placements.len()];

    for (i, p) in plan.placements.iter().enumerate() {
        let nodes: Vec<NodeId> = match (&p.target, p.method) {
            (Target::Nodes(n), _) => n.clone(),
            (Target::ReaderLfs, _) => readers.get(&p.object).cloned().ok_or_else(|| DistError::MissingReaders(p.object.clone()))?,
            (Target::ReaderIfs, _) => {
                let r = readers.get(&p.object).ok_or_else(|| DistError::MissingReaders(p.object.clone()))?;
                let s: BTreeSet<NodeId> = r.iter().filter_map(|&n| topology.ifs_server_for(n).ok()).collect();
                s.into_iter().collect()
            }
        };
        let nodes: Vec<NodeId> = nodes.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        report.rows.push(DistributionRow {
            object: p.object.clone(),
            method: p.method,
            bytes: p.size * nodes.len() as u64,
            placements: nodes.len() as u32,
            elapsed_us: 0,
        });
        if p.method == Method::Broadcast && nodes.len() > 1 {
            let schedule = spanning_tree_schedule(nodes[0], &nodes[1..])?;
            broadcasts.push((i, BroadcastExec::start(net, gfs, &p.object, p.size, &schedule, start)?));
        } else {
            for &n in &nodes {
                let f = net.submit_flow(gfs, n, p.size, start)?;
                report.gfs_reads += 1;
                direct.insert(f, (i, n));
            }
        }
    }

    while let Some(t) = net.next_event_time() {
        for ev in net.advance_to(t) {
            let EventKind::FlowCompleted { flow, .. } = ev.kind else { continue };
            if let Some((i, node)) = direct.remove(&flow) {
                deliver(stores, &plan.placements[i], node)?;
                finished[i] = finished[i].max(ev.time);
                continue;
            }
            for (i, b) in broadcasts.iter_mut() {
                if b.owns(flow) {
                    if let Some(node) = b.on_flow_complete(net, flow)? {
                        deliver(stores, &plan.placements[*i], node)?;
                    }
                    finished[*i] = finished[*i].max(ev.time);
                    break;
                }
            }
        }
    }
    for (_, b) in &broadcasts {
        report.gfs_reads += b.gfs_reads;
        report.copies += b.copies;
    }
    for (row, end) in report.rows.iter_mut().zip(&finished) {
        row.elapsed_us = (*end - start).0;
    }
    report.elapsed_us = (net.now() - start).0;
    Ok(report)
}

/// Copies the GFS object into the node's store for the placement tier.
fn deliver(stores: &ClusterStores, p: &Placement, node: NodeId) -> Result<(), DistError> {
    let content = stores.gfs.get(&p.object).unwrap_or(Content::Sized(p.size));
    let target: &dyn Store = match p.tier {
        Tier::Ifs => stores.ifs.get(&node).map(|s| s.as_ref()).unwrap_or(stores.lfs(node).as_ref()),
        _ => stores.lfs(node).as_ref(),
    };
    let name = format!("in/{}", p.object);
    if !target.exists(&name) {
        target.put(&name, content)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{build_topology, TopologyConfig, GB, KB};
    use crate::workload::{OutputSpec, TaskSpec};

    fn readers_workload(object: &str, size: u64, readers: u32) -> Workload {
        let mut w = Workload::default();
        w.manifest.insert(object.to_string(), size);
        w.tasks = (0..readers)
            .map(|i| TaskSpec {
                inputs: vec![object.to_string()],
                outputs: vec![OutputSpec::new(format!("o{i}"), 1)],
                ..TaskSpec::new(i, SimTime::from_secs(1))
            })
            .collect();
        w
    }

    #[test]
    fn classification() {
        let w = readers_workload("db", 10, 256);
        assert_eq!(classify_access(&w, 2)["db"], Access { class: AccessClass::ReadMany, readers: 256 });
        let w = readers_workload("db", 10, 1);
        assert_eq!(classify_access(&w, 2)["db"].class, AccessClass::ReadFew);
        let w = readers_workload("db", 10, 0);
        assert_eq!(classify_access(&w, 2)["db"], Access { class: AccessClass::ReadFew, readers: 0 });
    }

    #[test]
    fn plan_rules() {
        let topo = build_topology(&TopologyConfig::new(4096, 64, 1)).unwrap();
        let policy = PlacementPolicy::default();

        let p = plan_placement(&readers_workload("small", KB, 1), &topo, &policy).unwrap();
        assert_eq!((p.placements[0].tier, p.placements[0].target.clone()), (Tier::Lfs, Target::ReaderLfs));

        let mut big_topo_cfg = TopologyConfig::new(4096, 64, 1);
        big_topo_cfg.profile.ifs_capacity = 64 * GB;
        let big = build_topology(&big_topo_cfg).unwrap();
        let p = plan_placement(&readers_workload("huge", 3 * GB, 1), &big, &policy).unwrap();
        assert_eq!(p.placements[0].tier, Tier::Ifs);
        assert_eq!(p.placements[0].target, Target::ReaderIfs);

        let p = plan_placement(&readers_workload("db", 500 * MB, 4096), &topo, &policy).unwrap();
        assert_eq!(p.placements[0].method, Method::Broadcast);
        assert_eq!(p.placements[0].target, Target::Nodes(topo.ifs_servers().to_vec()));
        assert_eq!(topo.ifs_servers().len(), 64);

        assert!(plan_placement(&readers_workload("nobody", 500 * MB, 0), &topo, &policy).unwrap().placements.is_empty());
        assert!(matches!(
            plan_placement(&readers_workload("x", 3 * GB, 1), &topo, &policy),
            Err(DistError::Unplaceable { .. })
        ));
        let no_ifs = build_topology(&TopologyConfig::new(64, 64, 0)).unwrap();
        assert!(matches!(plan_placement(&readers_workload("x", GB, 1), &no_ifs, &policy), Err(DistError::NoIfs(_))));
    }

    #[test]
    fn schedule_sizes() {
        let d = |n: u32| (1..=n).map(NodeId).collect::<Vec<_>>();
        let s = spanning_tree_schedule(NodeId(0), &d(1)).unwrap();
        assert_eq!((s.round_count(), s.transfers()), (1, 1));
        let s = spanning_tree_schedule(NodeId(0), &d(64)).unwrap();
        assert_eq!((s.round_count(), s.transfers()), (7, 64));
        let s = spanning_tree_schedule(NodeId(0), &d(4095)).unwrap();
        assert_eq!(s.round_count(), 12);
        assert!(matches!(spanning_tree_schedule(NodeId(0), &[]), Err(DistError::EmptyDestinations)));
        assert!(matches!(spanning_tree_schedule(NodeId(1), &d(2)), Err(DistError::SourceIsDestination(_))));
        assert_eq!(doubling_rounds(1), 1);
        assert_eq!(doubling_rounds(3), 2);
        assert_eq!(doubling_rounds(4), 3);
    }

    #[test]
    fn lowest_holder_serves_lowest_pending() {
        let s = spanning_tree_schedule(NodeId(10), &[NodeId(3), NodeId(1), NodeId(2)]).unwrap();
        assert_eq!(s.rounds[0], vec![(NodeId(10), NodeId(1))]);
        assert_eq!(s.rounds[1], vec![(NodeId(1), NodeId(2)), (NodeId(10), NodeId(3))]);
    }

    #[test]
    fn throughput_formula() {
        let report = DistributionReport {
            rows: vec![DistributionRow {
                object: "x".into(),
                method: Method::DirectRead,
                bytes: 400 * MB,
                placements: 4,
                elapsed_us: 50_000_000,
            }],
            elapsed_us: 50_000_000,
            ..Default::default()
        };
        assert_eq!(equivalent_throughput(&report).unwrap(), 8.0);
        assert_eq!(equivalent_throughput(&DistributionReport::default()), Err(DistError::ZeroElapsed));
    }

    #[test]
    fn broadcast_execution_places_everywhere() {
        let topo = build_topology(&TopologyConfig::new(512, 64, 1)).unwrap();
        let mut net = Network::for_topology(&topo);
        net.enable_log();
        let stores = ClusterStores::in_memory(&topo, false);
        let bytes = crate::workload::content_for(1, "db", 4096);
        stores.gfs.put("db", bytes.clone().into()).unwrap();
        let plan = plan_placement(&readers_workload("db", 4096, 100), &topo, &PlacementPolicy::default()).unwrap();
        // Force the broadcast path for a small object.
        let mut plan = plan;
        plan.placements[0].method = Method::Broadcast;
        plan.placements[0].tier = Tier::Ifs;
        plan.placements[0].target = Target::Nodes(topo.ifs_servers().to_vec());
        let report = execute_plan(&plan, &topo, &mut net, &stores, &BTreeMap::new()).unwrap();
        assert_eq!(report.gfs_reads, 1);
        assert_eq!(report.copies, 7);
        assert_eq!(report.total_bytes(), 8 * 4096);
        for s in topo.ifs_servers() {
            assert_eq!(stores.ifs(*s).get("in/db").unwrap(), Content::Bytes(bytes.clone()));
        }
        let gfs = topo.gfs_node();
        let from_gfs = net.log().iter().filter(|r| r.event_type == "flow_end" && r.src == gfs).count();
        assert_eq!(from_gfs, 1);
    }
}
