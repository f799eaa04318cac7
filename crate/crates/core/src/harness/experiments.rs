//! Scripted experiments over the simulator: input distribution, striped
//! reads, efficiency and write-throughput sweeps, the docking workflow,
//! and the durability and emulation audits.
//!
//! Numbers produced with the `bgp-2008` profile reproduce trends under
//! fitted constants; they are not predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use super::config::Mode;
use super::metrics::{aggregate_throughput, efficiency, stage_breakdown, RunReport, StageRow};
use super::runner::{run_with, RunError, RunSettings};
use crate::archive::{open_archive, ArchiveError, StoreSource};
use crate::cluster::{CalibrationProfile, NodeId, Topology, TopologyConfig, TopologyError, KB, MB};
use crate::collect::CollectorPolicy;
use crate::distribute::{
    equivalent_throughput, execute_plan, Access, AccessClass, DistError, DistributionReport, Method, Placement,
    PlacementPlan, Target,
};
use crate::simnet::{EventKind, NetError, Network, SimTime};
use crate::store::{stripe_create, ClusterStores, Content, Store, StoreError, Tier};
use crate::workload::{
    content_for, dock_like_workflow, generate_synthetic, DockLayout, DockParams, SyntheticParams, Workload,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("{0}")]
    Check(String),
}

pub type ExpResult<T> = Result<T, ExperimentError>;

/// Dispatch rate used by the sweeps, fitted so 1 MB CIO writes peak near
/// 2 GB/s.
pub const SWEEP_DISPATCH_RATE: f64 = 2000.0;

// ---------------------------------------------------------------- distribution

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionComparison {
    pub nodes: u32,
    pub size: u64,
    pub naive: DistributionReport,
    pub tree: DistributionReport,
}

impl DistributionComparison {
    pub fn naive_mbps(&self) -> f64 {
        equivalent_throughput(&self.naive).unwrap_or(0.0)
    }

    pub fn tree_mbps(&self) -> f64 {
        equivalent_throughput(&self.tree).unwrap_or(0.0)
    }

    pub fn ratio(&self) -> f64 {
        self.tree_mbps() / self.naive_mbps()
    }
}

/// Delivers one `size`-byte object to the LFS of every node, first with
/// every node reading GFS directly, then over a spanning tree.
pub fn distribution_experiment(nodes: u32, size: u64, profile: &CalibrationProfile) -> ExpResult<DistributionComparison> {
    let topo = Topology::build(&TopologyConfig::new(nodes, 64, 0).with_profile(profile.clone()))?;
    let dests = topo.executors().to_vec();
    let run = |method: Method| -> ExpResult<DistributionReport> {
        let placement = Placement {
            object: "dist/object".into(),
            size,
            access: Access { class: AccessClass::ReadMany, readers: dests.len() as u32 },
            tier: Tier::Lfs,
            target: Target::Nodes(dests.clone()),
            method,
        };
        let plan = PlacementPlan { placements: vec![placement] };
        let stores = ClusterStores::in_memory(&topo, true);
        stores.gfs.put("dist/object", Content::Sized(size))?;
        let mut net = Network::for_topology(&topo);
        Ok(execute_plan(&plan, &topo, &mut net, &stores, &BTreeMap::new())?)
    };
    Ok(DistributionComparison { nodes, size, naive: run(Method::DirectRead)?, tree: run(Method::Broadcast)? })
}

// ---------------------------------------------------------------- striping

#[derive(Debug, Clone, PartialEq)]
pub struct StripingPoint {
    pub width: u32,
    pub readers: u32,
    pub bytes: u64,
    pub elapsed_us: u64,
}

impl StripingPoint {
    pub fn mbps(&self) -> f64 {
        self.bytes as f64 / self.elapsed_us.max(1) as f64
    }
}

/// Concurrent readers in the striping experiment. Fitted, not measured.
pub const STRIPE_READERS: u32 = 6;

/// Stripes one object over `width` LFS-backed servers and has `readers`
/// other nodes read all of it at once, every chunk as its own flow.
pub fn striping_point(
    width: u32,
    readers: u32,
    size: u64,
    chunk: u64,
    profile: &CalibrationProfile,
) -> ExpResult<StripingPoint> {
    let topo = Topology::build(&TopologyConfig::new(width + readers, 64, 0).with_profile(profile.clone()))?;
    let stores = ClusterStores::in_memory(&topo, false);
    let nodes = topo.executors();
    let servers: Vec<(NodeId, Arc<dyn Store>)> =
        nodes[..width as usize].iter().map(|&n| (n, Arc::clone(stores.lfs(n)))).collect();
    let striped = stripe_create(servers, chunk)?;
    let data = content_for(0, "stripe/object", size);
    let map = striped.stripe_put("stripe/object", Content::Bytes(data.clone()))?;
    if striped.stripe_get("stripe/object")?.bytes() != Some(&data[..]) {
        return Err(ExperimentError::Check("striped read differs from input".into()));
    }
    let mut net = Network::for_topology(&topo);
    for &r in &nodes[width as usize..] {
        for c in &map.chunks {
            net.submit_flow(c.node, r, c.range.end - c.range.start, SimTime::ZERO)?;
        }
    }
    let mut end = SimTime::ZERO;
    while let Some(t) = net.next_event_time() {
        for ev in net.advance_to(t) {
            if matches!(ev.kind, EventKind::FlowCompleted { .. }) {
                end = end.max(ev.time);
            }
        }
    }
    Ok(StripingPoint { width, readers, bytes: size * readers as u64, elapsed_us: end.0 })
}

pub fn striping_experiment(widths: &[u32], profile: &CalibrationProfile) -> ExpResult<Vec<StripingPoint>> {
    widths.iter().map(|&w| striping_point(w, STRIPE_READERS, 64 * MB, MB, profile)).collect()
}

// ---------------------------------------------------------------- sweeps

/// Topology giving exactly `procs` executor cores. CIO adds one IFS node
/// per pset on top; the last pset may be partial.
pub fn sweep_topology(procs: u32, cores: u32, mode: Mode, profile: &CalibrationProfile) -> TopologyConfig {
    let execs = procs.div_ceil(cores.max(1));
    let (nodes, ifs) = match mode {
        Mode::GfsDirect => (execs, 0),
        Mode::Cio => (execs + execs.div_ceil(63), 1),
    };
    TopologyConfig::new(nodes, 64, ifs).with_cores(cores.max(1)).with_profile(profile.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepParams {
    pub procs: Vec<u32>,
    pub sizes: Vec<u64>,
    pub compute_s: u64,
    /// Tasks per processor, before `max_tasks`.
    pub waves: u32,
    pub max_tasks: u32,
    pub dispatch_rate: f64,
    pub profile: CalibrationProfile,
    pub collector: CollectorPolicy,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            procs: vec![256, 512, 1024, 2048, 4096, 8192, 16384, 32768],
            sizes: vec![KB, 16 * KB, 128 * KB, MB],
            compute_s: 4,
            waves: 16,
            max_tasks: 131_072,
            dispatch_rate: SWEEP_DISPATCH_RATE,
            profile: CalibrationProfile::bgp_2008(),
            collector: CollectorPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub mode: Mode,
    pub procs: u32,
    pub output_size: u64,
    pub tasks: u32,
    pub ideal_us: u64,
    pub makespan_us: u64,
    pub efficiency: f64,
    pub aggregate_mbps: f64,
}

impl SweepPoint {
    /// Write throughput of the zero-IO schedule.
    pub fn ideal_mbps(&self) -> f64 {
        self.output_size as f64 * self.tasks as f64 / self.ideal_us.max(1) as f64
    }
}

pub fn sweep_point(mode: Mode, procs: u32, size: u64, p: &SweepParams) -> ExpResult<SweepPoint> {
    let topo = Topology::build(&sweep_topology(procs, 1, mode, &p.profile))?;
    let tasks = procs.saturating_mul(p.waves).min(p.max_tasks).max(1);
    let w = generate_synthetic(&SyntheticParams::new(tasks, p.compute_s, size));
    let settings = RunSettings {
        mode,
        dispatch_rate: p.dispatch_rate,
        collector: p.collector.clone(),
        ..Default::default()
    };
    let report = run_with(&topo, &w, &ClusterStores::in_memory(&topo, true), &settings)?;
    Ok(SweepPoint {
        mode,
        procs,
        output_size: size,
        tasks,
        ideal_us: report.ideal_makespan_us,
        makespan_us: report.makespan_us(),
        efficiency: efficiency(&report).unwrap_or(0.0),
        aggregate_mbps: aggregate_throughput(&report),
    })
}

/// Every (mode, size, procs) point of `p`.
pub fn efficiency_sweep(p: &SweepParams) -> ExpResult<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for mode in [Mode::Cio, Mode::GfsDirect] {
        for &size in &p.sizes {
            for &procs in &p.procs {
                out.push(sweep_point(mode, procs, size, p)?);
            }
        }
    }
    Ok(out)
}

pub const SWEEP_HEADER: &str = "mode,procs,output_size,tasks,ideal_us,makespan_us,efficiency,aggregate_MBps";

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.3}\n",
            p.mode.as_str(),
            p.procs,
            p.output_size,
            p.tasks,
            p.ideal_us,
            p.makespan_us,
            p.efficiency,
            p.aggregate_mbps
        ));
    }
    s
}

// ---------------------------------------------------------------- docking

#[derive(Debug, Clone, PartialEq)]
pub struct DockRun {
    pub mode: Mode,
    pub makespan_us: u64,
    pub stages: Vec<StageRow>,
}

impl DockRun {
    pub fn stage_s(&self, stage: u32) -> f64 {
        self.stages.iter().find(|r| r.stage == stage).map_or(0.0, |r| r.elapsed_us as f64 / 1e6)
    }

    pub fn total_s(&self) -> f64 {
        self.makespan_us as f64 / 1e6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DockComparison {
    pub gfs: DockRun,
    pub cio: DockRun,
}

impl DockComparison {
    pub fn speedup(&self, stage: u32) -> f64 {
        self.gfs.stage_s(stage) / self.cio.stage_s(stage)
    }
}

/// Stage-1 task count that makes the single stage-2 GFS task take about
/// 694 s with the default cost constants.
pub const DOCK_STAGE1_TASKS: u32 = 15_360;

/// Runs the docking workflow in both modes on `nodes` compute nodes.
pub fn dock_experiment(nodes: u32, n_stage1: u32, params: &DockParams) -> ExpResult<DockComparison> {
    let profile = CalibrationProfile::bgp_2008();
    let run = |mode: Mode| -> ExpResult<DockRun> {
        let (ifs, layout) = match mode {
            Mode::GfsDirect => (0, DockLayout::Gfs),
            Mode::Cio => (1, DockLayout::Cio { shards: nodes.div_ceil(64) }),
        };
        let topo = Topology::build(&TopologyConfig::new(nodes, 64, ifs).with_profile(profile.clone()))?;
        let w = dock_like_workflow(n_stage1, &DockParams { layout, ..params.clone() });
        let settings = RunSettings { mode, dispatch_rate: SWEEP_DISPATCH_RATE, ..Default::default() };
        let r = run_with(&topo, &w, &ClusterStores::in_memory(&topo, true), &settings)?;
        Ok(DockRun { mode, makespan_us: r.makespan_us(), stages: stage_breakdown(&r) })
    };
    Ok(DockComparison { gfs: run(Mode::GfsDirect)?, cio: run(Mode::Cio)? })
}

// ---------------------------------------------------------------- audits

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DurabilityAudit {
    pub outputs: usize,
    pub exactly_once: usize,
    pub missing: Vec<String>,
    pub duplicated: Vec<String>,
    pub corrupt: Vec<String>,
}

impl DurabilityAudit {
    pub fn ok(&self) -> bool {
        self.exactly_once == self.outputs && self.corrupt.is_empty()
    }
}

/// Every `.cioa` object on GFS with its members and their CRCs.
pub fn gfs_archives(gfs: &dyn Store) -> ExpResult<BTreeMap<String, Vec<(String, u32)>>> {
    let mut out = BTreeMap::new();
    for obj in gfs.objects() {
        if !obj.name.ends_with(".cioa") {
            continue;
        }
        let reader = open_archive(StoreSource { store: gfs, name: obj.name.clone() })?;
        let mut members = Vec::new();
        for e in reader.entries() {
            let bytes = reader.extract_member(&e.path)?;
            members.push((e.path.clone(), crc32fast::hash(&bytes)));
        }
        out.insert(obj.name.clone(), members);
    }
    Ok(out)
}

/// Checks that each task output of a materialized CIO run sits in exactly
/// one GFS archive with the bytes it was generated with.
pub fn audit_durability(w: &Workload, gfs: &dyn Store, seed: u64) -> ExpResult<DurabilityAudit> {
    let mut seen: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for (_, members) in gfs_archives(gfs)? {
        for (path, crc) in members {
            seen.entry(path).or_default().push(crc);
        }
    }
    let mut a = DurabilityAudit::default();
    for t in &w.tasks {
        for o in &t.outputs {
            a.outputs += 1;
            let expected = crc32fast::hash(&content_for(seed, &o.name, o.size));
            match seen.get(&o.name).map(Vec::as_slice) {
                None | Some([]) => a.missing.push(o.name.clone()),
                Some([crc]) => {
                    if *crc == expected {
                        a.exactly_once += 1;
                    } else {
                        a.corrupt.push(o.name.clone());
                    }
                }
                Some(_) => a.duplicated.push(o.name.clone()),
            }
        }
    }
    Ok(a)
}

/// What emulation and simulation must agree on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFingerprint {
    pub plan: Vec<String>,
    /// Flush members per archive, in archive order.
    pub flushes: BTreeMap<String, Vec<String>>,
    /// Member CRCs per archive.
    pub archives: BTreeMap<String, Vec<(String, u32)>>,
}

pub fn fingerprint(report: &RunReport, gfs: &dyn Store) -> ExpResult<RunFingerprint> {
    let archives = gfs_archives(gfs)?;
    let flushes = archives.iter().map(|(k, v)| (k.clone(), v.iter().map(|m| m.0.clone()).collect())).collect();
    let on_gfs: BTreeSet<&String> = archives.keys().collect();
    let logged: BTreeSet<&String> = report.flushes.iter().map(|f| &f.archive).collect();
    if on_gfs != logged {
        return Err(ExperimentError::Check("flush log and GFS archives disagree".into()));
    }
    Ok(RunFingerprint { plan: report.plan.describe(), flushes, archives })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_topology_has_exact_cores() {
        let p = CalibrationProfile::bgp_2008();
        for procs in [1, 63, 64, 256, 4096, 5000] {
            for mode in [Mode::Cio, Mode::GfsDirect] {
                let t = Topology::build(&sweep_topology(procs, 1, mode, &p)).unwrap();
                assert_eq!(t.executors().len() as u32, procs, "{procs} {mode:?}");
            }
        }
        let t = Topology::build(&sweep_topology(1024, 4, Mode::Cio, &p)).unwrap();
        assert_eq!(t.executors().len() as u32 * t.cores_per_node(), 1024);
    }

    #[test]
    fn striping_small() {
        let p = CalibrationProfile::bgp_2008();
        let one = striping_point(1, 2, 4 * MB, MB, &p).unwrap();
        let two = striping_point(2, 2, 4 * MB, MB, &p).unwrap();
        assert!(two.mbps() > one.mbps());
        assert!((one.mbps() - p.torus_mbps).abs() / p.torus_mbps < 0.01);
    }

    #[test]
    fn distribution_small() {
        let c = distribution_experiment(128, 10 * MB, &CalibrationProfile::bgp_2008()).unwrap();
        assert_eq!(c.naive.gfs_reads, 128);
        assert_eq!(c.tree.gfs_reads, 1);
        assert_eq!(c.tree.copies, 127);
        assert!(c.ratio() > 1.0);
    }
}
