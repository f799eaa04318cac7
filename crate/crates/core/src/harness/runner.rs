//! The scenario event loop. Simulation and emulation share it: both run
//! in simulated time over a [`Network`]; emulation swaps in
//! directory-backed stores and moves output materialization and archive
//! packing onto a worker pool, joining each job at the event that needs
//! its result.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use super::config::{ConfigError, Mode, ScenarioConfig};
use super::dispatch::{ideal_makespan, Assignment, Dispatch, Dispatcher};
use super::metrics::{OutputRecord, RunReport, TaskRecord};
use super::pool::{Job, Pool};
use crate::cluster::{NodeId, Topology};
use crate::collect::{
    baseline_dir, baseline_path, flush_to_gfs, should_flush, stage_task_output, synchronous_baseline_write,
    ArchiveLocation, CollectError, CollectorPolicy, CollectorState, FlushReason, FlushSnapshot, CACHE_DIR,
    LFS_OUT_DIR, STAGING_DIR,
};
use crate::distribute::{
    plan_placement, spanning_tree_schedule, AccessClass, BroadcastExec, DistError, Method,
    PlacementPlan, PlacementPolicy, Target,
};
use crate::simnet::{EventKind, FlowId, NetError, Network, SimTime};
use crate::store::{flat_name, join, ClusterStores, Content, Store, StoreError, Tier};
use crate::workload::{content_for, ReadyTracker, Workload};

const TICK: SimTime = SimTime(1_000_000);
/// Where placed inputs live on LFS and IFS stores.
pub const INPUT_DIR: &str = "in";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Placement(#[from] DistError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("run stalled with {0} tasks unfinished")]
    Stalled(usize),
}

/// Everything the event loop needs besides topology, workload and stores.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub mode: Mode,
    pub dispatch_rate: f64,
    pub seed: u64,
    pub placement: PlacementPolicy,
    pub collector: CollectorPolicy,
    /// Real bytes in the stores; inputs are read back when set.
    pub materialize: bool,
    pub flow_log: bool,
    /// Worker threads; 0 runs every job inline.
    pub workers: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            mode: Mode::Cio,
            dispatch_rate: 1000.0,
            seed: 0,
            placement: PlacementPolicy::default(),
            collector: CollectorPolicy::default(),
            materialize: false,
            flow_log: false,
            workers: 0,
        }
    }
}

impl RunSettings {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        RunSettings {
            mode: cfg.mode.kind,
            dispatch_rate: cfg.mode.dispatch_rate,
            seed: cfg.mode.seed,
            placement: cfg.placement.clone(),
            collector: cfg.collector.clone(),
            materialize: cfg.output.materialize,
            flow_log: cfg.output.flow_log,
            workers: 0,
        }
    }
}

/// Simulates a scenario with in-memory stores.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let topo = cfg.build_topology()?;
    let workload = cfg.load_workload(&topo)?;
    let settings = RunSettings::from_config(cfg);
    let stores = ClusterStores::in_memory(&topo, !settings.materialize);
    run_with(&topo, &workload, &stores, &settings)
}

/// Emulates a scenario over directory-backed stores under `store_root`.
pub fn emulate_scenario(cfg: &ScenarioConfig, store_root: &std::path::Path) -> Result<(RunReport, ClusterStores), RunError> {
    cfg.validate()?;
    let topo = cfg.build_topology()?;
    let workload = cfg.load_workload(&topo)?;
    let mut settings = RunSettings::from_config(cfg);
    settings.materialize = true;
    settings.workers = cfg.output.workers.max(1);
    let stores = ClusterStores::on_disk(store_root, &topo)?;
    let report = run_with(&topo, &workload, &stores, &settings)?;
    Ok((report, stores))
}

/// Content of a generated object.
pub fn object_content(materialize: bool, seed: u64, name: &str, size: u64) -> Content {
    if materialize {
        Content::Bytes(content_for(seed, name, size))
    } else {
        Content::Sized(size)
    }
}

pub fn run_with(
    topology: &Topology,
    workload: &Workload,
    stores: &ClusterStores,
    settings: &RunSettings,
) -> Result<RunReport, RunError> {
    if settings.mode == Mode::Cio && !topology.has_ifs() {
        return Err(ConfigError::Invalid("mode cio needs ifs_per_pset >= 1".into()).into());
    }
    let pool = (settings.workers > 0).then(|| Pool::new(settings.workers));
    let mut run = Runner::new(topology, workload, stores, settings, pool.as_ref())?;
    run.start()?;
    run.event_loop()?;
    run.finish()
}

#[derive(Debug)]
enum Action {
    DispatchTimer,
    Tick,
    Input { task: usize, src: NodeId, objects: Vec<String> },
    ComputeDone { task: usize },
    LfsWrite { task: usize },
    ToIfs { task: usize },
    BaselineCreate { task: usize, out: usize },
    BaselineWrite { task: usize, out: usize },
    Fetch { key: NodeId, tier: Tier, object: String },
    FlushCreate { server: NodeId, seq: u32 },
    FlushWrite { server: NodeId, seq: u32 },
}

enum Source {
    Local,
    From(NodeId),
    /// Waits for the object to arrive at the given node.
    Wait(NodeId),
}

enum Avail {
    Present,
    Pending(Vec<usize>),
}

/// Where a produced object is.
#[derive(Debug, Clone, Copy)]
enum Loc {
    Ifs(NodeId),
    Gfs,
}

struct TaskState {
    node: NodeId,
    core: u32,
    start: SimTime,
    waiting: u32,
    lfs_job: Option<Job<Result<(), StoreError>>>,
    retried: bool,
}

type FlushJob = Job<Result<Vec<(String, ArchiveLocation)>, CollectError>>;

struct Collector {
    state: CollectorState,
    blocked: Vec<usize>,
    flushes: BTreeMap<u32, (FlushSnapshot, FlushJob)>,
}

struct Runner<'a> {
    topo: &'a Topology,
    w: &'a Workload,
    stores: &'a ClusterStores,
    s: &'a RunSettings,
    pool: Option<&'a Pool>,
    net: Network,
    disp: Dispatcher,
    tracker: ReadyTracker,
    actions: HashMap<u64, Action>,
    tasks: Vec<Option<TaskState>>,
    plan: PlacementPlan,
    plan_idx: HashMap<String, usize>,
    writer: HashMap<String, usize>,
    loc: HashMap<String, Loc>,
    registry: HashMap<String, ArchiveLocation>,
    avail: HashMap<(NodeId, String), Avail>,
    collectors: BTreeMap<NodeId, Collector>,
    broadcasts: Vec<(usize, BroadcastExec)>,
    remaining: usize,
    dispatch_timer: Option<SimTime>,
    tick_pending: bool,
    first_start: Option<SimTime>,
    last_end: SimTime,
    records: Vec<TaskRecord>,
    gfs_creates: u64,
}

impl<'a> Runner<'a> {
    fn new(
        topo: &'a Topology,
        w: &'a Workload,
        stores: &'a ClusterStores,
        s: &'a RunSettings,
        pool: Option<&'a Pool>,
    ) -> Result<Self, RunError> {
        let mut net = Network::for_topology(topo);
        if s.flow_log {
            net.enable_log();
        }
        let (tracker, initial) = ReadyTracker::new(w);
        let mut disp = Dispatcher::new(topo, s.dispatch_rate);
        for i in initial {
            disp.push_ready(w.tasks[i].id, i);
        }
        let plan = match s.mode {
            Mode::Cio => plan_placement(w, topo, &s.placement)?,
            Mode::GfsDirect => PlacementPlan::default(),
        };
        let plan_idx = plan.placements.iter().enumerate().map(|(i, p)| (p.object.clone(), i)).collect();
        let writer = w.writers().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let collectors = match s.mode {
            Mode::Cio => topo
                .ifs_servers()
                .iter()
                .map(|&n| {
                    let c = Collector {
                        state: CollectorState::new(n, SimTime::ZERO),
                        blocked: Vec::new(),
                        flushes: BTreeMap::new(),
                    };
                    (n, c)
                })
                .collect(),
            Mode::GfsDirect => BTreeMap::new(),
        };
        Ok(Runner {
            topo,
            w,
            stores,
            s,
            pool,
            net,
            disp,
            tracker,
            actions: HashMap::new(),
            tasks: (0..w.tasks.len()).map(|_| None).collect(),
            plan,
            plan_idx,
            writer,
            loc: HashMap::new(),
            registry: HashMap::new(),
            avail: HashMap::new(),
            collectors,
            broadcasts: Vec::new(),
            remaining: w.tasks.len(),
            dispatch_timer: None,
            tick_pending: false,
            first_start: None,
            last_end: SimTime::ZERO,
            records: Vec::with_capacity(w.tasks.len()),
            gfs_creates: 0,
        })
    }

    fn now(&self) -> SimTime {
        self.net.now()
    }

    fn gfs(&self) -> NodeId {
        self.topo.gfs_node()
    }

    fn size_of(&self, object: &str) -> u64 {
        if let Some(&s) = self.w.manifest.get(object) {
            return s;
        }
        let t = &self.w.tasks[self.writer[object]];
        t.outputs.iter().find(|o| o.name == object).map_or(0, |o| o.size)
    }

    fn flow(&mut self, src: NodeId, dst: NodeId, bytes: u64, action: Action) -> Result<(), RunError> {
        let f = self.net.submit_flow(src, dst, bytes, self.now())?;
        self.actions.insert(f.0, action);
        Ok(())
    }

    fn create(&mut self, node: NodeId, dir: &str, action: Action) -> Result<(), RunError> {
        let e = self.net.submit_gfs_create(node, dir, self.now())?;
        self.actions.insert(e.0, action);
        Ok(())
    }

    fn timer(&mut self, at: SimTime, action: Action) -> Result<(), RunError> {
        let e = self.net.schedule_timer(at, 0)?;
        self.actions.insert(e.0, action);
        Ok(())
    }

    fn start(&mut self) -> Result<(), RunError> {
        for (name, &size) in &self.w.manifest {
            if !self.stores.gfs.exists(name) {
                self.stores.gfs.put(name, object_content(self.s.materialize, self.s.seed, name, size))?;
            }
        }
        let broadcasts: Vec<usize> = self
            .plan
            .placements
            .iter()
            .enumerate()
            .filter(|(_, p)| p.method == Method::Broadcast)
            .map(|(i, _)| i)
            .collect();
        for i in broadcasts {
            let p = self.plan.placements[i].clone();
            let Target::Nodes(nodes) = &p.target else { continue };
            for &n in nodes {
                self.avail.insert((n, p.object.clone()), Avail::Pending(Vec::new()));
            }
            if nodes.len() == 1 {
                let action = Action::Fetch { key: nodes[0], tier: p.tier, object: p.object.clone() };
                self.flow(self.gfs(), nodes[0], p.size, action)?;
            } else if nodes.len() > 1 {
                let sched = spanning_tree_schedule(nodes[0], &nodes[1..])?;
                let (gfs, now) = (self.gfs(), self.now());
                let exec = BroadcastExec::start(&mut self.net, gfs, &p.object, p.size, &sched, now)?;
                self.broadcasts.push((i, exec));
            }
        }
        if !self.collectors.is_empty() && self.remaining > 0 {
            self.tick_pending = true;
            self.timer(self.now() + TICK, Action::Tick)?;
        }
        self.try_dispatch()
    }

    fn event_loop(&mut self) -> Result<(), RunError> {
        while let Some(t) = self.net.next_event_time() {
            for ev in self.net.advance_to(t) {
                let action = self.actions.remove(&ev.id.0);
                match (action, ev.kind) {
                    (Some(a), EventKind::CreateCompleted { .. }) => {
                        self.gfs_creates += 1;
                        self.handle(a)?;
                    }
                    (Some(a), _) => self.handle(a)?,
                    (None, EventKind::FlowCompleted { flow, .. }) => self.broadcast_progress(flow)?,
                    (None, _) => {}
                }
            }
            self.try_dispatch()?;
        }
        Ok(())
    }

    fn handle(&mut self, action: Action) -> Result<(), RunError> {
        match action {
            Action::DispatchTimer => {
                self.dispatch_timer = None;
                Ok(())
            }
            Action::Tick => {
                self.tick_pending = false;
                let servers: Vec<NodeId> = self.collectors.keys().copied().collect();
                for s in servers {
                    self.poll(s)?;
                }
                if self.remaining > 0 {
                    self.tick_pending = true;
                    self.timer(self.now() + TICK, Action::Tick)?;
                }
                Ok(())
            }
            Action::Input { task, src, objects } => self.input_arrived(task, src, &objects),
            Action::ComputeDone { task } => self.compute_done(task),
            Action::LfsWrite { task } => self.lfs_written(task),
            Action::ToIfs { task } => self.at_ifs(task),
            Action::BaselineCreate { task, out } => {
                let node = self.task(task).node;
                let size = self.w.tasks[task].outputs[out].size;
                self.flow(node, self.gfs(), size, Action::BaselineWrite { task, out })
            }
            Action::BaselineWrite { task, out } => self.baseline_written(task, out),
            Action::Fetch { key, tier, object } => self.fetched(key, tier, &object),
            Action::FlushCreate { server, seq } => {
                let size = self.collectors[&server].flushes[&seq].0.archive_size();
                self.flow(server, self.gfs(), size, Action::FlushWrite { server, seq })
            }
            Action::FlushWrite { server, seq } => self.flush_written(server, seq),
        }
    }

    fn task(&self, idx: usize) -> &TaskState {
        self.tasks[idx].as_ref().expect("task dispatched")
    }

    fn task_mut(&mut self, idx: usize) -> &mut TaskState {
        self.tasks[idx].as_mut().expect("task dispatched")
    }

    fn try_dispatch(&mut self) -> Result<(), RunError> {
        loop {
            let w = self.w;
            match self.disp.next(self.now(), |i| w.tasks[i].pin) {
                Dispatch::Assigned(a) => self.dispatched(a)?,
                Dispatch::WaitUntil(t) => {
                    if self.dispatch_timer != Some(t) {
                        self.dispatch_timer = Some(t);
                        self.timer(t, Action::DispatchTimer)?;
                    }
                    return Ok(());
                }
                Dispatch::Idle => return Ok(()),
            }
        }
    }

    fn dispatched(&mut self, a: Assignment) -> Result<(), RunError> {
        let now = self.now();
        self.first_start.get_or_insert(now);
        self.tasks[a.task] =
            Some(TaskState { node: a.node, core: a.core, start: now, waiting: 0, lfs_job: None, retried: false });
        let inputs: BTreeSet<String> = self.w.tasks[a.task].inputs.iter().cloned().collect();
        let mut by_src: BTreeMap<NodeId, Vec<String>> = BTreeMap::new();
        let mut waiting = 0;
        for o in inputs {
            match self.resolve(&o, a.node)? {
                Source::Local => {}
                Source::From(src) => by_src.entry(src).or_default().push(o),
                Source::Wait(key) => {
                    if let Some(Avail::Pending(list)) = self.avail.get_mut(&(key, o)) {
                        list.push(a.task);
                    }
                    waiting += 1;
                }
            }
        }
        waiting += by_src.len() as u32;
        self.task_mut(a.task).waiting = waiting;
        for (src, objects) in by_src {
            let bytes = objects.iter().map(|o| self.size_of(o)).sum();
            self.flow(src, a.node, bytes, Action::Input { task: a.task, src, objects })?;
        }
        if waiting == 0 {
            self.start_compute(a.task)?;
        }
        Ok(())
    }

    fn resolve(&mut self, object: &str, node: NodeId) -> Result<Source, RunError> {
        let gfs = self.gfs();
        if self.s.mode == Mode::GfsDirect {
            return Ok(Source::From(gfs));
        }
        if matches!(self.avail.get(&(node, object.to_string())), Some(Avail::Present)) {
            return Ok(Source::Local);
        }
        let server = self.topo.ifs_server_for(node).ok();
        if let Some(&pi) = self.plan_idx.get(object) {
            let p = &self.plan.placements[pi];
            let (method, tier, class) = (p.method, p.tier, p.access.class);
            return match (method, server) {
                (Method::Broadcast, _) if tier == Tier::Lfs => Ok(self.wait_or_local(node, object)),
                (Method::Broadcast, Some(s)) if self.avail.contains_key(&(s, object.to_string())) => {
                    Ok(self.wait_or_from(s, object))
                }
                (Method::DirectRead, _) if class == AccessClass::ReadFew => Ok(Source::From(gfs)),
                (_, Some(s)) => self.fetch_once(s, object),
                (_, None) => Ok(Source::From(gfs)),
            };
        }
        match self.loc.get(object).copied() {
            Some(Loc::Ifs(x)) if self.ifs_holds(x, object) => Ok(Source::From(x)),
            _ => Ok(Source::From(gfs)),
        }
    }

    fn wait_or_local(&self, node: NodeId, object: &str) -> Source {
        match self.avail.get(&(node, object.to_string())) {
            Some(Avail::Present) => Source::Local,
            _ => Source::Wait(node),
        }
    }

    fn wait_or_from(&self, key: NodeId, object: &str) -> Source {
        match self.avail.get(&(key, object.to_string())) {
            Some(Avail::Present) => Source::From(key),
            _ => Source::Wait(key),
        }
    }

    fn fetch_once(&mut self, server: NodeId, object: &str) -> Result<Source, RunError> {
        let key = (server, object.to_string());
        if self.avail.contains_key(&key) {
            return Ok(self.wait_or_from(server, object));
        }
        self.avail.insert(key, Avail::Pending(Vec::new()));
        let size = self.size_of(object);
        let action = Action::Fetch { key: server, tier: Tier::Ifs, object: object.to_string() };
        self.flow(self.gfs(), server, size, action)?;
        Ok(Source::Wait(server))
    }

    fn ifs_holds(&self, server: NodeId, object: &str) -> bool {
        let ifs = self.stores.ifs(server);
        let flat = flat_name(object);
        ifs.exists(&join(STAGING_DIR, &flat)) || ifs.exists(&join(CACHE_DIR, &flat))
    }

    /// Stores a delivered input copy and wakes the tasks waiting for it.
    fn deliver(&mut self, key: NodeId, tier: Tier, object: &str) -> Result<(), RunError> {
        let store: &Arc<dyn Store> = match tier {
            Tier::Ifs => self.stores.ifs(key),
            _ => self.stores.lfs(key),
        };
        let name = join(INPUT_DIR, object);
        if !store.exists(&name) {
            let content = self.read_gfs_object(object)?;
            if let Err(StoreError::Full { needed, .. }) = store.put(&name, content.clone()) {
                if let Some(c) = self.collectors.get_mut(&key) {
                    c.state.evict_cache(store.as_ref(), needed)?;
                }
                store.put(&name, content)?;
            }
        }
        let waiters = match self.avail.insert((key, object.to_string()), Avail::Present) {
            Some(Avail::Pending(list)) => list,
            _ => Vec::new(),
        };
        let size = self.size_of(object);
        for t in waiters {
            let node = self.task(t).node;
            if node == key {
                self.input_done(t)?;
            } else {
                self.flow(key, node, size, Action::Input { task: t, src: key, objects: vec![object.to_string()] })?;
            }
        }
        Ok(())
    }

    fn fetched(&mut self, key: NodeId, tier: Tier, object: &str) -> Result<(), RunError> {
        self.deliver(key, tier, object)
    }

    fn broadcast_progress(&mut self, flow: FlowId) -> Result<(), RunError> {
        let Some(b) = self.broadcasts.iter().position(|(_, e)| e.owns(flow)) else { return Ok(()) };
        let delivered = self.broadcasts[b].1.on_flow_complete(&mut self.net, flow)?;
        if let Some(node) = delivered {
            let p = &self.plan.placements[self.broadcasts[b].0];
            let (tier, object) = (p.tier, p.object.clone());
            self.deliver(node, tier, &object)?;
        }
        Ok(())
    }

    fn read_gfs_object(&self, object: &str) -> Result<Content, RunError> {
        if !self.s.materialize {
            return Ok(Content::Sized(self.size_of(object)));
        }
        Ok(self.stores.gfs.get(object)?)
    }

    /// Reads an input from its source store to check it is really there.
    fn read_input(&self, src: NodeId, object: &str) -> Result<Content, RunError> {
        if !self.s.materialize {
            return Ok(Content::Sized(self.size_of(object)));
        }
        let size = self.size_of(object);
        if self.w.manifest.contains_key(object) {
            if src == self.gfs() {
                return self.read_gfs_object(object);
            }
            let store = self.stores.ifs.get(&src).unwrap_or_else(|| self.stores.lfs(src));
            return Ok(store.get(&join(INPUT_DIR, object))?);
        }
        if self.s.mode == Mode::GfsDirect {
            let producer = self.tasks[self.writer[object]].as_ref().expect("producer ran").node;
            return Ok(self.stores.gfs.get(&baseline_path(producer, object))?);
        }
        if let Some(ifs) = self.stores.ifs.get(&src) {
            let flat = flat_name(object);
            for dir in [STAGING_DIR, CACHE_DIR] {
                if let Ok(c) = ifs.get(&join(dir, &flat)) {
                    return Ok(c);
                }
            }
        }
        let at = self.registry.get(object).ok_or_else(|| StoreError::NotFound(object.to_string()))?;
        let bytes = self.stores.gfs.read_range(&at.archive, at.offset, size)?;
        Ok(Content::Bytes(bytes))
    }

    fn input_arrived(&mut self, task: usize, src: NodeId, objects: &[String]) -> Result<(), RunError> {
        let node = self.task(task).node;
        for o in objects {
            let content = self.read_input(src, o)?;
            if content.len() != self.size_of(o) {
                return Err(StoreError::Corrupt(o.clone()).into());
            }
            // Small manifest inputs stay on the LFS for later tasks.
            let keep = self.s.mode == Mode::Cio
                && self.plan_idx.get(o).is_some_and(|&i| self.plan.placements[i].method == Method::DirectRead);
            if keep
                && !matches!(self.avail.get(&(node, o.clone())), Some(Avail::Present))
                && self.stores.lfs(node).put(&join(INPUT_DIR, o), content).is_ok()
            {
                self.avail.insert((node, o.clone()), Avail::Present);
            }
        }
        self.input_done(task)
    }

    fn input_done(&mut self, task: usize) -> Result<(), RunError> {
        let t = self.task_mut(task);
        t.waiting -= 1;
        if t.waiting == 0 {
            self.start_compute(task)?;
        }
        Ok(())
    }

    fn start_compute(&mut self, task: usize) -> Result<(), RunError> {
        let spec = &self.w.tasks[task];
        let lfs = Arc::clone(self.stores.lfs(self.task(task).node));
        let outputs = spec.outputs.clone();
        let (materialize, seed) = (self.s.materialize, self.s.seed);
        let job = Job::start(self.pool, move || {
            for o in &outputs {
                lfs.put(&join(LFS_OUT_DIR, &o.name), object_content(materialize, seed, &o.name, o.size))?;
            }
            Ok(())
        });
        self.task_mut(task).lfs_job = Some(job);
        let at = self.now() + spec.compute;
        self.timer(at, Action::ComputeDone { task })
    }

    fn compute_done(&mut self, task: usize) -> Result<(), RunError> {
        let node = self.task(task).node;
        let bytes = self.w.tasks[task].output_bytes();
        self.flow(node, node, bytes, Action::LfsWrite { task })
    }

    fn lfs_written(&mut self, task: usize) -> Result<(), RunError> {
        if let Some(job) = self.task_mut(task).lfs_job.take() {
            job.wait()?;
        }
        let node = self.task(task).node;
        if self.w.tasks[task].outputs.is_empty() {
            return self.task_end(task);
        }
        match self.s.mode {
            Mode::Cio => {
                let server = self.topo.ifs_server_for(node).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let bytes = self.w.tasks[task].output_bytes();
                self.flow(node, server, bytes, Action::ToIfs { task })
            }
            Mode::GfsDirect => self.create(node, &baseline_dir(node), Action::BaselineCreate { task, out: 0 }),
        }
    }

    fn baseline_written(&mut self, task: usize, out: usize) -> Result<(), RunError> {
        let node = self.task(task).node;
        let spec = &self.w.tasks[task].outputs[out];
        synchronous_baseline_write(
            node,
            std::slice::from_ref(spec),
            self.stores.lfs(node).as_ref(),
            self.stores.gfs.as_ref(),
        )?;
        self.loc.insert(spec.name.clone(), Loc::Gfs);
        if out + 1 < self.w.tasks[task].outputs.len() {
            self.create(node, &baseline_dir(node), Action::BaselineCreate { task, out: out + 1 })
        } else {
            self.task_end(task)
        }
    }

    fn at_ifs(&mut self, task: usize) -> Result<(), RunError> {
        let node = self.task(task).node;
        let server = self.topo.ifs_server_for(node).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let lfs = Arc::clone(self.stores.lfs(node));
        let ifs = Arc::clone(self.stores.ifs(server));
        let pending: Vec<_> = self.w.tasks[task]
            .outputs
            .iter()
            .filter(|o| lfs.exists(&join(LFS_OUT_DIR, &o.name)))
            .cloned()
            .collect();
        let collector = self.collectors.get_mut(&server).expect("collector per IFS server");
        match stage_task_output(&pending, lfs.as_ref(), ifs.as_ref(), &mut collector.state) {
            Ok(_) => {
                for o in &self.w.tasks[task].outputs {
                    self.loc.insert(o.name.clone(), Loc::Ifs(server));
                }
                self.task_end(task)?;
                self.poll(server)
            }
            Err(StoreError::Full { .. }) if !self.task(task).retried => {
                self.task_mut(task).retried = true;
                let c = self.collectors.get_mut(&server).expect("collector");
                c.blocked.push(task);
                if c.state.in_flight() == 0 {
                    if c.state.staged().is_empty() {
                        return Err(StoreError::Full { needed: pending.iter().map(|o| o.size).sum(), free: ifs.free_space() }.into());
                    }
                    self.start_flush(server, FlushReason::Full)?;
                }
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    fn task_end(&mut self, task: usize) -> Result<(), RunError> {
        let now = self.now();
        let t = self.tasks[task].as_ref().expect("task dispatched");
        let spec = &self.w.tasks[task];
        self.records.push(TaskRecord {
            task_id: spec.id,
            node: t.node,
            start_us: t.start.0,
            end_us: now.0,
            stage: spec.stage,
        });
        self.last_end = self.last_end.max(now);
        self.disp.release(t.core);
        self.remaining -= 1;
        for r in self.tracker.complete(task) {
            self.disp.push_ready(self.w.tasks[r].id, r);
        }
        if self.remaining == 0 {
            self.drain()?;
        }
        Ok(())
    }

    fn drain(&mut self) -> Result<(), RunError> {
        let servers: Vec<NodeId> = self.collectors.keys().copied().collect();
        for s in servers {
            if !self.collectors[&s].state.staged().is_empty() {
                self.start_flush(s, FlushReason::Drain)?;
            }
        }
        Ok(())
    }

    fn poll(&mut self, server: NodeId) -> Result<(), RunError> {
        let c = &self.collectors[&server];
        if c.state.in_flight() > 0 || c.state.staged().is_empty() {
            return Ok(());
        }
        let free = self.stores.ifs(server).free_space() + c.state.cache_bytes();
        let d = should_flush(&c.state, self.now(), free, &self.s.collector);
        if d.flush {
            self.start_flush(server, d.reason)?;
        }
        Ok(())
    }

    fn start_flush(&mut self, server: NodeId, reason: FlushReason) -> Result<(), RunError> {
        let now = self.now();
        let c = self.collectors.get_mut(&server).expect("collector");
        let Some(snap) = c.state.begin_flush(reason, now) else { return Ok(()) };
        let ifs = Arc::clone(self.stores.ifs(server));
        let gfs = Arc::clone(&self.stores.gfs);
        let policy = self.s.collector.clone();
        let job_snap = snap.clone();
        let job = Job::start(self.pool, move || flush_to_gfs(&job_snap, ifs.as_ref(), gfs.as_ref(), &policy));
        let (seq, dir) = (snap.seq, snap.gfs_dir());
        c.flushes.insert(seq, (snap, job));
        self.create(server, &dir, Action::FlushCreate { server, seq })
    }

    fn flush_written(&mut self, server: NodeId, seq: u32) -> Result<(), RunError> {
        let now = self.now();
        let ifs = Arc::clone(self.stores.ifs(server));
        let c = self.collectors.get_mut(&server).expect("collector");
        let (snap, job) = c.flushes.remove(&seq).expect("flush in flight");
        let locations = match job.wait() {
            Ok(l) => l,
            Err(e) => {
                c.state.abort_flush(snap);
                return Err(e.into());
            }
        };
        c.state.finish_flush(&snap, ifs.as_ref(), &self.s.collector, now)?;
        let blocked = std::mem::take(&mut c.blocked);
        for (name, at) in locations {
            self.registry.insert(name, at);
        }
        self.last_end = self.last_end.max(now);
        for t in blocked {
            self.at_ifs(t)?;
        }
        if self.remaining == 0 {
            if !self.collectors[&server].state.staged().is_empty() {
                self.start_flush(server, FlushReason::Drain)?;
            }
        } else {
            self.poll(server)?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunReport, RunError> {
        if self.remaining > 0 {
            return Err(RunError::Stalled(self.remaining));
        }
        let mut outputs = Vec::new();
        for (i, t) in self.w.tasks.iter().enumerate() {
            for o in &t.outputs {
                let (gfs_object, offset) = match self.s.mode {
                    Mode::GfsDirect => {
                        (baseline_path(self.tasks[i].as_ref().expect("ran").node, &o.name), 0)
                    }
                    Mode::Cio => match self.registry.get(&o.name) {
                        Some(at) => (at.archive.clone(), at.offset),
                        None => return Err(StoreError::NotFound(o.name.clone()).into()),
                    },
                };
                outputs.push(OutputRecord { object: o.name.clone(), task_id: t.id, bytes: o.size, gfs_object, offset });
            }
        }
        let mut flushes: Vec<_> = self.collectors.values().flat_map(|c| c.state.history.iter().cloned()).collect();
        flushes.sort_by(|a, b| (a.time_us, a.ifs_node, &a.archive).cmp(&(b.time_us, b.ifs_node, &b.archive)));
        let first = self.first_start.unwrap_or(SimTime::ZERO);
        Ok(RunReport {
            mode: self.s.mode,
            executors: self.topo.executors().len() as u32,
            cores: self.disp.total_cores(),
            first_start_us: first.0,
            end_us: self.last_end.max(first).0,
            ideal_makespan_us: ideal_makespan(self.w, self.topo, self.s.dispatch_rate).0,
            payload_bytes: self.w.total_output_bytes(),
            gfs_creates: self.gfs_creates,
            tasks: std::mem::take(&mut self.records),
            flows: self.net.take_log(),
            flushes,
            outputs,
            bytes_by_class: self.net.bytes_by_class().clone(),
            plan: self.plan.clone(),
        })
    }
}
